#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sbvae/model.hpp"
#include "sbvae/numerics.hpp"

namespace sbvae {

// ---- Adam --------------------------------------------------------------------

struct AdamConfig {
  double alpha = 3e-4;
  double beta1 = 0.95;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::uint64_t t = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

AdamState adam_init(std::span<const std::span<const double>> blocks, AdamConfig config = {});
AdamState adam_init(const ModelParams& params, AdamConfig config = {});

// One descent step on a loss with gradient `grads`. `names` labels blocks in
// the diagnostic raised for a non-finite gradient and may be empty.
void adam_step(AdamState& state, std::span<const std::span<double>> params,
               std::span<const std::span<const double>> grads,
               std::span<const std::string> names = {});
void adam_step(AdamState& state, ModelParams& params, const ModelParams& loss_grad);

// ---- Data --------------------------------------------------------------------

struct DatasetSplit {
  Matrix images;
  std::vector<int> labels;       // empty when the source had no labels
  std::vector<bool> label_mask;  // which labels the objective may see

  std::size_t size() const { return static_cast<std::size_t>(images.rows()); }
  bool has_labels() const { return !labels.empty(); }
  std::size_t visible_labels() const;
  // Labels with hidden entries replaced by kUnlabeled.
  std::vector<int> visible() const;
};

struct DatasetSplits {
  DatasetSplit train;
  DatasetSplit valid;
  DatasetSplit test;
};

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

// Rank-3 unsigned-byte IDX file -> N × (rows·cols) matrix scaled by 1/255.
Matrix load_idx_images(const std::string& path);
Matrix load_idx_images(std::istream& in);
// Rank-1 unsigned-byte IDX file -> labels.
std::vector<int> load_idx_labels(const std::string& path);
std::vector<int> load_idx_labels(std::istream& in);

DatasetSplits make_splits(const Matrix& images, std::span<const int> labels,
                          std::array<std::size_t, 3> sizes, Rng& rng);
DatasetSplit remove_labels(const DatasetSplit& split, double keep_fraction, Rng& rng);
// Threshold at 0.5.
Matrix binarize(const Matrix& x);

// Fisher-Yates permutation of 0..n-1 driven by `rng`.
std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng);
Matrix gather_rows(const Matrix& x, std::span<const std::size_t> rows);

// ---- Metrics -----------------------------------------------------------------

struct MetricRecord {
  std::size_t epoch;
  std::string split;
  std::string metric;
  double value;
};

struct MetricsHistory {
  std::vector<MetricRecord> records;

  void add(std::size_t epoch, std::string split, std::string metric, double value);
  std::optional<double> get(std::size_t epoch, const std::string& split,
                            const std::string& metric) const;
  // Values for one (split, metric) pair in epoch order.
  std::vector<double> series(const std::string& split, const std::string& metric) const;
  bool empty() const { return records.empty(); }
};

void write_metrics_csv(std::ostream& out, const MetricsHistory& history);
void write_metrics_csv(const std::string& path, const MetricsHistory& history);

struct SplitMetrics {
  double elbo = 0.0;
  double reconstruction_error = 0.0;  // negative expected log-likelihood
  double kl = 0.0;
  std::optional<double> class_error;  // semi-supervised only
};

// Full pass in chunks. Semi-supervised models are scored with the unlabeled
// bound, which lower-bounds log p(x) after summing out y.
SplitMetrics evaluate_split(const ModelSpec& spec, const ModelParams& params,
                            const DatasetSplit& split, Rng& rng, std::size_t chunk = 500);

// ---- Training ----------------------------------------------------------------

inline constexpr double kDefaultSupervisedWeight = 0.375;

struct TrainConfig {
  std::size_t batch_size = 100;
  std::size_t epochs = 100;
  std::size_t patience = 30;
  std::uint64_t seed = 0;
  double supervised_weight = kDefaultSupervisedWeight;
  AdamConfig adam;
  bool evaluate_test = true;
  // Replaces the early-stopping metric (epoch, computed value) -> value.
  std::function<double(std::size_t, double)> validation_override;

  void validate() const;
};

struct TrainResult {
  ModelParams params;
  MetricsHistory history;
  std::size_t epochs_run = 0;
  std::size_t best_epoch = 0;
  bool stopped_early = false;
};

// Per-row weights λ/N_l for visible labels and (1-λ)/N_u otherwise; an empty
// group gets no weight and the other group keeps its own coefficient.
std::vector<double> semisup_row_weights(std::span<const int> labels, double supervised_weight);

// λ·mean(labeled) + (1-λ)·mean(unlabeled) over one minibatch.
double semisup_batch_objective(const TrainConfig& cfg, const ModelSpec& spec,
                               const ModelParams& params, const Matrix& labeled_x,
                               std::span<const int> labeled_y, const Matrix& unlabeled_x, Rng& rng);

TrainResult train(const TrainConfig& cfg, const ModelSpec& spec, const DatasetSplits& data, Rng& rng);
// Continues from given parameters instead of a fresh initialization.
TrainResult train_from(const TrainConfig& cfg, const ModelSpec& spec, const DatasetSplits& data,
                       ModelParams init, Rng& rng);

// ---- Run configuration -------------------------------------------------------

struct RunConfig {
  ModelSpec spec;
  TrainConfig train;
  std::string images_path;
  std::string labels_path;
  std::array<std::size_t, 3> split_sizes{45000, 5000, 10000};
  std::optional<double> keep_fraction;  // semi-supervised label budget
  bool binarize = false;
  std::string checkpoint_path = "model.ckpt";
  std::string metrics_path = "metrics.csv";
};

// Flat key=value lines; '#' starts a comment; unknown keys are errors.
RunConfig parse_run_config(std::istream& in);
RunConfig load_run_config(const std::string& path);
// Applies one key=value pair (also used for command-line overrides).
void apply_config_value(RunConfig& cfg, const std::string& key, const std::string& value);

// Loads the IDX files, splits and masks them as configured.
DatasetSplits load_run_data(const RunConfig& cfg);
TrainResult run_training(const RunConfig& cfg);

}  // namespace sbvae
