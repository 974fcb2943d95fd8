#include "sbvae/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

#include "sbvae/errors.hpp"

namespace sbvae {

namespace {

using Index = Eigen::Index;

enum StreamTag : std::uint64_t {
  kInitStream = 1,
  kShuffleStream = 2,
  kNoiseStream = 3,
  kEvalStream = 4,
  kSplitStream = 10,
  kLabelStream = 11,
  kTrainStream = 12,
};

std::uint32_t read_be32(std::istream& in, const char* what) {
  const auto offset = static_cast<long long>(in.tellg());
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) {
    std::ostringstream msg;
    msg << "IDX: truncated " << what << " at offset " << offset;
    throw FormatError(msg.str());
  }
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) |
         std::uint32_t{b[3]};
}

void expect_magic(std::istream& in, std::uint32_t expected) {
  const std::uint32_t magic = read_be32(in, "magic");
  if (magic != expected) {
    std::ostringstream msg;
    msg << "IDX: bad magic 0x" << std::hex << magic << " at offset 0 (expected 0x" << expected << ")";
    throw FormatError(msg.str());
  }
}

std::vector<unsigned char> read_payload(std::istream& in, std::size_t count) {
  const auto offset = static_cast<long long>(in.tellg());
  std::vector<unsigned char> bytes(count);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(count));
  if (static_cast<std::size_t>(in.gcount()) != count) {
    std::ostringstream msg;
    msg << "IDX: payload truncated at offset " << offset + in.gcount() << " (expected " << count
        << " bytes from offset " << offset << ")";
    throw FormatError(msg.str());
  }
  return bytes;
}

DatasetSplit take_rows(const Matrix& images, std::span<const int> labels,
                       std::span<const std::size_t> rows) {
  DatasetSplit split;
  split.images = gather_rows(images, rows);
  if (!labels.empty()) {
    for (std::size_t r : rows) split.labels.push_back(labels[r]);
    split.label_mask.assign(rows.size(), true);
  }
  return split;
}

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::size_t to_count(const std::string& key, const std::string& value) {
  std::size_t pos = 0;
  unsigned long long out = 0;
  try {
    if (!value.empty() && value[0] == '-') throw std::invalid_argument("negative");
    out = std::stoull(value, &pos);
  } catch (const std::exception&) {
    pos = std::string::npos;
  }
  if (pos != value.size()) throw ConfigError("config key '" + key + "': expected a count, got '" + value + "'");
  return static_cast<std::size_t>(out);
}

double to_real(const std::string& key, const std::string& value) {
  std::size_t pos = 0;
  double out = 0.0;
  try {
    out = std::stod(value, &pos);
  } catch (const std::exception&) {
    pos = std::string::npos;
  }
  if (pos != value.size()) throw ConfigError("config key '" + key + "': expected a number, got '" + value + "'");
  return out;
}

bool to_bool(const std::string& key, const std::string& value) {
  if (value == "1" || value == "true") return true;
  if (value == "0" || value == "false") return false;
  throw ConfigError("config key '" + key + "': expected true/false, got '" + value + "'");
}

std::vector<std::size_t> to_counts(const std::string& key, const std::string& value) {
  std::vector<std::size_t> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_count(key, trim(item)));
  return out;
}

std::vector<bool> to_flags(const std::string& key, const std::string& value) {
  std::vector<bool> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_bool(key, trim(item)));
  return out;
}

}  // namespace

// ---- Adam --------------------------------------------------------------------

AdamState adam_init(std::span<const std::span<const double>> blocks, AdamConfig config) {
  AdamState state;
  state.config = config;
  for (const auto& block : blocks) {
    state.m.emplace_back(block.size(), 0.0);
    state.v.emplace_back(block.size(), 0.0);
  }
  return state;
}

AdamState adam_init(const ModelParams& params, AdamConfig config) {
  const auto blocks = params.blocks();
  return adam_init(std::span<const std::span<const double>>(blocks), config);
}

void adam_step(AdamState& state, std::span<const std::span<double>> params,
               std::span<const std::span<const double>> grads, std::span<const std::string> names) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw DimensionError("adam_step: block count mismatch");
  }
  for (std::size_t b = 0; b < params.size(); ++b) {
    if (params[b].size() != grads[b].size() || params[b].size() != state.m[b].size()) {
      throw DimensionError("adam_step: block " + std::to_string(b) + " size mismatch");
    }
    double sq = 0.0;
    for (double g : grads[b]) sq += g * g;
    if (!std::isfinite(sq)) {
      std::ostringstream msg;
      msg << "adam_step: non-finite gradient at step " << state.t + 1 << " in block "
          << (b < names.size() ? names[b] : std::to_string(b)) << " (norm " << std::sqrt(sq) << ")";
      throw NumericError(msg.str());
    }
  }
  const AdamConfig& c = state.config;
  state.t += 1;
  const double t = static_cast<double>(state.t);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t b = 0; b < params.size(); ++b) {
    auto& m = state.m[b];
    auto& v = state.v[b];
    for (std::size_t i = 0; i < m.size(); ++i) {
      const double g = grads[b][i];
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      params[b][i] -= c.alpha * m_hat / (std::sqrt(v_hat) + c.epsilon);
    }
  }
}

void adam_step(AdamState& state, ModelParams& params, const ModelParams& loss_grad) {
  const auto p = params.blocks();
  const auto g = loss_grad.blocks();
  const auto names = params.block_names();
  adam_step(state, p, g, names);
}

// ---- Data --------------------------------------------------------------------

std::size_t DatasetSplit::visible_labels() const {
  return static_cast<std::size_t>(std::count(label_mask.begin(), label_mask.end(), true));
}

std::vector<int> DatasetSplit::visible() const {
  std::vector<int> out(size(), kUnlabeled);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (label_mask[i]) out[i] = labels[i];
  }
  return out;
}

Matrix load_idx_images(std::istream& in) {
  expect_magic(in, kIdxImageMagic);
  const std::uint32_t n = read_be32(in, "item count");
  const std::uint32_t rows = read_be32(in, "row count");
  const std::uint32_t cols = read_be32(in, "column count");
  const std::size_t dim = std::size_t{rows} * cols;
  const auto bytes = read_payload(in, std::size_t{n} * dim);
  Matrix out(static_cast<Index>(n), static_cast<Index>(dim));
  for (std::size_t i = 0; i < bytes.size(); ++i) out.data()[i] = bytes[i] / 255.0;
  return out;
}

Matrix load_idx_images(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("IDX: cannot open " + path);
  return load_idx_images(in);
}

std::vector<int> load_idx_labels(std::istream& in) {
  expect_magic(in, kIdxLabelMagic);
  const std::uint32_t n = read_be32(in, "item count");
  const auto bytes = read_payload(in, n);
  return {bytes.begin(), bytes.end()};
}

std::vector<int> load_idx_labels(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("IDX: cannot open " + path);
  return load_idx_labels(in);
}

std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_index(i));
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

Matrix gather_rows(const Matrix& x, std::span<const std::size_t> rows) {
  Matrix out(static_cast<Index>(rows.size()), x.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Index>(r)) = x.row(static_cast<Index>(rows[r]));
  return out;
}

DatasetSplits make_splits(const Matrix& images, std::span<const int> labels,
                          std::array<std::size_t, 3> sizes, Rng& rng) {
  const auto available = static_cast<std::size_t>(images.rows());
  if (!labels.empty() && labels.size() != available) {
    throw DimensionError("make_splits: image and label counts differ");
  }
  if (sizes[0] + sizes[1] + sizes[2] > available) {
    std::ostringstream msg;
    msg << "make_splits: requested " << sizes[0] << "+" << sizes[1] << "+" << sizes[2]
        << " rows but only " << available << " are available";
    throw ConfigError(msg.str());
  }
  const auto perm = shuffled_indices(available, rng);
  const std::span<const std::size_t> all(perm);
  DatasetSplits out;
  out.train = take_rows(images, labels, all.subspan(0, sizes[0]));
  out.valid = take_rows(images, labels, all.subspan(sizes[0], sizes[1]));
  out.test = take_rows(images, labels, all.subspan(sizes[0] + sizes[1], sizes[2]));
  return out;
}

DatasetSplit remove_labels(const DatasetSplit& split, double keep_fraction, Rng& rng) {
  if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) {
    throw ConfigError("remove_labels: keep_fraction must lie in (0, 1]");
  }
  if (!split.has_labels()) throw ConfigError("remove_labels: split has no labels");
  DatasetSplit out = split;
  const auto keep = static_cast<std::size_t>(std::floor(keep_fraction * static_cast<double>(split.size())));
  const auto perm = shuffled_indices(split.size(), rng);
  out.label_mask.assign(split.size(), false);
  for (std::size_t i = 0; i < keep; ++i) out.label_mask[perm[i]] = true;
  return out;
}

Matrix binarize(const Matrix& x) { return (x.array() > 0.5).cast<double>().matrix(); }

// ---- Metrics -----------------------------------------------------------------

void MetricsHistory::add(std::size_t epoch, std::string split, std::string metric, double value) {
  records.push_back({epoch, std::move(split), std::move(metric), value});
}

std::optional<double> MetricsHistory::get(std::size_t epoch, const std::string& split,
                                          const std::string& metric) const {
  for (const auto& r : records) {
    if (r.epoch == epoch && r.split == split && r.metric == metric) return r.value;
  }
  return std::nullopt;
}

std::vector<double> MetricsHistory::series(const std::string& split, const std::string& metric) const {
  std::vector<double> out;
  for (const auto& r : records) {
    if (r.split == split && r.metric == metric) out.push_back(r.value);
  }
  return out;
}

void write_metrics_csv(std::ostream& out, const MetricsHistory& history) {
  out << "epoch,split,metric,value\n";
  char buf[64];
  for (const auto& r : history.records) {
    std::snprintf(buf, sizeof(buf), "%.9g", r.value);
    out << r.epoch << ',' << r.split << ',' << r.metric << ',' << buf << '\n';
  }
}

void write_metrics_csv(const std::string& path, const MetricsHistory& history) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write metrics file: " + path);
  write_metrics_csv(out, history);
}

SplitMetrics evaluate_split(const ModelSpec& spec, const ModelParams& params,
                            const DatasetSplit& split, Rng& rng, std::size_t chunk) {
  SplitMetrics out;
  const std::size_t n = split.size();
  if (n == 0) return out;
  double rec = 0.0;
  double kl = 0.0;
  double entropy = 0.0;
  std::size_t wrong = 0;
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t rows = std::min(chunk, n - start);
    const Matrix x = split.images.middleRows(static_cast<Index>(start), static_cast<Index>(rows));
    const std::vector<double> weights(rows, 1.0);
    const Noise noise = draw_noise(spec, rng, static_cast<Index>(rows), spec.mc_samples);
    if (spec.semi_supervised()) {
      const std::vector<int> hidden(rows, kUnlabeled);
      const ObjectiveResult res = evaluate_objective(spec, params, x, hidden, weights, noise, false);
      rec += res.reconstruction.sum();
      entropy += res.label_term.sum();
      kl += res.kl.sum();
      if (split.has_labels()) {
        const auto predicted = argmax_rows(res.class_probs);
        for (std::size_t i = 0; i < rows; ++i) {
          if (predicted[i] != split.labels[start + i]) ++wrong;
        }
      }
    } else {
      const ObjectiveResult res = evaluate_objective(spec, params, x, {}, weights, noise, false);
      rec += res.reconstruction.sum();
      kl += res.kl.sum();
    }
  }
  const double dn = static_cast<double>(n);
  out.reconstruction_error = -rec / dn;
  out.kl = kl / dn;
  out.elbo = (rec + entropy - kl) / dn;
  if (spec.semi_supervised() && split.has_labels()) out.class_error = static_cast<double>(wrong) / dn;
  return out;
}

// ---- Training ----------------------------------------------------------------

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("TrainConfig: batch_size must be >= 1");
  if (!(supervised_weight > 0.0 && supervised_weight < 1.0)) {
    throw ConfigError("TrainConfig: lambda must lie in (0, 1)");
  }
}

std::vector<double> semisup_row_weights(std::span<const int> labels, double supervised_weight) {
  std::size_t labeled = 0;
  for (int y : labels) labeled += y != kUnlabeled;
  const std::size_t unlabeled = labels.size() - labeled;
  std::vector<double> w(labels.size(), 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    w[i] = labels[i] != kUnlabeled ? supervised_weight / static_cast<double>(labeled)
                                   : (1.0 - supervised_weight) / static_cast<double>(unlabeled);
  }
  return w;
}

double semisup_batch_objective(const TrainConfig& cfg, const ModelSpec& spec,
                               const ModelParams& params, const Matrix& labeled_x,
                               std::span<const int> labeled_y, const Matrix& unlabeled_x, Rng& rng) {
  if (!spec.semi_supervised()) throw ConfigError("semisup_batch_objective: model has no classes");
  if (labeled_y.size() != static_cast<std::size_t>(labeled_x.rows())) {
    throw DimensionError("semisup_batch_objective: label count mismatch");
  }
  const Index n = labeled_x.rows() + unlabeled_x.rows();
  Matrix x(n, static_cast<Index>(spec.input_dim));
  if (labeled_x.rows()) x.topRows(labeled_x.rows()) = labeled_x;
  if (unlabeled_x.rows()) x.bottomRows(unlabeled_x.rows()) = unlabeled_x;
  std::vector<int> labels(labeled_y.begin(), labeled_y.end());
  labels.resize(static_cast<std::size_t>(n), kUnlabeled);
  const auto weights = semisup_row_weights(labels, cfg.supervised_weight);
  const Noise noise = draw_noise(spec, rng, n, spec.mc_samples);
  return evaluate_objective(spec, params, x, labels, weights, noise, false).objective;
}

TrainResult train(const TrainConfig& cfg, const ModelSpec& spec, const DatasetSplits& data, Rng& rng) {
  Rng init_rng = rng.derive(kInitStream);
  return train_from(cfg, spec, data, init_model(spec, init_rng), rng);
}

TrainResult train_from(const TrainConfig& cfg, const ModelSpec& spec, const DatasetSplits& data,
                       ModelParams init, Rng& rng) {
  cfg.validate();
  spec.validate();
  const bool semi = spec.semi_supervised();
  if (semi && !data.train.has_labels()) throw ConfigError("train: semi-supervised model needs labels");
  if (semi && !data.valid.has_labels() && data.valid.size() > 0) {
    throw ConfigError("train: semi-supervised early stopping needs validation labels");
  }

  TrainResult result;
  result.params = std::move(init);
  if (cfg.epochs == 0) return result;

  Rng shuffle_rng = rng.derive(kShuffleStream);
  Rng noise_rng = rng.derive(kNoiseStream);
  Rng eval_rng = rng.derive(kEvalStream);
  AdamState adam = adam_init(result.params, cfg.adam);
  const std::vector<int> visible = semi ? data.train.visible() : std::vector<int>{};

  ModelParams best = result.params;
  double best_metric = std::numeric_limits<double>::quiet_NaN();
  const std::size_t n = data.train.size();
  if (n == 0) throw ConfigError("train: empty training split");

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto order = shuffled_indices(n, shuffle_rng);
    double obj_sum = 0.0;
    double rec_sum = 0.0;
    double kl_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t rows = std::min(cfg.batch_size, n - start);
      const std::span<const std::size_t> idx(order.data() + start, rows);
      const Matrix x = gather_rows(data.train.images, idx);
      std::vector<int> labels;
      std::vector<double> weights;
      if (semi) {
        for (std::size_t r : idx) labels.push_back(visible[r]);
        weights = semisup_row_weights(labels, cfg.supervised_weight);
      } else {
        weights.assign(rows, 1.0 / static_cast<double>(rows));
      }
      try {
        const Noise noise = draw_noise(spec, noise_rng, static_cast<Index>(rows), spec.mc_samples);
        ObjectiveResult res = evaluate_objective(spec, result.params, x, labels, weights, noise, true);
        ModelParams& grad = *res.gradient;
        for (auto block : grad.blocks()) {
          for (double& g : block) g = -g;
        }
        adam_step(adam, result.params, grad);
        obj_sum += res.objective;
        rec_sum += res.reconstruction.mean();
        kl_sum += res.kl.mean();
      } catch (const NumericError& e) {
        std::ostringstream msg;
        msg << "epoch " << epoch << ", step " << batches + 1 << ": " << e.what();
        throw NumericError(msg.str());
      }
      ++batches;
    }
    const double nb = static_cast<double>(batches);
    result.history.add(epoch, "train", "objective", obj_sum / nb);
    result.history.add(epoch, "train", "reconstruction_error", -rec_sum / nb);
    result.history.add(epoch, "train", "kl", kl_sum / nb);
    if (!semi) result.history.add(epoch, "train", "elbo", (rec_sum - kl_sum) / nb);

    auto record = [&](const std::string& name, const SplitMetrics& m) {
      result.history.add(epoch, name, "elbo", m.elbo);
      result.history.add(epoch, name, "reconstruction_error", m.reconstruction_error);
      result.history.add(epoch, name, "kl", m.kl);
      if (m.class_error) result.history.add(epoch, name, "class_error", *m.class_error);
    };

    std::optional<SplitMetrics> valid;
    if (data.valid.size() > 0) {
      valid = evaluate_split(spec, result.params, data.valid, eval_rng);
      record("valid", *valid);
    }
    if (cfg.evaluate_test && data.test.size() > 0) {
      record("test", evaluate_split(spec, result.params, data.test, eval_rng));
    }
    result.epochs_run = epoch;

    if (!valid) {
      best = result.params;
      result.best_epoch = epoch;
      continue;
    }
    // Lower is better for both stopping metrics after the sign flip.
    double metric = semi ? *valid->class_error : -valid->elbo;
    if (cfg.validation_override) metric = cfg.validation_override(epoch, metric);
    if (result.best_epoch == 0 || metric < best_metric) {
      best_metric = metric;
      best = result.params;
      result.best_epoch = epoch;
    } else if (epoch - result.best_epoch >= cfg.patience) {
      result.stopped_early = true;
      break;
    }
  }
  result.params = std::move(best);
  return result;
}

// ---- Run configuration -------------------------------------------------------

void apply_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  ModelSpec& s = cfg.spec;
  TrainConfig& t = cfg.train;
  if (key == "variant") s.variant = parse_variant(value);
  else if (key == "fraction_param") s.fraction = parse_fraction_param(value);
  else if (key == "K") s.latent_dim = to_count(key, value);
  else if (key == "alpha0") s.alpha0 = to_real(key, value);
  else if (key == "mc_samples") s.mc_samples = to_count(key, value);
  else if (key == "kl_terms") s.kl_terms = to_count(key, value);
  else if (key == "classes") s.classes = to_count(key, value);
  else if (key == "input_dim") s.input_dim = to_count(key, value);
  else if (key == "encoder_hidden") s.encoder_hidden = to_counts(key, value);
  else if (key == "decoder_hidden") s.decoder_hidden = to_counts(key, value);
  else if (key == "encoder_skip") s.encoder_skip = to_flags(key, value);
  else if (key == "decoder_skip") s.decoder_skip = to_flags(key, value);
  else if (key == "seed") t.seed = to_count(key, value);
  else if (key == "batch_size") t.batch_size = to_count(key, value);
  else if (key == "epochs") t.epochs = to_count(key, value);
  else if (key == "patience") t.patience = to_count(key, value);
  else if (key == "lambda") t.supervised_weight = to_real(key, value);
  else if (key == "learning_rate") t.adam.alpha = to_real(key, value);
  else if (key == "beta1") t.adam.beta1 = to_real(key, value);
  else if (key == "beta2") t.adam.beta2 = to_real(key, value);
  else if (key == "evaluate_test") t.evaluate_test = to_bool(key, value);
  else if (key == "keep_fraction") cfg.keep_fraction = to_real(key, value);
  else if (key == "images") cfg.images_path = value;
  else if (key == "labels") cfg.labels_path = value;
  else if (key == "n_train") cfg.split_sizes[0] = to_count(key, value);
  else if (key == "n_valid") cfg.split_sizes[1] = to_count(key, value);
  else if (key == "n_test") cfg.split_sizes[2] = to_count(key, value);
  else if (key == "binarize") cfg.binarize = to_bool(key, value);
  else if (key == "checkpoint") cfg.checkpoint_path = value;
  else if (key == "metrics") cfg.metrics_path = value;
  else throw ConfigError("unknown config key '" + key + "'");
}

RunConfig parse_run_config(std::istream& in) {
  RunConfig cfg;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(number) + ": expected key=value");
    }
    apply_config_value(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  return parse_run_config(in);
}

DatasetSplits load_run_data(const RunConfig& cfg) {
  if (cfg.images_path.empty()) throw ConfigError("missing required config key 'images'");
  const bool semi = cfg.spec.semi_supervised();
  if (semi && cfg.labels_path.empty()) throw ConfigError("missing required config key 'labels'");
  Matrix images = load_idx_images(cfg.images_path);
  if (cfg.binarize) images = binarize(images);
  std::vector<int> labels;
  if (!cfg.labels_path.empty()) labels = load_idx_labels(cfg.labels_path);
  if (semi) {
    for (int y : labels) {
      if (y < 0 || y >= static_cast<int>(cfg.spec.classes)) {
        throw ConfigError("label " + std::to_string(y) + " outside the configured classes");
      }
    }
  }
  const Rng root(cfg.train.seed);
  Rng split_rng = root.derive(kSplitStream);
  DatasetSplits splits = make_splits(images, labels, cfg.split_sizes, split_rng);
  if (cfg.keep_fraction) {
    Rng label_rng = root.derive(kLabelStream);
    splits.train = remove_labels(splits.train, *cfg.keep_fraction, label_rng);
  }
  return splits;
}

TrainResult run_training(const RunConfig& cfg) {
  const DatasetSplits data = load_run_data(cfg);
  const Rng root(cfg.train.seed);
  Rng train_rng = root.derive(kTrainStream);
  return train(cfg.train, cfg.spec, data, train_rng);
}

}  // namespace sbvae
