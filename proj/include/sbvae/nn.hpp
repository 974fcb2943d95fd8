#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "sbvae/numerics.hpp"

namespace sbvae {

inline constexpr double kInitWeightVariance = 0.001;

enum class Activation { relu, identity };

// Dense layer y = x W + bias, W of shape fan_in × fan_out.
struct Layer {
  Matrix weight;
  RowVector bias;

  static Layer zeros(Eigen::Index fan_in, Eigen::Index fan_out);
};

// widths = {input, ..., output}. Layer l maps widths[l] -> widths[l+1] and uses
// `activation`, except the last layer which uses `output_activation`.
// skip[l] adds the layer input to its output (requires equal widths).
struct MlpConfig {
  std::vector<std::size_t> widths;
  Activation activation = Activation::relu;
  Activation output_activation = Activation::identity;
  std::vector<bool> skip;

  std::size_t layer_count() const { return widths.empty() ? 0 : widths.size() - 1; }
  bool has_skip(std::size_t layer) const { return layer < skip.size() && skip[layer]; }
  void validate() const;
};

struct MlpTrace {
  std::vector<Matrix> inputs;  // input to each layer
  std::vector<Matrix> pre;     // pre-activation of each layer
  Matrix output;
};

struct MlpBackward {
  std::vector<Layer> grads;
  Matrix input_grad;
};

class Mlp {
 public:
  Mlp() = default;
  // Zero weights and biases.
  explicit Mlp(MlpConfig config);

  const MlpConfig& config() const { return config_; }
  std::vector<Layer>& layers() { return layers_; }
  const std::vector<Layer>& layers() const { return layers_; }
  std::size_t input_width() const { return config_.widths.front(); }
  std::size_t output_width() const { return config_.widths.back(); }
  bool empty() const { return layers_.empty(); }

  MlpTrace forward(const Matrix& x) const;
  Matrix predict(const Matrix& x) const { return forward(x).output; }
  MlpBackward backward(const MlpTrace& trace, const Matrix& upstream) const;
  // Adds parameter gradients into `grads` (same shapes as layers()); returns input gradient.
  Matrix backward_accumulate(const MlpTrace& trace, const Matrix& upstream,
                             std::vector<Layer>& grads) const;

  std::vector<Layer> zero_gradients() const;

 private:
  MlpConfig config_;
  std::vector<Layer> layers_;
};

// Weights i.i.d. N(0, variance), biases zero.
Mlp init_mlp(const MlpConfig& config, Rng& rng, double weight_variance = kInitWeightVariance);

// Per-row Σ_d [x log s(ℓ) + (1-x) log(1 - s(ℓ))] in the form x ℓ - softplus(ℓ).
Vector bernoulli_log_likelihood(const Matrix& logits, const Matrix& targets);
// ∂/∂ℓ of the above: x - s(ℓ).
Matrix bernoulli_log_likelihood_grad(const Matrix& logits, const Matrix& targets);

// Row-wise softmax of head(x).
Matrix categorical_head(const Mlp& head, const Matrix& x);
Matrix softmax_rows(const Matrix& logits);

// Flat binary parameter container:
//   "SBVAENN\0" | u32 version | u32 layer count |
//   per layer: u64 fan_in, u64 fan_out, u64 bias length |
//   per layer: weights then bias as little-endian IEEE-754 doubles.
inline constexpr std::uint32_t kCheckpointVersion = 1;
void write_layers(std::ostream& out, std::span<const Layer> layers);
std::vector<Layer> read_layers(std::istream& in);

}  // namespace sbvae
