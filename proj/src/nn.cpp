#include "sbvae/nn.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <sstream>

#include "sbvae/errors.hpp"

namespace sbvae {

namespace {

constexpr char kCheckpointMagic[8] = {'S', 'B', 'V', 'A', 'E', 'N', 'N', '\0'};

void apply_activation(Activation act, Matrix& m) {
  if (act == Activation::relu) m = m.cwiseMax(0.0);
}

template <typename T>
void put_le(std::ostream& out, T value) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
  }
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get_le(std::istream& in, const char* what) {
  unsigned char bytes[sizeof(T)];
  const auto offset = static_cast<long long>(in.tellg());
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) {
    std::ostringstream msg;
    msg << "checkpoint truncated while reading " << what << " at offset " << offset;
    throw FormatError(msg.str());
  }
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
  }
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

}  // namespace

Layer Layer::zeros(Eigen::Index fan_in, Eigen::Index fan_out) {
  return {Matrix::Zero(fan_in, fan_out), RowVector::Zero(fan_out)};
}

void MlpConfig::validate() const {
  if (widths.size() < 2) throw ConfigError("MlpConfig: need at least an input and an output width");
  for (std::size_t w : widths) {
    if (w == 0) throw ConfigError("MlpConfig: layer widths must be positive");
  }
  if (skip.size() > layer_count()) throw ConfigError("MlpConfig: more skip flags than layers");
  for (std::size_t l = 0; l < skip.size(); ++l) {
    if (skip[l] && widths[l] != widths[l + 1]) {
      std::ostringstream msg;
      msg << "MlpConfig: skip connection on layer " << l << " joins widths " << widths[l]
          << " and " << widths[l + 1];
      throw ConfigError(msg.str());
    }
  }
}

Mlp::Mlp(MlpConfig config) : config_(std::move(config)) {
  config_.validate();
  for (std::size_t l = 0; l < config_.layer_count(); ++l) {
    layers_.push_back(Layer::zeros(static_cast<Eigen::Index>(config_.widths[l]),
                                   static_cast<Eigen::Index>(config_.widths[l + 1])));
  }
}

MlpTrace Mlp::forward(const Matrix& x) const {
  if (x.cols() != static_cast<Eigen::Index>(input_width())) {
    std::ostringstream msg;
    msg << "Mlp::forward: input has " << x.cols() << " columns, expected " << input_width();
    throw DimensionError(msg.str());
  }
  MlpTrace trace;
  trace.inputs.reserve(layers_.size());
  trace.pre.reserve(layers_.size());
  Matrix current = x;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Matrix pre = current * layers_[l].weight;
    pre.rowwise() += layers_[l].bias;
    Matrix out = pre;
    apply_activation(l + 1 == layers_.size() ? config_.output_activation : config_.activation, out);
    if (config_.has_skip(l)) out += current;
    trace.inputs.push_back(std::move(current));
    trace.pre.push_back(std::move(pre));
    current = std::move(out);
  }
  trace.output = std::move(current);
  return trace;
}

Matrix Mlp::backward_accumulate(const MlpTrace& trace, const Matrix& upstream,
                                std::vector<Layer>& grads) const {
  if (trace.inputs.size() != layers_.size() || trace.pre.size() != layers_.size()) {
    throw DimensionError("Mlp::backward: trace does not match network depth");
  }
  if (grads.size() != layers_.size()) throw DimensionError("Mlp::backward: gradient depth mismatch");
  if (upstream.rows() != trace.output.rows() || upstream.cols() != trace.output.cols()) {
    throw DimensionError("Mlp::backward: upstream gradient shape mismatch");
  }
  Matrix d_out = upstream;
  for (std::size_t l = layers_.size(); l-- > 0;) {
    const Activation act = l + 1 == layers_.size() ? config_.output_activation : config_.activation;
    Matrix d_pre = d_out;
    if (act == Activation::relu) {
      d_pre = (trace.pre[l].array() > 0.0).select(d_out, 0.0);
    }
    grads[l].weight.noalias() += trace.inputs[l].transpose() * d_pre;
    grads[l].bias += d_pre.colwise().sum();
    Matrix d_in = d_pre * layers_[l].weight.transpose();
    if (config_.has_skip(l)) d_in += d_out;
    d_out = std::move(d_in);
  }
  return d_out;
}

MlpBackward Mlp::backward(const MlpTrace& trace, const Matrix& upstream) const {
  MlpBackward result;
  result.grads = zero_gradients();
  result.input_grad = backward_accumulate(trace, upstream, result.grads);
  return result;
}

std::vector<Layer> Mlp::zero_gradients() const {
  std::vector<Layer> grads;
  grads.reserve(layers_.size());
  for (const Layer& layer : layers_) {
    grads.push_back(Layer::zeros(layer.weight.rows(), layer.weight.cols()));
  }
  return grads;
}

Mlp init_mlp(const MlpConfig& config, Rng& rng, double weight_variance) {
  Mlp mlp(config);
  const double scale = std::sqrt(weight_variance);
  for (Layer& layer : mlp.layers()) {
    layer.weight = draw_standard_normal(rng, layer.weight.rows(), layer.weight.cols()) * scale;
  }
  return mlp;
}

Vector bernoulli_log_likelihood(const Matrix& logits, const Matrix& targets) {
  if (logits.rows() != targets.rows() || logits.cols() != targets.cols()) {
    throw DimensionError("bernoulli_log_likelihood: logits and targets differ in shape");
  }
  Vector out(logits.rows());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    double total = 0.0;
    for (Eigen::Index d = 0; d < logits.cols(); ++d) {
      const double x = targets(i, d);
      if (!(x >= 0.0 && x <= 1.0)) {
        std::ostringstream msg;
        msg << "bernoulli_log_likelihood: target " << x << " at (" << i << ", " << d
            << ") outside [0,1]";
        throw DomainError(msg.str());
      }
      const double l = logits(i, d);
      total += x * l - softplus(l);
    }
    out[i] = total;
  }
  return out;
}

Matrix bernoulli_log_likelihood_grad(const Matrix& logits, const Matrix& targets) {
  if (logits.rows() != targets.rows() || logits.cols() != targets.cols()) {
    throw DimensionError("bernoulli_log_likelihood_grad: logits and targets differ in shape");
  }
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    out.data()[i] = targets.data()[i] - sigmoid(logits.data()[i]);
  }
  return out;
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double peak = logits.row(i).maxCoeff();
    out.row(i) = (logits.row(i).array() - peak).exp();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

Matrix categorical_head(const Mlp& head, const Matrix& x) { return softmax_rows(head.predict(x)); }

void write_layers(std::ostream& out, std::span<const Layer> layers) {
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(layers.size()));
  for (const Layer& layer : layers) {
    put_le<std::uint64_t>(out, static_cast<std::uint64_t>(layer.weight.rows()));
    put_le<std::uint64_t>(out, static_cast<std::uint64_t>(layer.weight.cols()));
    put_le<std::uint64_t>(out, static_cast<std::uint64_t>(layer.bias.size()));
  }
  for (const Layer& layer : layers) {
    for (Eigen::Index i = 0; i < layer.weight.size(); ++i) put_le<double>(out, layer.weight.data()[i]);
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) put_le<double>(out, layer.bias[i]);
  }
  if (!out) throw FormatError("write_layers: stream write failed");
}

std::vector<Layer> read_layers(std::istream& in) {
  char magic[sizeof(kCheckpointMagic)];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw FormatError("checkpoint: bad magic at offset 0");
  }
  const auto version = get_le<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion) {
    std::ostringstream msg;
    msg << "checkpoint: unsupported version " << version;
    throw FormatError(msg.str());
  }
  const auto count = get_le<std::uint32_t>(in, "layer count");
  std::vector<Layer> layers;
  layers.reserve(count);
  for (std::uint32_t l = 0; l < count; ++l) {
    const auto rows = get_le<std::uint64_t>(in, "fan_in");
    const auto cols = get_le<std::uint64_t>(in, "fan_out");
    const auto bias = get_le<std::uint64_t>(in, "bias length");
    if (bias != cols || rows == 0 || cols == 0 || rows > (1u << 26) || cols > (1u << 26)) {
      std::ostringstream msg;
      msg << "checkpoint: inconsistent shape for layer " << l << " (" << rows << " x " << cols
          << ", bias " << bias << ")";
      throw FormatError(msg.str());
    }
    layers.push_back(Layer::zeros(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)));
  }
  for (Layer& layer : layers) {
    for (Eigen::Index i = 0; i < layer.weight.size(); ++i) layer.weight.data()[i] = get_le<double>(in, "weights");
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias[i] = get_le<double>(in, "bias");
  }
  return layers;
}

}  // namespace sbvae
