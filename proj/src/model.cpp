#include "sbvae/model.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <sstream>

#include "sbvae/errors.hpp"

namespace sbvae {

namespace {

using Index = Eigen::Index;

std::atomic<bool> gamma_clamp_warned{false};

void warn_gamma_clamp() {
  if (!gamma_clamp_warned.exchange(true)) {
    std::cerr << "warning: Gamma-composition shape exceeded 1 and was clamped; the asymptotic "
                 "inverse CDF is only accurate for small shapes\n";
  }
}

// Positive-mapped parameters plus the derivative of the map at each raw output.
struct MappedPosterior {
  PosteriorParams params;
  Matrix d_first_raw;
  Matrix d_second_raw;
};

MappedPosterior map_posterior(const ModelSpec& spec, const Matrix& raw) {
  const Index n = raw.rows();
  const auto p = static_cast<Index>(spec.stochastic_dims());
  MappedPosterior out;
  out.params.first.resize(n, p);
  out.params.second.resize(n, p);
  out.d_first_raw.resize(n, p);
  out.d_second_raw.resize(n, p);
  const bool location_first =
      !spec.stick_breaking() || spec.fraction == FractionParam::gauss_logit;
  for (Index i = 0; i < n; ++i) {
    for (Index k = 0; k < p; ++k) {
      const double r1 = raw(i, k);
      const double r2 = raw(i, p + k);
      if (!std::isfinite(r1) || !std::isfinite(r2)) {
        std::ostringstream msg;
        msg << "encoder produced a non-finite output for batch row " << i << ", coordinate " << k;
        throw NumericError(msg.str());
      }
      if (location_first) {
        out.params.first(i, k) = r1;
        out.d_first_raw(i, k) = 1.0;
      } else {
        out.params.first(i, k) = positive_from_unconstrained(r1);
        out.d_first_raw(i, k) = positive_from_unconstrained_grad(r1);
      }
      out.params.second(i, k) = positive_from_unconstrained(r2);
      out.d_second_raw(i, k) = positive_from_unconstrained_grad(r2);
    }
  }
  if (spec.stick_breaking() && spec.fraction == FractionParam::gamma) {
    for (Matrix* m : {&out.params.first, &out.params.second}) {
      Matrix& d = m == &out.params.first ? out.d_first_raw : out.d_second_raw;
      for (Index i = 0; i < m->size(); ++i) {
        if (m->data()[i] > 1.0) {
          m->data()[i] = 1.0;
          d.data()[i] = 0.0;
          warn_gamma_clamp();
        }
      }
    }
  }
  return out;
}

// One reparameterized draw of the stochastic coordinates (fractions v or Gaussian z).
struct StochasticDraw {
  Matrix value;
  Matrix d_first;   // ∂value/∂first, elementwise
  Matrix d_second;
  Matrix kl;        // per-entry single-sample KL (Gamma, Gauss-Logit only)
  Matrix kl_d_first;
  Matrix kl_d_second;
};

bool mc_kl(const ModelSpec& spec) {
  return spec.stick_breaking() && spec.fraction != FractionParam::kumaraswamy;
}

StochasticDraw draw_stochastic(const ModelSpec& spec, const PosteriorParams& post,
                               const Matrix& noise_first, const Matrix* noise_second,
                               bool with_gradient) {
  const Index n = post.first.rows();
  const Index p = post.first.cols();
  StochasticDraw d;
  d.value.resize(n, p);
  if (with_gradient) {
    d.d_first.resize(n, p);
    d.d_second.resize(n, p);
  }
  const bool sample_kl = mc_kl(spec);
  if (sample_kl) {
    d.kl.resize(n, p);
    if (with_gradient) {
      d.kl_d_first.resize(n, p);
      d.kl_d_second.resize(n, p);
    }
  }
  const BetaParams prior = spec.fraction_prior();
  for (Index i = 0; i < n; ++i) {
    for (Index k = 0; k < p; ++k) {
      const double p1 = post.first(i, k);
      const double p2 = post.second(i, k);
      const double e1 = noise_first(i, k);
      if (!spec.stick_breaking()) {
        d.value(i, k) = p1 + p2 * e1;
        if (with_gradient) {
          d.d_first(i, k) = 1.0;
          d.d_second(i, k) = e1;
        }
        continue;
      }
      switch (spec.fraction) {
        case FractionParam::kumaraswamy: {
          const KumaraswamyParams q{p1, p2};
          d.value(i, k) = kumaraswamy_inverse_cdf(e1, q);
          if (with_gradient) {
            const ShapeGradient g = kumaraswamy_inverse_cdf_grad(e1, q);
            d.d_first(i, k) = g.d_first;
            d.d_second(i, k) = g.d_second;
          }
          break;
        }
        case FractionParam::gamma: {
          const double e2 = (*noise_second)(i, k);
          const GammaCompositionParams q{p1, p2};
          const double t = gamma_composition_logit(e1, e2, q);
          d.value(i, k) = sigmoid(t);
          d.kl(i, k) = kl_gamma_composition_sample(t, q, prior);
          if (with_gradient) {
            const ShapeGradient g = gamma_composition_fraction_grad(e1, e2, q);
            d.d_first(i, k) = g.d_first;
            d.d_second(i, k) = g.d_second;
            const ShapeGradient gk = kl_gamma_composition_sample_grad(e1, e2, q, prior);
            d.kl_d_first(i, k) = gk.d_first;
            d.kl_d_second(i, k) = gk.d_second;
          }
          break;
        }
        case FractionParam::gauss_logit: {
          const NormalParams g{p1, p2};
          const double v = gauss_logit_fraction(e1, g);
          d.value(i, k) = v;
          d.kl(i, k) = kl_gauss_logit_from_noise(e1, g, prior);
          if (with_gradient) {
            const double dv = v * (1.0 - v);
            d.d_first(i, k) = dv;
            d.d_second(i, k) = dv * e1;
            const ShapeGradient gk = kl_gauss_logit_from_noise_grad(e1, g, prior);
            d.kl_d_first(i, k) = gk.d_first;
            d.kl_d_second(i, k) = gk.d_second;
          }
          break;
        }
      }
    }
  }
  return d;
}

// Closed-form KL per entry (Gaussian and Kumaraswamy) and its partials.
struct AnalyticKl {
  Matrix kl;
  Matrix d_first;
  Matrix d_second;
};

AnalyticKl analytic_kl(const ModelSpec& spec, const PosteriorParams& post, bool with_gradient) {
  const Index n = post.first.rows();
  const Index p = post.first.cols();
  AnalyticKl out;
  out.kl.resize(n, p);
  if (with_gradient) {
    out.d_first.resize(n, p);
    out.d_second.resize(n, p);
  }
  const BetaParams prior = spec.fraction_prior();
  for (Index i = 0; i < n; ++i) {
    for (Index k = 0; k < p; ++k) {
      const double p1 = post.first(i, k);
      const double p2 = post.second(i, k);
      if (!spec.stick_breaking()) {
        out.kl(i, k) = kl_normal_std_normal({p1, p2});
        if (with_gradient) {
          out.d_first(i, k) = p1;
          out.d_second(i, k) = p2 - 1.0 / p2;
        }
      } else {
        const KumaraswamyParams q{p1, p2};
        out.kl(i, k) = kl_kumaraswamy_beta(q, prior, spec.kl_terms);
        if (with_gradient) {
          const ShapeGradient g = kl_kumaraswamy_beta_grad(q, prior, spec.kl_terms);
          out.d_first(i, k) = g.d_first;
          out.d_second(i, k) = g.d_second;
        }
      }
    }
  }
  return out;
}

Matrix to_latent(const ModelSpec& spec, const Matrix& stochastic) {
  return spec.stick_breaking() ? compose_sticks_rows(stochastic) : stochastic;
}

void check_input(const ModelSpec& spec, const Matrix& x) {
  if (x.cols() != static_cast<Index>(spec.input_dim)) {
    std::ostringstream msg;
    msg << "input has " << x.cols() << " columns, model expects " << spec.input_dim;
    throw DimensionError(msg.str());
  }
}

std::vector<std::size_t> parse_sizes(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    out.push_back(static_cast<std::size_t>(std::stoull(item)));
  }
  return out;
}

std::vector<bool> parse_flags(const std::string& text) {
  std::vector<bool> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    out.push_back(item == "1" || item == "true");
  }
  return out;
}

template <typename T>
std::string join(const std::vector<T>& items) {
  std::ostringstream out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out << ',';
    out << static_cast<std::size_t>(items[i]);
  }
  return out.str();
}

}  // namespace

std::string to_string(Variant v) { return v == Variant::gauss_vae ? "gauss_vae" : "sb_vae"; }

std::string to_string(FractionParam f) {
  switch (f) {
    case FractionParam::kumaraswamy: return "kumaraswamy";
    case FractionParam::gamma: return "gamma";
    case FractionParam::gauss_logit: return "gauss_logit";
  }
  return "unknown";
}

Variant parse_variant(std::string_view text) {
  if (text == "gauss_vae") return Variant::gauss_vae;
  if (text == "sb_vae") return Variant::sb_vae;
  throw ConfigError("unknown variant '" + std::string(text) + "' (expected gauss_vae or sb_vae)");
}

FractionParam parse_fraction_param(std::string_view text) {
  if (text == "kumaraswamy") return FractionParam::kumaraswamy;
  if (text == "gamma") return FractionParam::gamma;
  if (text == "gauss_logit") return FractionParam::gauss_logit;
  throw ConfigError("unknown fraction_param '" + std::string(text) +
                    "' (expected kumaraswamy, gamma or gauss_logit)");
}

// ---- ModelSpec ---------------------------------------------------------------

MlpConfig ModelSpec::encoder_config() const {
  MlpConfig cfg;
  cfg.widths.push_back(input_dim);
  cfg.widths.insert(cfg.widths.end(), encoder_hidden.begin(), encoder_hidden.end());
  cfg.activation = Activation::relu;
  cfg.output_activation = Activation::relu;
  cfg.skip = encoder_skip;
  return cfg;
}

MlpConfig ModelSpec::latent_head_config() const {
  MlpConfig cfg;
  cfg.widths = {encoder_hidden.back(), 2 * stochastic_dims()};
  return cfg;
}

MlpConfig ModelSpec::classifier_config() const {
  MlpConfig cfg;
  cfg.widths = {encoder_hidden.back(), classes};
  return cfg;
}

MlpConfig ModelSpec::decoder_config() const {
  MlpConfig cfg;
  cfg.widths.push_back(latent_dim + classes);
  cfg.widths.insert(cfg.widths.end(), decoder_hidden.begin(), decoder_hidden.end());
  cfg.widths.push_back(input_dim);
  cfg.activation = Activation::relu;
  cfg.output_activation = Activation::identity;
  cfg.skip = decoder_skip;
  return cfg;
}

void ModelSpec::validate() const {
  if (input_dim == 0) throw ConfigError("ModelSpec: input_dim must be positive");
  if (stick_breaking() && latent_dim < 2) throw ConfigError("ModelSpec: K must be >= 2 for sb_vae");
  if (!stick_breaking() && latent_dim < 1) throw ConfigError("ModelSpec: latent dimension must be >= 1");
  if (mc_samples < 1) throw ConfigError("ModelSpec: mc_samples must be >= 1");
  if (kl_terms < 1) throw ConfigError("ModelSpec: kl_terms must be >= 1");
  if (!(alpha0 > 0.0)) throw ConfigError("ModelSpec: alpha0 must be positive");
  if (encoder_hidden.empty()) throw ConfigError("ModelSpec: encoder needs at least one hidden layer");
  if (decoder_hidden.empty()) throw ConfigError("ModelSpec: decoder needs at least one hidden layer");
  encoder_config().validate();
  decoder_config().validate();
}

// ---- ModelParams -------------------------------------------------------------

std::vector<Mlp*> ModelParams::networks() { return {&encoder, &latent_head, &classifier, &decoder}; }

std::vector<const Mlp*> ModelParams::networks() const {
  return {&encoder, &latent_head, &classifier, &decoder};
}

std::vector<std::span<double>> ModelParams::blocks() {
  std::vector<std::span<double>> out;
  for (Mlp* net : networks()) {
    for (Layer& layer : net->layers()) {
      out.emplace_back(layer.weight.data(), static_cast<std::size_t>(layer.weight.size()));
      out.emplace_back(layer.bias.data(), static_cast<std::size_t>(layer.bias.size()));
    }
  }
  return out;
}

std::vector<std::span<const double>> ModelParams::blocks() const {
  std::vector<std::span<const double>> out;
  for (const Mlp* net : networks()) {
    for (const Layer& layer : net->layers()) {
      out.emplace_back(layer.weight.data(), static_cast<std::size_t>(layer.weight.size()));
      out.emplace_back(layer.bias.data(), static_cast<std::size_t>(layer.bias.size()));
    }
  }
  return out;
}

std::vector<std::string> ModelParams::block_names() const {
  static const char* kNames[] = {"encoder", "latent_head", "classifier", "decoder"};
  std::vector<std::string> out;
  const auto nets = networks();
  for (std::size_t n = 0; n < nets.size(); ++n) {
    for (std::size_t l = 0; l < nets[n]->layers().size(); ++l) {
      out.push_back(std::string(kNames[n]) + ".layer" + std::to_string(l) + ".weight");
      out.push_back(std::string(kNames[n]) + ".layer" + std::to_string(l) + ".bias");
    }
  }
  return out;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t total = 0;
  for (const auto& block : blocks()) total += block.size();
  return total;
}

ModelParams ModelParams::zeros_like() const {
  ModelParams out = *this;
  for (auto block : out.blocks()) std::fill(block.begin(), block.end(), 0.0);
  return out;
}

std::vector<double> ModelParams::flatten() const {
  std::vector<double> flat;
  flat.reserve(parameter_count());
  for (const auto& block : blocks()) flat.insert(flat.end(), block.begin(), block.end());
  return flat;
}

void ModelParams::assign(std::span<const double> flat) {
  if (flat.size() != parameter_count()) throw DimensionError("ModelParams::assign: size mismatch");
  std::size_t offset = 0;
  for (auto block : blocks()) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(offset), block.size(), block.begin());
    offset += block.size();
  }
}

ModelParams init_model(const ModelSpec& spec, Rng& rng, double weight_variance) {
  spec.validate();
  ModelParams params;
  params.encoder = init_mlp(spec.encoder_config(), rng, weight_variance);
  params.latent_head = init_mlp(spec.latent_head_config(), rng, weight_variance);
  if (spec.semi_supervised()) params.classifier = init_mlp(spec.classifier_config(), rng, weight_variance);
  params.decoder = init_mlp(spec.decoder_config(), rng, weight_variance);
  return params;
}

// ---- Sampling and encoding ---------------------------------------------------

Noise draw_noise(const ModelSpec& spec, Rng& rng, Eigen::Index rows, std::size_t samples) {
  const auto p = static_cast<Index>(spec.stochastic_dims());
  const bool gaussian_noise =
      !spec.stick_breaking() || spec.fraction == FractionParam::gauss_logit;
  Noise noise;
  for (std::size_t s = 0; s < samples; ++s) {
    if (gaussian_noise) {
      noise.first.push_back(draw_standard_normal(rng, rows, p));
    } else {
      noise.first.push_back(draw_uniform(rng, rows, p));
      if (spec.fraction == FractionParam::gamma) noise.second.push_back(draw_uniform(rng, rows, p));
    }
  }
  return noise;
}

PosteriorParams posterior_params(const ModelSpec& spec, const ModelParams& params, const Matrix& x) {
  check_input(spec, x);
  const Matrix raw = params.latent_head.predict(params.encoder.predict(x));
  return map_posterior(spec, raw).params;
}

Encoding encode_with_noise(const ModelSpec& spec, const ModelParams& params, const Matrix& x,
                           const Noise& noise) {
  Encoding enc;
  enc.posterior = posterior_params(spec, params, x);
  const Index n = x.rows();
  enc.kl = Vector::Zero(n);
  if (!mc_kl(spec)) enc.kl = analytic_kl(spec, enc.posterior, false).kl.rowwise().sum();
  const double inv_s = 1.0 / static_cast<double>(noise.samples());
  for (std::size_t s = 0; s < noise.samples(); ++s) {
    const Matrix* second = noise.second.empty() ? nullptr : &noise.second[s];
    StochasticDraw draw = draw_stochastic(spec, enc.posterior, noise.first[s], second, false);
    if (mc_kl(spec)) enc.kl += draw.kl.rowwise().sum() * inv_s;
    enc.latents.push_back(to_latent(spec, draw.value));
  }
  return enc;
}

Encoding encode(const ModelSpec& spec, const ModelParams& params, const Matrix& x, Rng& rng) {
  return encode_with_noise(spec, params, x, draw_noise(spec, rng, x.rows(), spec.mc_samples));
}

Matrix posterior_mean_latents(const ModelSpec& spec, const ModelParams& params, const Matrix& x) {
  const PosteriorParams post = posterior_params(spec, params, x);
  if (!spec.stick_breaking()) return post.first;
  Matrix means(post.first.rows(), post.first.cols());
  for (Index i = 0; i < means.rows(); ++i) {
    for (Index k = 0; k < means.cols(); ++k) {
      const double p1 = post.first(i, k);
      const double p2 = post.second(i, k);
      switch (spec.fraction) {
        case FractionParam::kumaraswamy:
          means(i, k) = kumaraswamy_mean({p1, p2});
          break;
        case FractionParam::gamma:
          // Mean of the Beta(a_x, a_y) the composition approximates.
          means(i, k) = p1 / (p1 + p2);
          break;
        case FractionParam::gauss_logit:
          // Probit approximation of E[logistic(μ + σ ε)].
          means(i, k) = sigmoid(p1 / std::sqrt(1.0 + M_PI * p2 * p2 / 8.0));
          break;
      }
    }
  }
  // Fractions are independent, so composing their means gives E[π].
  return compose_sticks_rows(means);
}

// ---- Objective ---------------------------------------------------------------

ObjectiveResult evaluate_objective(const ModelSpec& spec, const ModelParams& params,
                                   const Matrix& x, std::span<const int> labels,
                                   std::span<const double> weights, const Noise& noise,
                                   bool with_gradient) {
  check_input(spec, x);
  const Index n = x.rows();
  const auto K = static_cast<Index>(spec.latent_dim);
  const auto C = static_cast<Index>(spec.classes);
  const bool semi = spec.semi_supervised();
  if (weights.size() != static_cast<std::size_t>(n)) throw DimensionError("evaluate_objective: weight count mismatch");
  if (noise.samples() == 0) throw DimensionError("evaluate_objective: no noise samples");
  if (semi) {
    if (labels.size() != static_cast<std::size_t>(n)) throw DimensionError("evaluate_objective: label count mismatch");
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] != kUnlabeled && (labels[i] < 0 || labels[i] >= static_cast<int>(C))) {
        std::ostringstream msg;
        msg << "invalid label " << labels[i] << " at row " << i << " (classes: " << C << ")";
        throw DomainError(msg.str());
      }
    }
  }
  const auto S = noise.samples();
  const double inv_s = 1.0 / static_cast<double>(S);

  ObjectiveResult res;
  res.reconstruction = Vector::Zero(n);
  res.kl = Vector::Zero(n);
  res.label_term = Vector::Zero(n);
  ModelParams* grad = nullptr;
  if (with_gradient) {
    res.gradient = params.zeros_like();
    grad = &*res.gradient;
  }

  const MlpTrace trunk = params.encoder.forward(x);
  const MlpTrace head = params.latent_head.forward(trunk.output);
  const MappedPosterior mapped = map_posterior(spec, head.output);
  const PosteriorParams& post = mapped.params;
  const Index p = post.first.rows() ? post.first.cols() : static_cast<Index>(spec.stochastic_dims());
  Matrix d_first = Matrix::Zero(n, p);
  Matrix d_second = Matrix::Zero(n, p);

  if (!mc_kl(spec)) {
    const AnalyticKl kl = analytic_kl(spec, post, with_gradient);
    res.kl = kl.kl.rowwise().sum();
    if (with_gradient) {
      for (Index i = 0; i < n; ++i) {
        d_first.row(i) -= weights[i] * kl.d_first.row(i);
        d_second.row(i) -= weights[i] * kl.d_second.row(i);
      }
    }
  }

  MlpTrace cls_trace;
  Matrix probs;
  Matrix log_probs;
  if (semi) {
    cls_trace = params.classifier.forward(trunk.output);
    log_probs.resize(n, C);
    for (Index i = 0; i < n; ++i) {
      const double lse = cls_trace.output.row(i).maxCoeff() +
                         std::log((cls_trace.output.row(i).array() -
                                   cls_trace.output.row(i).maxCoeff()).exp().sum());
      log_probs.row(i) = cls_trace.output.row(i).array() - lse;
    }
    probs = log_probs.array().exp();
    res.class_probs = probs;
  }

  // Decoder rows: one per labeled or unsupervised example, C per unlabeled example.
  std::vector<Index> row_example;
  std::vector<int> row_class;
  for (Index i = 0; i < n; ++i) {
    if (!semi) {
      row_example.push_back(i);
      row_class.push_back(kUnlabeled);
    } else if (labels[i] != kUnlabeled) {
      row_example.push_back(i);
      row_class.push_back(labels[i]);
    } else {
      for (Index j = 0; j < C; ++j) {
        row_example.push_back(i);
        row_class.push_back(static_cast<int>(j));
      }
    }
  }
  const auto rows = static_cast<Index>(row_example.size());
  Matrix targets(rows, x.cols());
  for (Index r = 0; r < rows; ++r) targets.row(r) = x.row(row_example[r]);
  Matrix unlabeled_rec = Matrix::Zero(n, std::max<Index>(C, 1));

  for (std::size_t s = 0; s < S; ++s) {
    const Matrix* second = noise.second.empty() ? nullptr : &noise.second[s];
    if (noise.first[s].rows() != n || noise.first[s].cols() != p) {
      throw DimensionError("evaluate_objective: noise shape does not match batch");
    }
    const StochasticDraw draw = draw_stochastic(spec, post, noise.first[s], second, with_gradient);
    if (mc_kl(spec)) {
      res.kl += draw.kl.rowwise().sum() * inv_s;
      if (with_gradient) {
        for (Index i = 0; i < n; ++i) {
          d_first.row(i) -= weights[i] * inv_s * draw.kl_d_first.row(i);
          d_second.row(i) -= weights[i] * inv_s * draw.kl_d_second.row(i);
        }
      }
    }
    const Matrix z = to_latent(spec, draw.value);
    Matrix dec_in = Matrix::Zero(rows, K + C);
    for (Index r = 0; r < rows; ++r) {
      dec_in.row(r).head(K) = z.row(row_example[r]);
      if (row_class[r] != kUnlabeled) dec_in(r, K + row_class[r]) = 1.0;
    }
    const MlpTrace dec = params.decoder.forward(dec_in);
    const Vector ll = bernoulli_log_likelihood(dec.output, targets);
    Vector coeff(rows);
    for (Index r = 0; r < rows; ++r) {
      const Index i = row_example[r];
      if (semi && labels[i] == kUnlabeled) {
        unlabeled_rec(i, row_class[r]) += ll[r] * inv_s;
        coeff[r] = weights[i] * probs(i, row_class[r]) * inv_s;
      } else {
        res.reconstruction[i] += ll[r] * inv_s;
        coeff[r] = weights[i] * inv_s;
      }
    }
    if (with_gradient) {
      Matrix upstream = bernoulli_log_likelihood_grad(dec.output, targets);
      upstream.array().colwise() *= coeff.array();
      const Matrix d_in = params.decoder.backward_accumulate(dec, upstream, grad->decoder.layers());
      Matrix dz = Matrix::Zero(n, K);
      for (Index r = 0; r < rows; ++r) dz.row(row_example[r]) += d_in.row(r).head(K);
      const Matrix dv = spec.stick_breaking() ? compose_sticks_rows_backward(draw.value, dz) : dz;
      d_first += dv.cwiseProduct(draw.d_first);
      d_second += dv.cwiseProduct(draw.d_second);
    }
  }

  Matrix d_logits;
  if (semi) {
    d_logits = Matrix::Zero(n, C);
    for (Index i = 0; i < n; ++i) {
      if (labels[i] != kUnlabeled) {
        res.label_term[i] = log_probs(i, labels[i]);
        if (with_gradient) {
          d_logits.row(i) = -weights[i] * probs.row(i);
          d_logits(i, labels[i]) += weights[i];
        }
        continue;
      }
      double entropy = 0.0;
      double expected = 0.0;
      for (Index j = 0; j < C; ++j) {
        entropy -= probs(i, j) * log_probs(i, j);
        expected += probs(i, j) * unlabeled_rec(i, j);
      }
      res.reconstruction[i] = expected;
      res.label_term[i] = entropy;
      if (with_gradient) {
        // ∂J/∂q_j = rec_j - log q_j - 1, pushed through the softmax.
        RowVector dq(C);
        for (Index j = 0; j < C; ++j) dq[j] = weights[i] * (unlabeled_rec(i, j) - log_probs(i, j) - 1.0);
        const double mean = probs.row(i).dot(dq);
        d_logits.row(i) = probs.row(i).array() * (dq.array() - mean);
      }
    }
  }

  res.per_example = res.reconstruction - res.kl + res.label_term;
  res.objective = 0.0;
  for (Index i = 0; i < n; ++i) res.objective += weights[i] * res.per_example[i];

  if (with_gradient) {
    Matrix d_raw(n, 2 * p);
    d_raw.leftCols(p) = d_first.cwiseProduct(mapped.d_first_raw);
    d_raw.rightCols(p) = d_second.cwiseProduct(mapped.d_second_raw);
    Matrix d_trunk = params.latent_head.backward_accumulate(head, d_raw, grad->latent_head.layers());
    if (semi) d_trunk += params.classifier.backward_accumulate(cls_trace, d_logits, grad->classifier.layers());
    params.encoder.backward_accumulate(trunk, d_trunk, grad->encoder.layers());
  }
  return res;
}

ElboEstimate elbo_with_noise(const ModelSpec& spec, const ModelParams& params, const Matrix& x,
                             const Noise& noise) {
  if (spec.semi_supervised()) {
    throw ConfigError("elbo: semi-supervised models need labels; use the semi-supervised objectives");
  }
  const Index n = x.rows();
  const std::vector<double> weights(static_cast<std::size_t>(n), n ? 1.0 / static_cast<double>(n) : 0.0);
  const ObjectiveResult res = evaluate_objective(spec, params, x, {}, weights, noise, false);
  ElboEstimate est;
  est.per_example = res.per_example;
  est.per_example_reconstruction = res.reconstruction;
  est.per_example_kl = res.kl;
  if (n > 0) {
    est.expected_reconstruction = res.reconstruction.mean();
    est.kl = res.kl.mean();
    est.elbo = est.expected_reconstruction - est.kl;
  }
  return est;
}

ElboEstimate elbo(const ModelSpec& spec, const ModelParams& params, const Matrix& x, Rng& rng) {
  return elbo_with_noise(spec, params, x, draw_noise(spec, rng, x.rows(), spec.mc_samples));
}

// ---- Importance sampling -----------------------------------------------------

Vector marginal_log_likelihood_is(const ModelSpec& spec, const ModelParams& params,
                                  const Matrix& x, Rng& rng, std::size_t samples) {
  if (spec.semi_supervised()) {
    throw ConfigError("marginal_log_likelihood_is: only defined for unsupervised models");
  }
  if (samples < 1) throw ConfigError("marginal_log_likelihood_is: samples must be >= 1");
  const PosteriorParams post = posterior_params(spec, params, x);
  const Index n = x.rows();
  const Index p = post.first.cols();
  const BetaParams prior = spec.fraction_prior();
  const double neg_inf = -std::numeric_limits<double>::infinity();
  // Online log-sum-exp per row.
  Vector peak = Vector::Constant(n, neg_inf);
  Vector acc = Vector::Zero(n);

  for (std::size_t s = 0; s < samples; ++s) {
    const Noise noise = draw_noise(spec, rng, n, 1);
    Matrix stochastic(n, p);
    Vector log_ratio = Vector::Zero(n);  // log p(z) - log q(z)
    for (Index i = 0; i < n; ++i) {
      for (Index k = 0; k < p; ++k) {
        const double p1 = post.first(i, k);
        const double p2 = post.second(i, k);
        const double e1 = noise.first[0](i, k);
        double log_q = 0.0;
        double log_p = 0.0;
        if (!spec.stick_breaking()) {
          const double z = p1 + p2 * e1;
          stochastic(i, k) = z;
          log_q = normal_log_pdf(z, {p1, p2});
          log_p = normal_log_pdf(z, {0.0, 1.0});
        } else {
          double log_v = 0.0;
          double log_1mv = 0.0;
          switch (spec.fraction) {
            case FractionParam::kumaraswamy: {
              const KumaraswamyParams q{p1, p2};
              log_v = kumaraswamy_log_inverse_cdf(e1, q);
              log_1mv = log_v < 0.0 ? log1mexp(log_v) : neg_inf;
              // log(1 - v^a) = log(u) / b along the inverse-CDF path.
              log_q = std::log(p1) + std::log(p2) + (p1 - 1.0) * log_v + (p2 - 1.0) * std::log(e1) / p2;
              break;
            }
            case FractionParam::gamma: {
              const GammaCompositionParams q{p1, p2};
              const double t = gamma_composition_logit(e1, noise.second[0](i, k), q);
              log_v = -softplus(-t);
              log_1mv = -softplus(t);
              log_q = beta_log_pdf_from_logs(log_v, log_1mv, {p1, p2});
              break;
            }
            case FractionParam::gauss_logit: {
              const double t = p1 + p2 * e1;
              log_v = -softplus(-t);
              log_1mv = -softplus(t);
              log_q = logistic_normal_log_pdf_at_logit(t, {p1, p2});
              break;
            }
          }
          stochastic(i, k) = std::exp(log_v);
          log_p = std::isfinite(log_1mv) || prior.beta == 1.0
                      ? beta_log_pdf_from_logs(log_v, log_1mv, prior)
                      : (prior.beta > 1.0 ? neg_inf : std::numeric_limits<double>::infinity());
        }
        log_ratio[i] += log_p - log_q;
      }
    }
    const Matrix z = to_latent(spec, stochastic);
    const Vector ll = bernoulli_log_likelihood(params.decoder.predict(z), x);
    for (Index i = 0; i < n; ++i) {
      const double w = ll[i] + log_ratio[i];
      if (std::isnan(w)) {
        std::ostringstream msg;
        msg << "marginal_log_likelihood_is: NaN importance weight at row " << i;
        throw NumericError(msg.str());
      }
      if (w == neg_inf) continue;
      if (w > peak[i]) {
        acc[i] = acc[i] * std::exp(peak[i] - w) + 1.0;
        peak[i] = w;
      } else {
        acc[i] += std::exp(w - peak[i]);
      }
    }
  }
  Vector out(n);
  for (Index i = 0; i < n; ++i) {
    if (peak[i] == neg_inf) {
      std::ostringstream msg;
      msg << "marginal_log_likelihood_is: all importance weights are zero for row " << i;
      throw NumericError(msg.str());
    }
    out[i] = peak[i] + std::log(acc[i]) - std::log(static_cast<double>(samples));
  }
  return out;
}

// ---- Prior sampling ----------------------------------------------------------

Matrix prior_latents(const ModelSpec& spec, Rng& rng, std::size_t n,
                     std::optional<std::size_t> active_dims) {
  const auto rows = static_cast<Index>(n);
  const auto K = static_cast<Index>(spec.latent_dim);
  if (active_dims && (*active_dims < 1 || *active_dims > spec.latent_dim)) {
    throw ConfigError("active_dims must lie in [1, K]");
  }
  if (!spec.stick_breaking()) {
    Matrix z = draw_standard_normal(rng, rows, K);
    if (active_dims) z.rightCols(K - static_cast<Index>(*active_dims)).setZero();
    return z;
  }
  Matrix v = draw_uniform(rng, rows, K - 1);
  for (Index i = 0; i < v.size(); ++i) v.data()[i] = beta_one_quantile(v.data()[i], spec.alpha0);
  if (active_dims && *active_dims < spec.latent_dim) {
    v.col(static_cast<Index>(*active_dims) - 1).setOnes();
  }
  return compose_sticks_rows(v);
}

Matrix sample_from_prior(const ModelSpec& spec, const ModelParams& params, Rng& rng, std::size_t n,
                         std::optional<std::size_t> active_dims) {
  const Matrix z = prior_latents(spec, rng, n, active_dims);
  const auto K = static_cast<Index>(spec.latent_dim);
  const auto C = static_cast<Index>(spec.classes);
  Matrix dec_in = Matrix::Zero(z.rows(), K + C);
  dec_in.leftCols(K) = z;
  if (C > 0) {
    for (Index i = 0; i < z.rows(); ++i) dec_in(i, K + i % C) = 1.0;
  }
  Matrix means = params.decoder.predict(dec_in);
  for (Index i = 0; i < means.size(); ++i) means.data()[i] = sigmoid(means.data()[i]);
  return means;
}

// ---- Semi-supervised ---------------------------------------------------------

double semisup_labeled_objective(const ModelSpec& spec, const ModelParams& params,
                                 const Matrix& x, std::span<const int> y, Rng& rng) {
  if (!spec.semi_supervised()) throw ConfigError("semisup_labeled_objective: model has no classes");
  if (y.size() != static_cast<std::size_t>(x.rows())) throw DimensionError("semisup_labeled_objective: label count mismatch");
  for (int label : y) {
    if (label < 0 || label >= static_cast<int>(spec.classes)) {
      throw DomainError("semisup_labeled_objective: invalid label " + std::to_string(label));
    }
  }
  const Index n = x.rows();
  const std::vector<double> weights(static_cast<std::size_t>(n), 1.0 / static_cast<double>(n));
  const Noise noise = draw_noise(spec, rng, n, spec.mc_samples);
  return evaluate_objective(spec, params, x, y, weights, noise, false).objective;
}

double semisup_unlabeled_objective(const ModelSpec& spec, const ModelParams& params,
                                   const Matrix& x, Rng& rng) {
  if (!spec.semi_supervised()) throw ConfigError("semisup_unlabeled_objective: model has no classes");
  const Index n = x.rows();
  const std::vector<int> labels(static_cast<std::size_t>(n), kUnlabeled);
  const std::vector<double> weights(static_cast<std::size_t>(n), 1.0 / static_cast<double>(n));
  const Noise noise = draw_noise(spec, rng, n, spec.mc_samples);
  return evaluate_objective(spec, params, x, labels, weights, noise, false).objective;
}

Matrix class_probabilities(const ModelSpec& spec, const ModelParams& params, const Matrix& x) {
  if (!spec.semi_supervised()) throw ConfigError("classify: model has no classifier head");
  check_input(spec, x);
  return categorical_head(params.classifier, params.encoder.predict(x));
}

std::vector<int> argmax_rows(const Matrix& probs) {
  std::vector<int> out(static_cast<std::size_t>(probs.rows()));
  for (Index i = 0; i < probs.rows(); ++i) {
    Index best = 0;
    for (Index j = 1; j < probs.cols(); ++j) {
      if (probs(i, j) > probs(i, best)) best = j;
    }
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

std::vector<int> classify(const ModelSpec& spec, const ModelParams& params, const Matrix& x) {
  return argmax_rows(class_probabilities(spec, params, x));
}

// ---- Checkpoints -------------------------------------------------------------

void save_model(std::ostream& out, const ModelSpec& spec, const ModelParams& params) {
  out << "sbvae-model 1\n";
  out << "variant=" << to_string(spec.variant) << '\n';
  out << "fraction_param=" << to_string(spec.fraction) << '\n';
  out << "input_dim=" << spec.input_dim << '\n';
  out << "K=" << spec.latent_dim << '\n';
  out.precision(17);
  out << "alpha0=" << spec.alpha0 << '\n';
  out << "mc_samples=" << spec.mc_samples << '\n';
  out << "kl_terms=" << spec.kl_terms << '\n';
  out << "classes=" << spec.classes << '\n';
  out << "encoder_hidden=" << join(spec.encoder_hidden) << '\n';
  out << "decoder_hidden=" << join(spec.decoder_hidden) << '\n';
  out << "encoder_skip=" << join(spec.encoder_skip) << '\n';
  out << "decoder_skip=" << join(spec.decoder_skip) << '\n';
  out << "end\n";
  std::vector<Layer> layers;
  for (const Mlp* net : params.networks()) {
    layers.insert(layers.end(), net->layers().begin(), net->layers().end());
  }
  write_layers(out, layers);
}

void save_model(const std::string& path, const ModelSpec& spec, const ModelParams& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open checkpoint for writing: " + path);
  save_model(out, spec, params);
}

LoadedModel load_model(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "sbvae-model 1") {
    throw FormatError("model checkpoint: missing 'sbvae-model 1' header");
  }
  std::map<std::string, std::string> fields;
  while (std::getline(in, line) && line != "end") {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("model checkpoint: malformed header line '" + line + "'");
    fields[line.substr(0, eq)] = line.substr(eq + 1);
  }
  if (line != "end") throw FormatError("model checkpoint: header not terminated");
  auto field = [&](const std::string& key) -> const std::string& {
    const auto it = fields.find(key);
    if (it == fields.end()) throw FormatError("model checkpoint: missing header key '" + key + "'");
    return it->second;
  };
  LoadedModel loaded;
  ModelSpec& spec = loaded.spec;
  spec.variant = parse_variant(field("variant"));
  spec.fraction = parse_fraction_param(field("fraction_param"));
  spec.input_dim = std::stoull(field("input_dim"));
  spec.latent_dim = std::stoull(field("K"));
  spec.alpha0 = std::stod(field("alpha0"));
  spec.mc_samples = std::stoull(field("mc_samples"));
  spec.kl_terms = std::stoull(field("kl_terms"));
  spec.classes = std::stoull(field("classes"));
  spec.encoder_hidden = parse_sizes(field("encoder_hidden"));
  spec.decoder_hidden = parse_sizes(field("decoder_hidden"));
  spec.encoder_skip = parse_flags(field("encoder_skip"));
  spec.decoder_skip = parse_flags(field("decoder_skip"));
  spec.validate();

  ModelParams& params = loaded.params;
  params.encoder = Mlp(spec.encoder_config());
  params.latent_head = Mlp(spec.latent_head_config());
  if (spec.semi_supervised()) params.classifier = Mlp(spec.classifier_config());
  params.decoder = Mlp(spec.decoder_config());

  const std::vector<Layer> layers = read_layers(in);
  std::size_t next = 0;
  for (Mlp* net : params.networks()) {
    for (Layer& layer : net->layers()) {
      if (next >= layers.size()) throw FormatError("model checkpoint: fewer layers than the header implies");
      const Layer& stored = layers[next++];
      if (stored.weight.rows() != layer.weight.rows() || stored.weight.cols() != layer.weight.cols()) {
        std::ostringstream msg;
        msg << "model checkpoint: layer " << next - 1 << " has shape " << stored.weight.rows() << "x"
            << stored.weight.cols() << ", expected " << layer.weight.rows() << "x" << layer.weight.cols();
        throw FormatError(msg.str());
      }
      layer = stored;
    }
  }
  if (next != layers.size()) throw FormatError("model checkpoint: more layers than the header implies");
  return loaded;
}

LoadedModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint: " + path);
  return load_model(in);
}

}  // namespace sbvae
