#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sbvae/distributions.hpp"
#include "sbvae/nn.hpp"
#include "sbvae/numerics.hpp"
#include "sbvae/stick.hpp"

namespace sbvae {

enum class Variant { gauss_vae, sb_vae };
enum class FractionParam { kumaraswamy, gamma, gauss_logit };

std::string to_string(Variant v);
std::string to_string(FractionParam f);
Variant parse_variant(std::string_view text);
FractionParam parse_fraction_param(std::string_view text);

inline constexpr int kUnlabeled = -1;
inline constexpr std::size_t kDefaultImportanceSamples = 100;

struct ModelSpec {
  Variant variant = Variant::sb_vae;
  FractionParam fraction = FractionParam::kumaraswamy;
  std::size_t input_dim = 784;
  // Gaussian latent dimension, or stick truncation level K.
  std::size_t latent_dim = kDefaultTruncation;
  double alpha0 = 5.0;
  std::size_t mc_samples = 1;
  std::size_t kl_terms = kDefaultKlTerms;
  // Number of classes for the semi-supervised model; 0 means unsupervised.
  std::size_t classes = 0;
  std::vector<std::size_t> encoder_hidden{500};
  std::vector<std::size_t> decoder_hidden{500};
  // Skip flags per network layer (index 0 is the input layer).
  std::vector<bool> encoder_skip;
  std::vector<bool> decoder_skip;

  bool stick_breaking() const { return variant == Variant::sb_vae; }
  bool semi_supervised() const { return classes > 0; }
  // K-1 stochastic fractions for stick-breaking, K coordinates for Gaussian.
  std::size_t stochastic_dims() const { return stick_breaking() ? latent_dim - 1 : latent_dim; }
  BetaParams fraction_prior() const { return gem_prior_fraction_params(GemPrior{alpha0}); }

  MlpConfig encoder_config() const;
  MlpConfig latent_head_config() const;
  MlpConfig classifier_config() const;
  MlpConfig decoder_config() const;
  void validate() const;
};

struct ModelParams {
  Mlp encoder;      // x -> shared trunk features
  Mlp latent_head;  // features -> 2P unconstrained posterior outputs
  Mlp classifier;   // features -> class logits; empty when unsupervised
  Mlp decoder;      // [z, onehot(y)] -> Bernoulli logits

  std::vector<Mlp*> networks();
  std::vector<const Mlp*> networks() const;
  std::vector<std::span<double>> blocks();
  std::vector<std::span<const double>> blocks() const;
  std::vector<std::string> block_names() const;
  std::size_t parameter_count() const;
  ModelParams zeros_like() const;
  std::vector<double> flatten() const;
  void assign(std::span<const double> flat);
};

ModelParams init_model(const ModelSpec& spec, Rng& rng,
                       double weight_variance = kInitWeightVariance);

// Frozen noise for S Monte Carlo samples: uniforms for Kumaraswamy and Gamma
// (the Gamma variant also fills `second`), standard normals for the Gaussian
// latent and Gauss-Logit. Each matrix is rows × stochastic_dims.
struct Noise {
  std::vector<Matrix> first;
  std::vector<Matrix> second;
  std::size_t samples() const { return first.size(); }
};
Noise draw_noise(const ModelSpec& spec, Rng& rng, Eigen::Index rows, std::size_t samples);

// Positive-mapped posterior parameters per stochastic coordinate:
// (a, b) Kumaraswamy, (a_x, a_y) Gamma composition, (μ, σ) Gaussian and Gauss-Logit.
struct PosteriorParams {
  Matrix first;
  Matrix second;
};
PosteriorParams posterior_params(const ModelSpec& spec, const ModelParams& params, const Matrix& x);

struct Encoding {
  PosteriorParams posterior;
  std::vector<Matrix> latents;  // per sample, rows × K (π on the simplex for stick-breaking)
  Vector kl;                    // per example, averaged over samples for MC estimates
};
Encoding encode(const ModelSpec& spec, const ModelParams& params, const Matrix& x, Rng& rng);
Encoding encode_with_noise(const ModelSpec& spec, const ModelParams& params, const Matrix& x,
                           const Noise& noise);
// Deterministic code: μ for Gaussian, composition of fraction means for stick-breaking.
Matrix posterior_mean_latents(const ModelSpec& spec, const ModelParams& params, const Matrix& x);

struct ElboEstimate {
  double expected_reconstruction = 0.0;  // batch mean of (1/S) Σ_s log p(x | z_s)
  double kl = 0.0;
  double elbo = 0.0;
  Vector per_example;
  Vector per_example_reconstruction;
  Vector per_example_kl;
};

struct ObjectiveResult {
  double objective = 0.0;  // Σ_i w_i J_i
  Vector per_example;      // J_i
  Vector reconstruction;   // expected log-likelihood; q(y|x)-weighted for unlabeled rows
  Vector kl;
  Vector label_term;       // log q(y|x) for labeled rows, entropy for unlabeled rows
  Matrix class_probs;      // rows × C when semi-supervised
  std::optional<ModelParams> gradient;  // ∂objective/∂θ when requested
};

// Core evaluator shared by every variant. `labels` is empty for unsupervised
// specs; for semi-supervised specs it holds a class or kUnlabeled per row.
// Unlabeled rows enumerate all classes with one shared set of latent samples.
ObjectiveResult evaluate_objective(const ModelSpec& spec, const ModelParams& params,
                                   const Matrix& x, std::span<const int> labels,
                                   std::span<const double> weights, const Noise& noise,
                                   bool with_gradient);

ElboEstimate elbo(const ModelSpec& spec, const ModelParams& params, const Matrix& x, Rng& rng);
ElboEstimate elbo_with_noise(const ModelSpec& spec, const ModelParams& params, const Matrix& x,
                             const Noise& noise);

// log (1/S) Σ_s p(x|z_s) p(z_s) / q(z_s|x), densities over the K-1 fractions for stick-breaking.
Vector marginal_log_likelihood_is(const ModelSpec& spec, const ModelParams& params,
                                  const Matrix& x, Rng& rng,
                                  std::size_t samples = kDefaultImportanceSamples);

// Decoded Bernoulli means for n prior draws. With active_dims = d the stick is
// forced to end at coordinate d (Gaussian: coordinates past d are zeroed).
// Semi-supervised decoders cycle through the classes row by row.
Matrix sample_from_prior(const ModelSpec& spec, const ModelParams& params, Rng& rng,
                         std::size_t n, std::optional<std::size_t> active_dims = std::nullopt);
Matrix prior_latents(const ModelSpec& spec, Rng& rng, std::size_t n,
                     std::optional<std::size_t> active_dims = std::nullopt);

// Batch means of the labeled and unlabeled semi-supervised objectives.
double semisup_labeled_objective(const ModelSpec& spec, const ModelParams& params,
                                 const Matrix& x, std::span<const int> y, Rng& rng);
double semisup_unlabeled_objective(const ModelSpec& spec, const ModelParams& params,
                                   const Matrix& x, Rng& rng);

Matrix class_probabilities(const ModelSpec& spec, const ModelParams& params, const Matrix& x);
// Argmax of q(y|x); ties go to the lower class index.
std::vector<int> classify(const ModelSpec& spec, const ModelParams& params, const Matrix& x);
std::vector<int> argmax_rows(const Matrix& probs);

// Plain-text spec header followed by the binary layer container.
void save_model(std::ostream& out, const ModelSpec& spec, const ModelParams& params);
void save_model(const std::string& path, const ModelSpec& spec, const ModelParams& params);
struct LoadedModel {
  ModelSpec spec;
  ModelParams params;
};
LoadedModel load_model(std::istream& in);
LoadedModel load_model(const std::string& path);

}  // namespace sbvae
