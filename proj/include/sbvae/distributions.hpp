#pragma once

#include <cstddef>

#include "sbvae/numerics.hpp"

namespace sbvae {

// Floor added after softplus when mapping unconstrained outputs to shapes.
inline constexpr double kPositiveFloor = 1e-4;
inline constexpr std::size_t kDefaultKlTerms = 10;

struct KumaraswamyParams {
  double a;
  double b;
};

struct BetaParams {
  double alpha;
  double beta;
};

// One coordinate of a diagonal Gaussian.
struct NormalParams {
  double mu;
  double sigma;
};

// Diagonal Gaussian over a vector.
struct GaussianParams {
  Vector mu;
  Vector sigma;
};

// Shapes of the two Gamma(shape, 1) draws whose ratio x / (x + y) approximates a Beta fraction.
struct GammaCompositionParams {
  double a_x;
  double a_y;
};

struct ShapeGradient {
  double d_first;   // ∂/∂(a, α, μ or a_x)
  double d_second;  // ∂/∂(b, β, σ or a_y)
};

// softplus(t) + 1e-4, and its derivative sigmoid(t).
inline double positive_from_unconstrained(double t) { return softplus(t) + kPositiveFloor; }
inline double positive_from_unconstrained_grad(double t) { return sigmoid(t); }

void validate(const KumaraswamyParams& p);
void validate(const BetaParams& p);

// ---- Kumaraswamy -------------------------------------------------------------

// x = (1 - u^{1/b})^{1/a}.
double kumaraswamy_inverse_cdf(double u, const KumaraswamyParams& p);
// (∂x/∂a, ∂x/∂b) at fixed u.
ShapeGradient kumaraswamy_inverse_cdf_grad(double u, const KumaraswamyParams& p);
// log x computed without forming x; stays finite when x underflows.
double kumaraswamy_log_inverse_cdf(double u, const KumaraswamyParams& p);
double kumaraswamy_cdf(double x, const KumaraswamyParams& p);
double kumaraswamy_log_pdf(double x, const KumaraswamyParams& p);
// b B(1 + 1/a, b).
double kumaraswamy_mean(const KumaraswamyParams& p);

// KL(Kumaraswamy(a,b) || Beta(α,β)) with the E_q[log(1-v)] Taylor series cut at `terms`.
double kl_kumaraswamy_beta(const KumaraswamyParams& q, const BetaParams& p,
                           std::size_t terms = kDefaultKlTerms);
// Exact partials of the truncated expression above.
ShapeGradient kl_kumaraswamy_beta_grad(const KumaraswamyParams& q, const BetaParams& p,
                                       std::size_t terms = kDefaultKlTerms);

// ---- Beta --------------------------------------------------------------------

double beta_log_pdf(double x, const BetaParams& p);
// Same density given log x and log(1 - x); usable at the edges of (0,1).
double beta_log_pdf_from_logs(double log_x, double log_1mx, const BetaParams& p);
// Exact quantile of Beta(1, β): 1 - (1 - u)^{1/β}.
double beta_one_quantile(double u, double beta);

// ---- Gamma composition -------------------------------------------------------

// (u a Γ(a))^{1/a} / b.
double gamma_approx_inverse_cdf(double u, double shape, double scale);
// log of the unit-scale approximation and its derivative in the shape.
double gamma_approx_log_inverse_cdf(double u, double shape);
double gamma_approx_log_inverse_cdf_grad(double u, double shape);

// x / (x + y) for the two approximate Gamma draws.
double gamma_composition_fraction(double u_x, double u_y, const GammaCompositionParams& p);
// log(x / y), the logit of the fraction.
double gamma_composition_logit(double u_x, double u_y, const GammaCompositionParams& p);
ShapeGradient gamma_composition_fraction_grad(double u_x, double u_y,
                                              const GammaCompositionParams& p);

// Single-sample estimate log Beta(v; a_x, a_y) - log Beta(v; α, β), with v given by its logit t.
double kl_gamma_composition_sample(double logit, const GammaCompositionParams& q,
                                   const BetaParams& p);
// Partials w.r.t. (a_x, a_y) holding the noise fixed, including the path through v.
ShapeGradient kl_gamma_composition_sample_grad(double u_x, double u_y,
                                               const GammaCompositionParams& q,
                                               const BetaParams& p);

// ---- Gauss-Logit -------------------------------------------------------------

// logistic(μ + σ ε).
double gauss_logit_fraction(double eps, const NormalParams& g);
// Density that logistic(N(μ, σ²)) induces on (0,1), evaluated through t = logit(v).
double logistic_normal_log_pdf_at_logit(double logit, const NormalParams& g);

// Single-sample estimate log q_LN(v) - log Beta(v; α, β).
double kl_gauss_logit(const NormalParams& g, const BetaParams& p, double v_sample);
// Same estimate given the noise that produced the sample.
double kl_gauss_logit_from_noise(double eps, const NormalParams& g, const BetaParams& p);
// Partials w.r.t. (μ, σ) at fixed ε.
ShapeGradient kl_gauss_logit_from_noise_grad(double eps, const NormalParams& g,
                                             const BetaParams& p);

// ---- Gaussian ----------------------------------------------------------------

// 0.5 Σ (μ² + σ² - 1 - 2 log σ).
double kl_diag_gaussian_std_normal(const GaussianParams& g);
double kl_normal_std_normal(const NormalParams& g);
double normal_log_pdf(double z, const NormalParams& g);

}  // namespace sbvae
