#include "sbvae/distributions.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "sbvae/errors.hpp"

namespace sbvae {

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;

void require_unit_open(double u, const char* what) {
  if (!(u > 0.0 && u < 1.0)) {
    std::ostringstream msg;
    msg << what << ": argument must lie in (0,1), got " << u;
    throw DomainError(msg.str());
  }
}

void require_positive(double v, const char* what) {
  if (!(v > 0.0) || !std::isfinite(v)) {
    std::ostringstream msg;
    msg << what << ": parameter must be positive and finite, got " << v;
    throw DomainError(msg.str());
  }
}

// c * log_value, treating 0 * (-inf) as 0 (shape exactly 1).
double scaled_log(double c, double log_value) { return c == 0.0 ? 0.0 : c * log_value; }

}  // namespace

void validate(const KumaraswamyParams& p) {
  require_positive(p.a, "Kumaraswamy a");
  require_positive(p.b, "Kumaraswamy b");
}

void validate(const BetaParams& p) {
  require_positive(p.alpha, "Beta alpha");
  require_positive(p.beta, "Beta beta");
}

double kumaraswamy_log_inverse_cdf(double u, const KumaraswamyParams& p) {
  require_unit_open(u, "kumaraswamy_inverse_cdf");
  validate(p);
  return log1mexp(std::log(u) / p.b) / p.a;
}

double kumaraswamy_inverse_cdf(double u, const KumaraswamyParams& p) {
  return std::exp(kumaraswamy_log_inverse_cdf(u, p));
}

ShapeGradient kumaraswamy_inverse_cdf_grad(double u, const KumaraswamyParams& p) {
  require_unit_open(u, "kumaraswamy_inverse_cdf_grad");
  validate(p);
  const double log_u = std::log(u);
  const double log_w = log_u / p.b;           // w = u^{1/b}
  const double log_1mw = log1mexp(log_w);     // log(1 - w)
  const double x = std::exp(log_1mw / p.a);
  const double d_a = -x * log_1mw / (p.a * p.a);
  // (1/a) (1-w)^{1/a - 1} w log(u) / b²
  const double d_b =
      std::exp((1.0 / p.a - 1.0) * log_1mw + log_w) * log_u / (p.a * p.b * p.b);
  return {d_a, d_b};
}

double kumaraswamy_cdf(double x, const KumaraswamyParams& p) {
  validate(p);
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  return -std::expm1(p.b * std::log1p(-std::pow(x, p.a)));
}

double kumaraswamy_log_pdf(double x, const KumaraswamyParams& p) {
  require_unit_open(x, "kumaraswamy_log_pdf");
  validate(p);
  return std::log(p.a) + std::log(p.b) + (p.a - 1.0) * std::log(x) +
         (p.b - 1.0) * std::log1p(-std::pow(x, p.a));
}

double kumaraswamy_mean(const KumaraswamyParams& p) {
  validate(p);
  return std::exp(std::log(p.b) + log_beta(1.0 + 1.0 / p.a, p.b));
}

double kl_kumaraswamy_beta(const KumaraswamyParams& q, const BetaParams& p, std::size_t terms) {
  validate(q);
  validate(p);
  if (terms == 0) throw DomainError("kl_kumaraswamy_beta: terms must be >= 1");
  const double a = q.a;
  const double b = q.b;
  double series = 0.0;
  for (std::size_t m = 1; m <= terms; ++m) {
    const double md = static_cast<double>(m);
    series += std::exp(log_beta(md / a, b)) / (md + a * b);
  }
  const double kl = (a - p.alpha) / a * (-kEulerGamma - digamma(b) - 1.0 / b) +
                    std::log(a * b) + log_beta(p.alpha, p.beta) - (b - 1.0) / b +
                    (p.beta - 1.0) * b * series;
  if (!std::isfinite(kl)) {
    std::ostringstream msg;
    msg << "kl_kumaraswamy_beta: non-finite result for a=" << a << " b=" << b
        << " alpha=" << p.alpha << " beta=" << p.beta << " terms=" << terms;
    throw NumericError(msg.str());
  }
  return kl;
}

ShapeGradient kl_kumaraswamy_beta_grad(const KumaraswamyParams& q, const BetaParams& p,
                                       std::size_t terms) {
  validate(q);
  validate(p);
  if (terms == 0) throw DomainError("kl_kumaraswamy_beta_grad: terms must be >= 1");
  const double a = q.a;
  const double b = q.b;
  const double psi_b = digamma(b);
  double series = 0.0;
  double series_da = 0.0;
  double series_db = 0.0;
  for (std::size_t m = 1; m <= terms; ++m) {
    const double md = static_cast<double>(m);
    const double ratio = md / a;
    const double beta_m = std::exp(log_beta(ratio, b));
    const double denom = md + a * b;
    const double psi_sum = digamma(ratio + b);
    const double dbeta_da = beta_m * (digamma(ratio) - psi_sum) * (-md / (a * a));
    const double dbeta_db = beta_m * (psi_b - psi_sum);
    series += beta_m / denom;
    series_da += dbeta_da / denom - beta_m * b / (denom * denom);
    series_db += dbeta_db / denom - beta_m * a / (denom * denom);
  }
  const double bracket = -kEulerGamma - psi_b - 1.0 / b;
  const double d_a = p.alpha / (a * a) * bracket + 1.0 / a + (p.beta - 1.0) * b * series_da;
  const double d_b = (a - p.alpha) / a * (-trigamma(b) + 1.0 / (b * b)) + 1.0 / b -
                     1.0 / (b * b) + (p.beta - 1.0) * (series + b * series_db);
  if (!std::isfinite(d_a) || !std::isfinite(d_b)) {
    std::ostringstream msg;
    msg << "kl_kumaraswamy_beta_grad: non-finite result for a=" << a << " b=" << b
        << " alpha=" << p.alpha << " beta=" << p.beta;
    throw NumericError(msg.str());
  }
  return {d_a, d_b};
}

double beta_log_pdf(double x, const BetaParams& p) {
  require_unit_open(x, "beta_log_pdf");
  return beta_log_pdf_from_logs(std::log(x), std::log1p(-x), p);
}

double beta_log_pdf_from_logs(double log_x, double log_1mx, const BetaParams& p) {
  validate(p);
  return scaled_log(p.alpha - 1.0, log_x) + scaled_log(p.beta - 1.0, log_1mx) -
         log_beta(p.alpha, p.beta);
}

double beta_one_quantile(double u, double beta) {
  require_unit_open(u, "beta_one_quantile");
  require_positive(beta, "beta_one_quantile beta");
  return -std::expm1(std::log1p(-u) / beta);
}

double gamma_approx_log_inverse_cdf(double u, double shape) {
  require_unit_open(u, "gamma_approx_inverse_cdf");
  require_positive(shape, "gamma_approx_inverse_cdf shape");
  // log(u a Γ(a)) = log u + log Γ(a + 1)
  return (std::log(u) + std::lgamma(shape + 1.0)) / shape;
}

double gamma_approx_log_inverse_cdf_grad(double u, double shape) {
  const double value = gamma_approx_log_inverse_cdf(u, shape);
  return (digamma(shape + 1.0) - value) / shape;
}

double gamma_approx_inverse_cdf(double u, double shape, double scale) {
  require_positive(scale, "gamma_approx_inverse_cdf scale");
  return std::exp(gamma_approx_log_inverse_cdf(u, shape)) / scale;
}

double gamma_composition_logit(double u_x, double u_y, const GammaCompositionParams& p) {
  return gamma_approx_log_inverse_cdf(u_x, p.a_x) - gamma_approx_log_inverse_cdf(u_y, p.a_y);
}

double gamma_composition_fraction(double u_x, double u_y, const GammaCompositionParams& p) {
  const double v = sigmoid(gamma_composition_logit(u_x, u_y, p));
  if (!(v > 0.0 && v < 1.0)) {
    std::ostringstream msg;
    msg << "gamma_composition_fraction: x + y underflow (fraction saturated) for a_x=" << p.a_x
        << " a_y=" << p.a_y << " u_x=" << u_x << " u_y=" << u_y;
    throw NumericError(msg.str());
  }
  return v;
}

ShapeGradient gamma_composition_fraction_grad(double u_x, double u_y,
                                              const GammaCompositionParams& p) {
  const double v = sigmoid(gamma_composition_logit(u_x, u_y, p));
  const double dv_dt = v * (1.0 - v);
  return {dv_dt * gamma_approx_log_inverse_cdf_grad(u_x, p.a_x),
          -dv_dt * gamma_approx_log_inverse_cdf_grad(u_y, p.a_y)};
}

double kl_gamma_composition_sample(double logit, const GammaCompositionParams& q,
                                   const BetaParams& p) {
  const double log_v = -softplus(-logit);
  const double log_1mv = -softplus(logit);
  const BetaParams approx{q.a_x, q.a_y};
  return beta_log_pdf_from_logs(log_v, log_1mv, approx) - beta_log_pdf_from_logs(log_v, log_1mv, p);
}

ShapeGradient kl_gamma_composition_sample_grad(double u_x, double u_y,
                                               const GammaCompositionParams& q,
                                               const BetaParams& p) {
  const double t = gamma_composition_logit(u_x, u_y, q);
  const double v = sigmoid(t);
  const double log_v = -softplus(-t);
  const double log_1mv = -softplus(t);
  const double psi_sum = digamma(q.a_x + q.a_y);
  const double d_t = (q.a_x - p.alpha) * (1.0 - v) - (q.a_y - p.beta) * v;
  const double d_ax = log_v - digamma(q.a_x) + psi_sum +
                      d_t * gamma_approx_log_inverse_cdf_grad(u_x, q.a_x);
  const double d_ay = log_1mv - digamma(q.a_y) + psi_sum -
                      d_t * gamma_approx_log_inverse_cdf_grad(u_y, q.a_y);
  return {d_ax, d_ay};
}

double gauss_logit_fraction(double eps, const NormalParams& g) {
  return sigmoid(g.mu + g.sigma * eps);
}

double logistic_normal_log_pdf_at_logit(double logit, const NormalParams& g) {
  require_positive(g.sigma, "logistic-normal sigma");
  const double eps = (logit - g.mu) / g.sigma;
  // Gaussian density of the logit plus the Jacobian 1 / (v (1 - v)).
  return -0.5 * eps * eps - std::log(g.sigma) - kHalfLog2Pi + softplus(-logit) + softplus(logit);
}

double kl_gauss_logit_from_noise(double eps, const NormalParams& g, const BetaParams& p) {
  require_positive(g.sigma, "kl_gauss_logit sigma");
  validate(p);
  const double t = g.mu + g.sigma * eps;
  return -0.5 * eps * eps - std::log(g.sigma) - kHalfLog2Pi + p.alpha * softplus(-t) +
         p.beta * softplus(t) + log_beta(p.alpha, p.beta);
}

double kl_gauss_logit(const NormalParams& g, const BetaParams& p, double v_sample) {
  require_unit_open(v_sample, "kl_gauss_logit");
  require_positive(g.sigma, "kl_gauss_logit sigma");
  const double t = std::log(v_sample) - std::log1p(-v_sample);
  return kl_gauss_logit_from_noise((t - g.mu) / g.sigma, g, p);
}

ShapeGradient kl_gauss_logit_from_noise_grad(double eps, const NormalParams& g,
                                             const BetaParams& p) {
  require_positive(g.sigma, "kl_gauss_logit sigma");
  const double t = g.mu + g.sigma * eps;
  const double v = sigmoid(t);
  const double d_t = -p.alpha * (1.0 - v) + p.beta * v;
  return {d_t, -1.0 / g.sigma + eps * d_t};
}

double kl_normal_std_normal(const NormalParams& g) {
  require_positive(g.sigma, "kl_normal_std_normal sigma");
  return 0.5 * (g.mu * g.mu + g.sigma * g.sigma - 1.0) - std::log(g.sigma);
}

double kl_diag_gaussian_std_normal(const GaussianParams& g) {
  if (g.mu.size() != g.sigma.size()) throw DimensionError("kl_diag_gaussian_std_normal: size mismatch");
  double total = 0.0;
  for (Eigen::Index d = 0; d < g.mu.size(); ++d) total += kl_normal_std_normal({g.mu[d], g.sigma[d]});
  return total;
}

double normal_log_pdf(double z, const NormalParams& g) {
  const double eps = (z - g.mu) / g.sigma;
  return -0.5 * eps * eps - std::log(g.sigma) - kHalfLog2Pi;
}

}  // namespace sbvae
