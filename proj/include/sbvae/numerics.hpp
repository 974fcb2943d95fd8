#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace sbvae {

// Row-major dense matrix; rows are examples, columns are features.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

inline constexpr double kEulerGamma = 0.57721566490153286061;
inline constexpr double kUniformClamp = 1e-7;

// Seeded PCG32 stream (64-bit LCG state with permuted 32-bit output).
// Single owner; copy it to fork a replayable stream.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  std::uint32_t next_u32();
  // Uniform on [0, 1) with 53 random bits.
  double uniform();
  // Box-Muller; caches the second variate.
  double standard_normal();
  // Unbiased integer in [0, n).
  std::uint64_t uniform_index(std::uint64_t n);

  // Independent stream keyed by (seed, tag); does not advance *this.
  Rng derive(std::uint64_t tag) const;

  std::uint64_t seed() const { return seed_; }

  // UniformRandomBitGenerator interface.
  using result_type = std::uint32_t;
  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return 0xffffffffu; }
  result_type operator()() { return next_u32(); }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t state_ = 0;
  std::uint64_t inc_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Entries i.i.d. Uniform(0,1), clamped into [1e-7, 1 - 1e-7].
Matrix draw_uniform(Rng& rng, Eigen::Index rows, Eigen::Index cols);
Matrix draw_standard_normal(Rng& rng, Eigen::Index rows, Eigen::Index cols);

double digamma(double x);
double trigamma(double x);
double log_gamma(double x);
double log_beta(double a, double b);

inline double sigmoid(double t) {
  if (t >= 0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

// log(1 + e^t) without overflow.
inline double softplus(double t) {
  return t > 0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t));
}

// log(1 - e^c) for c < 0.
inline double log1mexp(double c) {
  return c > -0.6931471805599453 ? std::log(-std::expm1(c)) : std::log1p(-std::exp(c));
}

// Central differences (f(θ + h e_i) - f(θ - h e_i)) / 2h.
// Throws NumericError if f is non-finite at a probe point.
std::vector<double> finite_difference_gradient(
    const std::function<double(std::span<const double>)>& f,
    std::span<const double> theta, double h);

// Stable log(Σ exp(x_i)); -inf for an empty or all -inf input.
double log_sum_exp(std::span<const double> xs);

}  // namespace sbvae
