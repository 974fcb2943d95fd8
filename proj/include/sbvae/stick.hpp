#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "sbvae/distributions.hpp"
#include "sbvae/numerics.hpp"

namespace sbvae {

inline constexpr double kDefaultStickMass = 0.99;
inline constexpr std::size_t kDefaultTruncation = 50;

// Length-K fractions with v_K = 1; the first K-1 lie in (0,1).
class StickFractions {
 public:
  // Takes the K-1 stochastic fractions and appends the terminal 1.
  static StickFractions from_stochastic(std::span<const double> leading);
  // Takes all K entries; the last must equal 1 exactly.
  explicit StickFractions(std::vector<double> full);

  std::size_t truncation() const { return v_.size(); }
  std::span<const double> values() const { return v_; }
  double operator[](std::size_t k) const { return v_[k]; }

 private:
  std::vector<double> v_;
};

struct StickWeights {
  std::vector<double> pi;
};

struct GemPrior {
  double alpha0 = 5.0;
};

// π_1 = v_1, π_k = v_k Π_{j<k} (1 - v_j).
StickWeights compose_sticks(const StickFractions& f);
// ∂π/∂v over the K-1 stochastic fractions: K rows, K-1 columns.
Matrix compose_sticks_jacobian(const StickFractions& f);

// Batched composition: each row of `leading` holds K-1 fractions; output rows hold K weights.
Matrix compose_sticks_rows(const Matrix& leading);
// Vector-Jacobian product of compose_sticks_rows: dL/dv from dL/dπ, O(K) per row.
Matrix compose_sticks_rows_backward(const Matrix& leading, const Matrix& weight_grad);

// Beta(1, α₀) for every fraction.
BetaParams gem_prior_fraction_params(const GemPrior& prior);

// Smallest n with Σ_{k<=n} π_k >= mass.
std::size_t effective_dimension(std::span<const double> pi, double mass = kDefaultStickMass);
inline std::size_t effective_dimension(const StickWeights& w, double mass = kDefaultStickMass) {
  return effective_dimension(std::span<const double>(w.pi), mass);
}

}  // namespace sbvae
