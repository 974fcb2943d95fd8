#include "sbvae/stick.hpp"

#include <sstream>

#include "sbvae/errors.hpp"

namespace sbvae {

StickFractions StickFractions::from_stochastic(std::span<const double> leading) {
  std::vector<double> full(leading.begin(), leading.end());
  full.push_back(1.0);
  return StickFractions(std::move(full));
}

StickFractions::StickFractions(std::vector<double> full) : v_(std::move(full)) {
  if (v_.empty()) throw DomainError("StickFractions: truncation level must be >= 1");
  if (v_.back() != 1.0) throw DomainError("StickFractions: last fraction must equal 1");
  for (std::size_t k = 0; k + 1 < v_.size(); ++k) {
    if (!(v_[k] > 0.0 && v_[k] <= 1.0)) {
      std::ostringstream msg;
      msg << "StickFractions: fraction " << k << " = " << v_[k] << " outside (0,1]";
      throw DomainError(msg.str());
    }
  }
}

StickWeights compose_sticks(const StickFractions& f) {
  StickWeights w;
  w.pi.resize(f.truncation());
  double remaining = 1.0;
  for (std::size_t k = 0; k < f.truncation(); ++k) {
    w.pi[k] = f[k] * remaining;
    remaining *= 1.0 - f[k];
  }
  return w;
}

Matrix compose_sticks_jacobian(const StickFractions& f) {
  const std::size_t K = f.truncation();
  Matrix jac = Matrix::Zero(static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(K - 1));
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t j = 0; j <= k && j + 1 < K; ++j) {
      double prod = 1.0;
      for (std::size_t l = 0; l < k; ++l) {
        if (l != j) prod *= 1.0 - f[l];
      }
      jac(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) =
          j == k ? prod : -f[k] * prod;
    }
  }
  return jac;
}

Matrix compose_sticks_rows(const Matrix& leading) {
  const Eigen::Index n = leading.rows();
  const Eigen::Index stochastic = leading.cols();
  Matrix pi(n, stochastic + 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    double remaining = 1.0;
    for (Eigen::Index k = 0; k < stochastic; ++k) {
      pi(i, k) = leading(i, k) * remaining;
      remaining *= 1.0 - leading(i, k);
    }
    pi(i, stochastic) = remaining;
  }
  return pi;
}

Matrix compose_sticks_rows_backward(const Matrix& leading, const Matrix& weight_grad) {
  const Eigen::Index n = leading.rows();
  const Eigen::Index stochastic = leading.cols();
  if (weight_grad.rows() != n || weight_grad.cols() != stochastic + 1) {
    throw DimensionError("compose_sticks_rows_backward: gradient shape mismatch");
  }
  Matrix grad(n, stochastic);
  std::vector<double> remaining(static_cast<std::size_t>(stochastic) + 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    // remaining[k] = Π_{j<k} (1 - v_j)
    remaining[0] = 1.0;
    for (Eigen::Index k = 0; k < stochastic; ++k) {
      remaining[k + 1] = remaining[k] * (1.0 - leading(i, k));
    }
    // Reverse sweep with π_K = remaining[K-1] (v_K = 1).
    double d_remaining = weight_grad(i, stochastic);
    for (Eigen::Index k = stochastic - 1; k >= 0; --k) {
      const double v = leading(i, k);
      grad(i, k) = weight_grad(i, k) * remaining[k] - d_remaining * remaining[k];
      d_remaining = weight_grad(i, k) * v + d_remaining * (1.0 - v);
    }
  }
  return grad;
}

BetaParams gem_prior_fraction_params(const GemPrior& prior) {
  if (!(prior.alpha0 > 0.0)) throw DomainError("GemPrior: alpha0 must be positive");
  return {1.0, prior.alpha0};
}

std::size_t effective_dimension(std::span<const double> pi, double mass) {
  if (!(mass > 0.0 && mass < 1.0)) throw DomainError("effective_dimension: mass must lie in (0,1)");
  double total = 0.0;
  for (std::size_t k = 0; k < pi.size(); ++k) {
    total += pi[k];
    if (total >= mass) return k + 1;
  }
  return pi.size();
}

}  // namespace sbvae
