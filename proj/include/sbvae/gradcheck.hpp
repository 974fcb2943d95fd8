#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sbvae/model.hpp"

namespace sbvae {

inline constexpr double kGradcheckStep = 1e-6;
inline constexpr double kGradcheckTolerance = 1e-4;
// Denominator floor for the relative error, so near-zero partials are judged
// on absolute error instead of amplified rounding noise.
inline constexpr double kGradcheckFloor = 1e-4;

struct GradcheckCase {
  std::string name;
  ModelSpec spec;
  Matrix x;
  std::vector<int> labels;  // empty for unsupervised cases
};

struct GradcheckResult {
  std::string name;
  std::size_t parameters = 0;
  double max_relative_error = 0.0;
  std::string worst_block;
  bool passed = false;
};

double gradcheck_relative_error(double analytic, double numeric, double floor = kGradcheckFloor);

// Six-pixel, K=3, two-class toy cases: Gauss VAE, the three stick-breaking
// parametrizations, and the labeled and unlabeled semi-supervised objectives.
std::vector<GradcheckCase> gradcheck_cases(std::uint64_t seed = 0);

// Compares the analytic gradient of the summed objective under frozen noise
// with central finite differences over every parameter.
GradcheckResult run_gradcheck(const GradcheckCase& c, std::uint64_t seed = 0,
                              double h = kGradcheckStep, double tolerance = kGradcheckTolerance);
std::vector<GradcheckResult> run_gradcheck_suite(std::uint64_t seed = 0);

}  // namespace sbvae
