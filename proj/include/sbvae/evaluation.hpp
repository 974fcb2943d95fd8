#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "sbvae/model.hpp"
#include "sbvae/training.hpp"

namespace sbvae {

enum class LatentSource { sampled, posterior_mean };
std::string to_string(LatentSource s);
LatentSource parse_latent_source(std::string_view text);

struct LatentTable {
  Matrix codes;
  std::vector<int> labels;
  LatentSource source = LatentSource::sampled;

  std::size_t size() const { return static_cast<std::size_t>(codes.rows()); }
};

// Euclidean k-NN majority vote. Distance ties go to the lower training index,
// vote ties to the smallest tied label.
double knn_error(const LatentTable& train, const LatentTable& test, std::size_t k);
std::vector<int> knn_predict(const LatentTable& train, const Matrix& queries, std::size_t k);

struct SparsityDiagnostics {
  // Mean KL per latent dimension (Gaussian) or mean π_k (stick-breaking).
  Vector activity;
  // L2 norm of each latent dimension's outgoing first-layer decoder weights.
  Vector decoder_norms;
};
SparsityDiagnostics sparsity_diagnostics(const ModelSpec& spec, const ModelParams& params,
                                         const Matrix& x);
void write_sparsity_csv(std::ostream& out, const ModelSpec& spec, const SparsityDiagnostics& d);

// `sampled` takes one posterior draw from `rng`; `posterior_mean` ignores it.
LatentTable export_latents(const ModelSpec& spec, const ModelParams& params, const Matrix& x,
                           std::span<const int> labels, LatentSource source, Rng& rng);
void write_latents_csv(std::ostream& out, const LatentTable& table);
LatentTable read_latents_csv(std::istream& in);

struct EffectiveDimensionStats {
  double mean = 0.0;
  std::size_t min = 0;
  std::size_t max = 0;
  std::vector<std::size_t> per_example;
};
EffectiveDimensionStats effective_dimension_stats(const Matrix& weights,
                                                  double mass = kDefaultStickMass);

// 8-bit binary PGM of `images` (rows of side×side values in [0,1]) tiled
// `columns` wide with 2-pixel black separators.
void write_pgm_grid(std::ostream& out, const Matrix& images, std::size_t side, std::size_t columns);

struct KnnRow {
  std::size_t k;
  double error;
};
// Columns k,error_percent with two decimals.
void write_knn_csv(std::ostream& out, std::span<const KnnRow> rows);

}  // namespace sbvae
