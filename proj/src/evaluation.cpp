#include "sbvae/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#include "sbvae/errors.hpp"

namespace sbvae {

using Index = Eigen::Index;

std::string to_string(LatentSource s) { return s == LatentSource::sampled ? "sampled" : "posterior_mean"; }

LatentSource parse_latent_source(std::string_view text) {
  if (text == "sampled") return LatentSource::sampled;
  if (text == "posterior_mean") return LatentSource::posterior_mean;
  throw ConfigError("unknown latent source '" + std::string(text) + "' (expected sampled or posterior_mean)");
}

std::vector<int> knn_predict(const LatentTable& train, const Matrix& queries, std::size_t k) {
  const Index n = train.codes.rows();
  if (n == 0 || queries.rows() == 0) throw ConfigError("knn: empty latent table");
  if (k < 1 || k > static_cast<std::size_t>(n)) throw ConfigError("knn: k must lie in [1, train rows]");
  if (queries.cols() != train.codes.cols()) throw DimensionError("knn: latent widths differ");
  if (train.labels.size() != static_cast<std::size_t>(n)) throw DimensionError("knn: label count mismatch");

  std::vector<int> out(static_cast<std::size_t>(queries.rows()));
  std::vector<std::pair<double, Index>> dist(static_cast<std::size_t>(n));
  for (Index q = 0; q < queries.rows(); ++q) {
    for (Index i = 0; i < n; ++i) {
      dist[static_cast<std::size_t>(i)] = {(train.codes.row(i) - queries.row(q)).squaredNorm(), i};
    }
    // Pairs order by distance then index, which is the documented tie rule.
    std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
    std::map<int, std::size_t> votes;
    for (std::size_t j = 0; j < k; ++j) ++votes[train.labels[static_cast<std::size_t>(dist[j].second)]];
    int best = votes.begin()->first;
    std::size_t best_count = 0;
    for (const auto& [label, count] : votes) {
      if (count > best_count) {
        best = label;
        best_count = count;
      }
    }
    out[static_cast<std::size_t>(q)] = best;
  }
  return out;
}

double knn_error(const LatentTable& train, const LatentTable& test, std::size_t k) {
  if (test.labels.size() != test.size()) throw DimensionError("knn: test label count mismatch");
  const auto predicted = knn_predict(train, test.codes, k);
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) wrong += predicted[i] != test.labels[i];
  return static_cast<double>(wrong) / static_cast<double>(predicted.size());
}

SparsityDiagnostics sparsity_diagnostics(const ModelSpec& spec, const ModelParams& params,
                                         const Matrix& x) {
  SparsityDiagnostics d;
  const auto K = static_cast<Index>(spec.latent_dim);
  const Matrix& w = params.decoder.layers().front().weight;
  d.decoder_norms = w.topRows(K).rowwise().norm();
  if (x.rows() == 0) {
    d.activity = Vector::Zero(K);
    return d;
  }
  const PosteriorParams post = posterior_params(spec, params, x);
  if (!spec.stick_breaking()) {
    d.activity = Vector::Zero(K);
    for (Index i = 0; i < post.first.rows(); ++i) {
      for (Index k = 0; k < K; ++k) d.activity[k] += kl_normal_std_normal({post.first(i, k), post.second(i, k)});
    }
    d.activity /= static_cast<double>(x.rows());
  } else {
    d.activity = posterior_mean_latents(spec, params, x).colwise().mean().transpose();
  }
  return d;
}

void write_sparsity_csv(std::ostream& out, const ModelSpec& spec, const SparsityDiagnostics& d) {
  out << "dim," << (spec.stick_breaking() ? "mean_activation" : "mean_kl") << ",decoder_norm\n";
  char buf[96];
  for (Index k = 0; k < d.activity.size(); ++k) {
    std::snprintf(buf, sizeof(buf), "%ld,%.9g,%.9g\n", static_cast<long>(k + 1), d.activity[k],
                  d.decoder_norms[k]);
    out << buf;
  }
}

LatentTable export_latents(const ModelSpec& spec, const ModelParams& params, const Matrix& x,
                           std::span<const int> labels, LatentSource source, Rng& rng) {
  if (!labels.empty() && labels.size() != static_cast<std::size_t>(x.rows())) {
    throw DimensionError("export_latents: label count mismatch");
  }
  LatentTable table;
  table.source = source;
  table.labels.assign(labels.begin(), labels.end());
  if (table.labels.empty()) table.labels.assign(static_cast<std::size_t>(x.rows()), kUnlabeled);
  if (source == LatentSource::posterior_mean) {
    table.codes = posterior_mean_latents(spec, params, x);
  } else {
    const Noise noise = draw_noise(spec, rng, x.rows(), 1);
    table.codes = encode_with_noise(spec, params, x, noise).latents.front();
  }
  return table;
}

void write_latents_csv(std::ostream& out, const LatentTable& table) {
  out << "label";
  for (Index k = 0; k < table.codes.cols(); ++k) out << ",z_" << k + 1;
  out << '\n';
  char buf[32];
  for (Index i = 0; i < table.codes.rows(); ++i) {
    out << table.labels[static_cast<std::size_t>(i)];
    for (Index k = 0; k < table.codes.cols(); ++k) {
      std::snprintf(buf, sizeof(buf), ",%.17g", table.codes(i, k));
      out << buf;
    }
    out << '\n';
  }
}

LatentTable read_latents_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("label", 0) != 0) {
    throw FormatError("latents CSV: missing 'label,z_1,...' header");
  }
  const auto width = static_cast<Index>(std::count(line.begin(), line.end(), ','));
  std::vector<std::vector<double>> rows;
  LatentTable table;
  std::size_t number = 1;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> row;
    std::getline(ss, cell, ',');
    table.labels.push_back(std::stoi(cell));
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    if (static_cast<Index>(row.size()) != width) {
      throw FormatError("latents CSV: line " + std::to_string(number) + " has the wrong column count");
    }
    rows.push_back(std::move(row));
  }
  table.codes.resize(static_cast<Index>(rows.size()), width);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (Index k = 0; k < width; ++k) table.codes(static_cast<Index>(i), k) = rows[i][static_cast<std::size_t>(k)];
  }
  return table;
}

EffectiveDimensionStats effective_dimension_stats(const Matrix& weights, double mass) {
  EffectiveDimensionStats stats;
  if (weights.rows() == 0) return stats;
  stats.min = static_cast<std::size_t>(weights.cols());
  double total = 0.0;
  std::vector<double> row(static_cast<std::size_t>(weights.cols()));
  for (Index i = 0; i < weights.rows(); ++i) {
    for (Index k = 0; k < weights.cols(); ++k) row[static_cast<std::size_t>(k)] = weights(i, k);
    const std::size_t d = effective_dimension(row, mass);
    stats.per_example.push_back(d);
    stats.min = std::min(stats.min, d);
    stats.max = std::max(stats.max, d);
    total += static_cast<double>(d);
  }
  stats.mean = total / static_cast<double>(weights.rows());
  return stats;
}

void write_pgm_grid(std::ostream& out, const Matrix& images, std::size_t side, std::size_t columns) {
  constexpr std::size_t kGap = 2;
  if (static_cast<std::size_t>(images.cols()) != side * side) {
    throw DimensionError("write_pgm_grid: image width is not side*side");
  }
  if (columns == 0) throw ConfigError("write_pgm_grid: columns must be positive");
  const auto count = static_cast<std::size_t>(images.rows());
  const std::size_t cols = std::min(columns, std::max<std::size_t>(count, 1));
  const std::size_t rows = (count + cols - 1) / cols;
  const std::size_t width = cols * side + (cols + 1) * kGap;
  const std::size_t height = std::max<std::size_t>(rows, 1) * side + (std::max<std::size_t>(rows, 1) + 1) * kGap;
  std::vector<unsigned char> pixels(width * height, 0);
  for (std::size_t n = 0; n < count; ++n) {
    const std::size_t top = kGap + (n / cols) * (side + kGap);
    const std::size_t left = kGap + (n % cols) * (side + kGap);
    for (std::size_t r = 0; r < side; ++r) {
      for (std::size_t c = 0; c < side; ++c) {
        const double v = std::clamp(images(static_cast<Index>(n), static_cast<Index>(r * side + c)), 0.0, 1.0);
        pixels[(top + r) * width + left + c] = static_cast<unsigned char>(std::lround(v * 255.0));
      }
    }
  }
  out << "P5\n" << width << ' ' << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
}

void write_knn_csv(std::ostream& out, std::span<const KnnRow> rows) {
  out << "k,error_percent\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%zu,%.2f\n", r.k, 100.0 * r.error);
    out << buf;
  }
}

}  // namespace sbvae
