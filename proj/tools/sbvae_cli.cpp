// Command-line front end: train, eval, sample, gradcheck, export-latents.
#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "sbvae/errors.hpp"
#include "sbvae/evaluation.hpp"
#include "sbvae/gradcheck.hpp"
#include "sbvae/model.hpp"
#include "sbvae/training.hpp"

namespace fs = std::filesystem;
using namespace sbvae;

namespace {

RunConfig config_with_overrides(const std::string& path, const std::vector<std::string>& sets) {
  RunConfig cfg = load_run_config(path);
  for (const auto& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    apply_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  return cfg;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  return out;
}

const DatasetSplit& pick_split(const DatasetSplits& data, const std::string& name) {
  if (name == "train") return data.train;
  if (name == "valid") return data.valid;
  if (name == "test") return data.test;
  throw ConfigError("unknown split '" + name + "'");
}

int cmd_train(const std::string& config, const std::vector<std::string>& sets) {
  const RunConfig cfg = config_with_overrides(config, sets);
  const TrainResult result = run_training(cfg);
  save_model(cfg.checkpoint_path, cfg.spec, result.params);
  write_metrics_csv(cfg.metrics_path, result.history);
  std::cout << "trained " << result.epochs_run << " epochs (best " << result.best_epoch
            << (result.stopped_early ? ", stopped early" : "") << "); checkpoint " << cfg.checkpoint_path
            << ", metrics " << cfg.metrics_path << '\n';
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& config, const std::vector<std::string>& sets,
             const std::string& out_dir, std::size_t samples, const std::vector<std::size_t>& ks,
             const std::string& source, std::uint64_t seed) {
  const LoadedModel model = load_model(checkpoint);
  const RunConfig cfg = config_with_overrides(config, sets);
  const DatasetSplits data = load_run_data(cfg);
  fs::create_directories(out_dir);
  Rng rng(seed);

  if (!model.spec.semi_supervised()) {
    Rng is_rng = rng.derive(1);
    const Vector ll = marginal_log_likelihood_is(model.spec, model.params, data.test.images, is_rng, samples);
    auto out = open_out(fs::path(out_dir) / "marginal_ll.csv");
    char buf[96];
    std::snprintf(buf, sizeof(buf), "test,%zu,%.9g,%.9g\n", samples, ll.mean(), -ll.mean());
    out << "split,samples,mean_log_likelihood,nll\n" << buf;
    std::cout << "test NLL (" << samples << " importance samples): " << -ll.mean() << '\n';
  }

  if (data.train.has_labels() && data.test.has_labels()) {
    const LatentSource src = parse_latent_source(source);
    Rng latent_rng = rng.derive(2);
    const LatentTable train = export_latents(model.spec, model.params, data.train.images, data.train.labels, src, latent_rng);
    const LatentTable test = export_latents(model.spec, model.params, data.test.images, data.test.labels, src, latent_rng);
    std::vector<KnnRow> rows;
    for (std::size_t k : ks) {
      rows.push_back({k, knn_error(train, test, k)});
      std::printf("kNN k=%zu error %.2f%%\n", k, 100.0 * rows.back().error);
    }
    auto out = open_out(fs::path(out_dir) / "knn.csv");
    write_knn_csv(out, rows);
  }

  if (model.spec.stick_breaking()) {
    Rng enc_rng = rng.derive(3);
    const Encoding enc = encode(model.spec, model.params, data.test.images, enc_rng);
    const EffectiveDimensionStats stats = effective_dimension_stats(enc.latents.front());
    auto out = open_out(fs::path(out_dir) / "effective_dimension.csv");
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%.9g,%zu,%zu\n", stats.mean, stats.min, stats.max);
    out << "mean,min,max\n" << buf;
    std::cout << "effective dimension (99% mass): mean " << stats.mean << '\n';
  }

  const SparsityDiagnostics sparsity = sparsity_diagnostics(model.spec, model.params, data.test.images);
  auto out = open_out(fs::path(out_dir) / "sparsity.csv");
  write_sparsity_csv(out, model.spec, sparsity);
  return 0;
}

int cmd_sample(const std::string& checkpoint, std::size_t n, std::optional<std::size_t> active_dims,
               const std::string& out_path, std::size_t columns, std::uint64_t seed) {
  const LoadedModel model = load_model(checkpoint);
  Rng rng(seed);
  const Matrix means = sample_from_prior(model.spec, model.params, rng, n, active_dims);
  const auto side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(model.spec.input_dim))));
  if (side * side != model.spec.input_dim) throw ConfigError("sample: input_dim is not a square image");
  auto out = open_out(out_path);
  write_pgm_grid(out, means, side, columns);
  std::cout << "wrote " << n << " samples to " << out_path << '\n';
  return 0;
}

int cmd_gradcheck(std::uint64_t seed) {
  bool ok = true;
  for (const auto& r : run_gradcheck_suite(seed)) {
    std::printf("%-4s %-20s params=%zu max_rel_err=%.3e (%s)\n", r.passed ? "PASS" : "FAIL", r.name.c_str(),
                r.parameters, r.max_relative_error, r.worst_block.c_str());
    ok = ok && r.passed;
  }
  return ok ? 0 : 1;
}

int cmd_export(const std::string& checkpoint, const std::string& config, const std::vector<std::string>& sets,
               const std::string& split_name, const std::string& source, const std::string& out_path,
               std::uint64_t seed) {
  const LoadedModel model = load_model(checkpoint);
  const RunConfig cfg = config_with_overrides(config, sets);
  const DatasetSplits data = load_run_data(cfg);
  const DatasetSplit& split = pick_split(data, split_name);
  Rng rng(seed);
  const LatentTable table =
      export_latents(model.spec, model.params, split.images, split.labels, parse_latent_source(source), rng);
  auto out = open_out(out_path);
  write_latents_csv(out, table);
  std::cout << "wrote " << table.size() << " latent rows to " << out_path << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stick-breaking variational autoencoders"};
  app.require_subcommand(1);

  std::string config, checkpoint, out_path, out_dir = "eval", source = "sampled", split = "test";
  std::vector<std::string> sets;
  std::uint64_t seed = 0;
  std::size_t samples = kDefaultImportanceSamples, n = 64, columns = 8;
  std::optional<std::size_t> active_dims;
  std::vector<std::size_t> ks{3, 5, 10};

  auto* train = app.add_subcommand("train", "Train a model from a key=value config file");
  train->add_option("config", config, "Run configuration")->required();
  train->add_option("--set", sets, "Override a config key (key=value)");

  auto* eval = app.add_subcommand("eval", "Marginal likelihood, kNN, effective dimension and sparsity CSVs");
  eval->add_option("--checkpoint", checkpoint)->required();
  eval->add_option("--config", config, "Run configuration naming the data")->required();
  eval->add_option("--set", sets);
  eval->add_option("--out-dir", out_dir);
  eval->add_option("--samples", samples, "Importance samples per test image");
  eval->add_option("--k", ks, "Neighbour counts")->delimiter(',');
  eval->add_option("--latents", source, "sampled or posterior_mean");
  eval->add_option("--seed", seed);

  auto* sample = app.add_subcommand("sample", "Decode prior draws into a PGM grid");
  sample->add_option("--checkpoint", checkpoint)->required();
  sample->add_option("--n", n);
  sample->add_option("--active-dims", active_dims);
  sample->add_option("--columns", columns);
  sample->add_option("--out", out_path)->required();
  sample->add_option("--seed", seed);

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every model gradient");
  gradcheck->add_option("--seed", seed);

  auto* exporter = app.add_subcommand("export-latents", "Write label,z_1..z_K rows for one split");
  exporter->add_option("--checkpoint", checkpoint)->required();
  exporter->add_option("--config", config)->required();
  exporter->add_option("--set", sets);
  exporter->add_option("--split", split);
  exporter->add_option("--latents", source);
  exporter->add_option("--out", out_path)->required();
  exporter->add_option("--seed", seed);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) return cmd_train(config, sets);
    if (*eval) return cmd_eval(checkpoint, config, sets, out_dir, samples, ks, source, seed);
    if (*sample) return cmd_sample(checkpoint, n, active_dims, out_path, columns, seed);
    if (*gradcheck) return cmd_gradcheck(seed);
    if (*exporter) return cmd_export(checkpoint, config, sets, split, source, out_path, seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
