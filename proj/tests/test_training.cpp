#include <doctest.h>

#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "oracles.hpp"
#include "sbvae/errors.hpp"
#include "sbvae/training.hpp"

using namespace sbvae;

namespace {

void put_be32(std::string& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<char>((v >> s) & 0xff));
}

std::string idx_images(std::uint32_t n, std::uint32_t rows, std::uint32_t cols, std::uint32_t magic = kIdxImageMagic) {
  std::string out;
  put_be32(out, magic);
  put_be32(out, n);
  put_be32(out, rows);
  put_be32(out, cols);
  for (std::uint32_t i = 0; i < n * rows * cols; ++i) out.push_back(static_cast<char>(i % 256));
  return out;
}

std::string idx_labels(const std::vector<int>& labels, std::uint32_t magic = kIdxLabelMagic) {
  std::string out;
  put_be32(out, magic);
  put_be32(out, static_cast<std::uint32_t>(labels.size()));
  for (int y : labels) out.push_back(static_cast<char>(y));
  return out;
}

// Two-pixel data from three noisy prototypes.
DatasetSplits toy_data(std::uint64_t seed, std::size_t n = 300) {
  Rng rng(seed);
  const double proto[3][2] = {{0.9, 0.1}, {0.1, 0.9}, {0.9, 0.9}};
  Matrix x(static_cast<Eigen::Index>(n), 2);
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int c = static_cast<int>(i % 3);
    y[i] = c;
    for (int d = 0; d < 2; ++d) {
      x(static_cast<Eigen::Index>(i), d) = std::clamp(proto[c][d] + 0.05 * rng.standard_normal(), 0.0, 1.0);
    }
  }
  return make_splits(x, y, {n * 2 / 3, n / 6, n / 6}, rng);
}

ModelSpec toy_spec(Variant v = Variant::sb_vae) {
  ModelSpec spec;
  spec.variant = v;
  spec.input_dim = 2;
  spec.latent_dim = 3;
  spec.encoder_hidden = {10};
  spec.decoder_hidden = {10};
  return spec;
}

std::vector<std::span<const double>> as_const(std::vector<std::vector<double>>& v) {
  return {v.begin(), v.end()};
}

}  // namespace

TEST_CASE("adam matches an independent scalar implementation on theta^2") {
  std::vector<double> theta{1.0};
  std::vector<std::span<const double>> init{theta};
  AdamState state = adam_init(init);
  oracle::ScalarAdam ref;
  double expected = 1.0;
  for (int step = 0; step < 100; ++step) {
    std::vector<double> grad{2.0 * theta[0]};
    expected = ref.step(expected, 2.0 * expected);
    std::vector<std::span<double>> p{theta};
    std::vector<std::span<const double>> g{grad};
    adam_step(state, p, g);
    CHECK(std::abs(theta[0] - expected) <= 1e-12);
  }
  CHECK(state.t == 100);
}

TEST_CASE("adam first step depends only on the gradient sign") {
  std::vector<double> theta(6, 0.5);
  std::vector<double> grad{1e-3, -2.0, 50.0, -1e-2, 3.0, -7.0};
  std::vector<std::span<const double>> init{theta};
  AdamState state = adam_init(init);
  std::vector<std::span<double>> p{theta};
  std::vector<std::span<const double>> g{grad};
  adam_step(state, p, g);
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double delta = theta[i] - 0.5;
    const double sign = grad[i] > 0 ? -1.0 : 1.0;
    const double g_abs = std::abs(grad[i]);
    CHECK(std::abs(delta - sign * 3e-4 * g_abs / (g_abs + 1e-8)) < 1e-15);
    CHECK(std::abs(std::abs(delta) - 3e-4) < 3e-4 * 1e-8 / g_abs + 1e-15);
  }
}

TEST_CASE("adam with zero gradient leaves parameters and advances t") {
  std::vector<double> theta{1.0, -2.0};
  std::vector<double> grad{0.0, 0.0};
  std::vector<std::span<const double>> init{theta};
  AdamState state = adam_init(init);
  std::vector<std::span<double>> p{theta};
  std::vector<std::span<const double>> g{grad};
  adam_step(state, p, g);
  adam_step(state, p, g);
  CHECK(theta == std::vector<double>{1.0, -2.0});
  CHECK(state.t == 2);
}

TEST_CASE("adam rejects non-finite gradients with context") {
  std::vector<double> theta{1.0};
  std::vector<double> grad{std::nan("")};
  std::vector<std::span<const double>> init{theta};
  AdamState state = adam_init(init);
  std::vector<std::span<double>> p{theta};
  std::vector<std::span<const double>> g{grad};
  const std::vector<std::string> names{"decoder.layer0.weight"};
  try {
    adam_step(state, p, g, names);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("decoder.layer0.weight") != std::string::npos);
  }
}

TEST_CASE("IDX parsing") {
  std::istringstream images(idx_images(3, 2, 2));
  const Matrix x = load_idx_images(images);
  CHECK(x.rows() == 3);
  CHECK(x.cols() == 4);
  CHECK(x(0, 1) == 1.0 / 255.0);

  std::string full = idx_images(1, 16, 16);
  std::istringstream big(full);
  const Matrix y = load_idx_images(big);
  CHECK(y(0, 255) == 1.0);

  std::istringstream mnist_shape(idx_images(2, 28, 28));
  CHECK(load_idx_images(mnist_shape).cols() == 784);

  std::istringstream labels(idx_labels({3, 1, 4}));
  CHECK(load_idx_labels(labels) == std::vector<int>{3, 1, 4});

  std::istringstream wrong_magic(idx_images(1, 2, 2, kIdxLabelMagic));
  CHECK_THROWS_AS(load_idx_images(wrong_magic), FormatError);
  std::istringstream label_as_image(idx_labels({1}, kIdxImageMagic));
  CHECK_THROWS_AS(load_idx_labels(label_as_image), FormatError);

  std::string cut = idx_images(2, 2, 2);
  cut.resize(cut.size() - 3);
  std::istringstream truncated(cut);
  try {
    load_idx_images(truncated);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("offset") != std::string::npos);
  }
  CHECK_THROWS_AS(load_idx_images(std::string("/nonexistent/file")), FormatError);
}

TEST_CASE("splits are disjoint, sized and seeded") {
  const Eigen::Index n = 200;
  Matrix x(n, 1);
  std::vector<int> y(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    x(i, 0) = static_cast<double>(i);
    y[static_cast<std::size_t>(i)] = static_cast<int>(i % 10);
  }
  Rng a(3), b(3), c(4);
  const DatasetSplits s1 = make_splits(x, y, {120, 30, 40}, a);
  const DatasetSplits s2 = make_splits(x, y, {120, 30, 40}, b);
  const DatasetSplits s3 = make_splits(x, y, {120, 30, 40}, c);
  CHECK(s1.train.size() == 120);
  CHECK(s1.valid.size() == 30);
  CHECK(s1.test.size() == 40);
  std::set<double> seen;
  for (const DatasetSplit* s : {&s1.train, &s1.valid, &s1.test}) {
    for (Eigen::Index i = 0; i < s->images.rows(); ++i) {
      CHECK(seen.insert(s->images(i, 0)).second);
      CHECK(s->labels[static_cast<std::size_t>(i)] == static_cast<int>(s->images(i, 0)) % 10);
    }
  }
  CHECK(s1.train.images == s2.train.images);
  CHECK(s1.train.images != s3.train.images);
  Rng d(5);
  CHECK_THROWS_AS(make_splits(x, y, {150, 30, 40}, d), ConfigError);
}

TEST_CASE("label removal") {
  DatasetSplit split;
  split.images = Matrix::Zero(45000, 1);
  split.labels.resize(45000);
  for (std::size_t i = 0; i < split.labels.size(); ++i) split.labels[i] = static_cast<int>(i % 10);
  Rng rng(6);
  CHECK(remove_labels(split, 0.1, rng).visible_labels() == 4500);
  CHECK(remove_labels(split, 1.0, rng).visible_labels() == 45000);
  CHECK_THROWS_AS(remove_labels(split, 0.0, rng), ConfigError);
  CHECK_THROWS_AS(remove_labels(split, 1.5, rng), ConfigError);

  const DatasetSplit masked = remove_labels(split, 0.1, rng);
  const auto vis = masked.visible();
  for (std::size_t i = 0; i < vis.size(); ++i) {
    CHECK(vis[i] == (masked.label_mask[i] ? split.labels[i] : kUnlabeled));
  }

  // No stratification: per-class visible counts vary across seeds.
  DatasetSplit small = split;
  small.images = Matrix::Zero(1000, 1);
  small.labels.resize(1000);
  std::vector<double> class0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng r(seed);
    const DatasetSplit m = remove_labels(small, 0.1, r);
    int count = 0;
    for (std::size_t i = 0; i < 1000; ++i) count += m.label_mask[i] && small.labels[i] == 0;
    class0.push_back(count);
  }
  const double mean = std::accumulate(class0.begin(), class0.end(), 0.0) / 100.0;
  double var = 0.0;
  for (double c : class0) var += (c - mean) * (c - mean);
  CHECK(var > 0.0);
}

TEST_CASE("binarization is a 0.5 threshold and idempotent") {
  Rng rng(7);
  const Matrix x = draw_uniform(rng, 20, 7);
  const Matrix b = binarize(x);
  CHECK(binarize(b) == b);
  for (Eigen::Index i = 0; i < x.size(); ++i) CHECK(b(i) == (x(i) > 0.5 ? 1.0 : 0.0));
}

TEST_CASE("shuffles are permutations") {
  Rng rng(8);
  auto idx = shuffled_indices(50, rng);
  std::sort(idx.begin(), idx.end());
  for (std::size_t i = 0; i < 50; ++i) CHECK(idx[i] == i);
}

TEST_CASE("semi-supervised batch objective") {
  ModelSpec spec = toy_spec();
  spec.classes = 3;
  Rng init(9);
  const ModelParams params = init_model(spec, init, 0.3);
  Rng data_rng(10);
  const Matrix xl = draw_uniform(data_rng, 4, 2);
  const Matrix xu = draw_uniform(data_rng, 6, 2);
  const std::vector<int> yl{0, 1, 2, 0};
  TrainConfig cfg;

  auto batch = [&](double lambda, const Matrix& l, std::span<const int> y, const Matrix& u) {
    cfg.supervised_weight = lambda;
    Rng r(11);
    return semisup_batch_objective(cfg, spec, params, l, y, u, r);
  };
  // Same rng seed gives the same noise rows for the combined batch.
  auto parts = [&]() {
    Rng r(11);
    const Matrix x = (Matrix(10, 2) << xl, xu).finished();
    const Noise noise = draw_noise(spec, r, 10, 1);
    std::vector<int> labels(yl.begin(), yl.end());
    labels.resize(10, kUnlabeled);
    const auto res = evaluate_objective(spec, params, x, labels, std::vector<double>(10, 1.0), noise, false);
    return std::pair{res.per_example.head(4).mean(), res.per_example.tail(6).mean()};
  };
  const auto [lab, unl] = parts();
  CHECK(std::abs(batch(0.0, xl, yl, xu) - unl) < 1e-12);
  CHECK(std::abs(batch(1.0, xl, yl, xu) - lab) < 1e-12);
  CHECK(std::abs(batch(0.375, xl, yl, xu) - (0.375 * lab + 0.625 * unl)) < 1e-12);

  // An empty labeled part contributes nothing and the unlabeled weight is not renormalized.
  const Matrix none(0, 2);
  Rng r(12);
  cfg.supervised_weight = 0.375;
  const double only_u = semisup_batch_objective(cfg, spec, params, none, {}, xu, r);
  Rng r2(12);
  const Noise noise = draw_noise(spec, r2, 6, 1);
  const auto res = evaluate_objective(spec, params, xu, std::vector<int>(6, kUnlabeled), std::vector<double>(6, 1.0), noise, false);
  CHECK(std::abs(only_u - 0.625 * res.per_example.mean()) < 1e-12);
}

TEST_CASE("training with zero epochs returns the initialization") {
  const DatasetSplits data = toy_data(1);
  TrainConfig cfg;
  cfg.epochs = 0;
  Rng rng(2);
  const TrainResult r = train(cfg, toy_spec(), data, rng);
  Rng again(2);
  Rng init = again.derive(1);
  CHECK(r.params.flatten() == init_model(toy_spec(), init).flatten());
  CHECK(r.history.empty());
  CHECK(r.epochs_run == 0);
}

TEST_CASE("early stopping with a frozen validation metric stops after exactly patience epochs") {
  const DatasetSplits data = toy_data(3);
  TrainConfig cfg;
  cfg.epochs = 50;
  cfg.patience = 4;
  cfg.validation_override = [](std::size_t, double) { return 1.0; };
  Rng rng(4);
  const TrainResult r = train(cfg, toy_spec(), data, rng);
  CHECK(r.best_epoch == 1);
  CHECK(r.epochs_run == 5);
  CHECK(r.stopped_early);

  // The best epoch's parameters are restored: rerun for exactly that many epochs.
  cfg.validation_override = [](std::size_t epoch, double) { return epoch == 3 ? 0.0 : 1.0; };
  Rng rng2(4);
  const TrainResult r2 = train(cfg, toy_spec(), data, rng2);
  CHECK(r2.best_epoch == 3);
  CHECK(r2.epochs_run == 7);
  TrainConfig three = cfg;
  three.epochs = 3;
  three.validation_override = nullptr;
  Rng rng3(4);
  CHECK(train(three, toy_spec(), data, rng3).params.flatten() == r2.params.flatten());
}

TEST_CASE("toy training improves the ELBO") {
  const DatasetSplits data = toy_data(5);
  TrainConfig cfg;
  cfg.epochs = 200;
  cfg.patience = 1000;
  for (Variant v : {Variant::gauss_vae, Variant::sb_vae}) {
    Rng rng(6);
    const TrainResult r = train(cfg, toy_spec(v), data, rng);
    const auto elbo = r.history.series("train", "elbo");
    REQUIRE(elbo.size() == 200);
    CHECK(elbo.back() > elbo.front());
  }
}

TEST_CASE("training is deterministic for a fixed seed") {
  const DatasetSplits data = toy_data(7);
  TrainConfig cfg;
  cfg.epochs = 5;
  Rng a(8), b(8);
  const TrainResult r1 = train(cfg, toy_spec(), data, a);
  const TrainResult r2 = train(cfg, toy_spec(), data, b);
  std::ostringstream m1, m2;
  write_metrics_csv(m1, r1.history);
  write_metrics_csv(m2, r2.history);
  CHECK(m1.str() == m2.str());
  CHECK(r1.params.flatten() == r2.params.flatten());
}

TEST_CASE("metrics CSV format") {
  MetricsHistory h;
  h.add(1, "train", "elbo", -1.0 / 3.0);
  h.add(2, "valid", "kl", 12345.678901234);
  std::ostringstream out;
  write_metrics_csv(out, h);
  CHECK(out.str() == "epoch,split,metric,value\n1,train,elbo,-0.333333333\n2,valid,kl,12345.6789\n");
  CHECK(h.get(2, "valid", "kl") == 12345.678901234);
  CHECK(!h.get(3, "valid", "kl"));
}

TEST_CASE("semi-supervised training records classification error") {
  DatasetSplits data = toy_data(9);
  Rng mask(10);
  data.train = remove_labels(data.train, 0.5, mask);
  ModelSpec spec = toy_spec();
  spec.classes = 3;
  TrainConfig cfg;
  cfg.epochs = 3;
  Rng rng(11);
  const TrainResult r = train(cfg, spec, data, rng);
  CHECK(r.history.series("valid", "class_error").size() == 3);
  CHECK(r.history.series("train", "elbo").empty());
}

TEST_CASE("run configuration parsing") {
  std::istringstream in(
      "# comment\nvariant = gauss_vae\nK=7\nalpha0=3\nlambda=0.5\nkeep_fraction=0.1\nbatch_size=50\n"
      "encoder_hidden=20,30\nimages=/data/x\n\n");
  const RunConfig cfg = parse_run_config(in);
  CHECK(cfg.spec.variant == Variant::gauss_vae);
  CHECK(cfg.spec.latent_dim == 7);
  CHECK(cfg.spec.alpha0 == 3.0);
  CHECK(cfg.train.supervised_weight == 0.5);
  CHECK(cfg.keep_fraction == 0.1);
  CHECK(cfg.train.batch_size == 50);
  CHECK(cfg.spec.encoder_hidden == std::vector<std::size_t>{20, 30});
  CHECK(cfg.images_path == "/data/x");

  std::istringstream unknown("learning_rat=0.1\n");
  CHECK_THROWS_AS(parse_run_config(unknown), ConfigError);
  std::istringstream malformed("K\n");
  CHECK_THROWS_AS(parse_run_config(malformed), ConfigError);
  std::istringstream bad_value("K=many\n");
  CHECK_THROWS_AS(parse_run_config(bad_value), ConfigError);

  RunConfig no_data;
  try {
    load_run_data(no_data);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("images") != std::string::npos);
  }
}

// Default Adam settings and batch size throughout.
TEST_CASE("toy training: moving-average loss decreases monotonically for most seeds") {
  TrainConfig cfg;
  cfg.epochs = 200;
  cfg.patience = 1000;
  int monotone = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const DatasetSplits data = toy_data(100 + seed);
    Rng rng(seed);
    const auto elbo = train(cfg, toy_spec(), data, rng).history.series("train", "elbo");
    std::vector<double> avg;
    for (std::size_t e = 4; e < elbo.size(); ++e) {
      avg.push_back(-(elbo[e] + elbo[e - 1] + elbo[e - 2] + elbo[e - 3] + elbo[e - 4]) / 5.0);
    }
    bool ok = true;
    for (std::size_t i = 1; i < avg.size(); ++i) ok = ok && avg[i] < avg[i - 1];
    monotone += ok;
  }
  CHECK(monotone >= 9);
}
