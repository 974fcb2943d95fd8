#include <doctest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "sbvae/errors.hpp"
#include "sbvae/evaluation.hpp"

using namespace sbvae;

namespace {

LatentTable random_table(Rng& rng, Eigen::Index n, Eigen::Index dims, int classes) {
  LatentTable t;
  t.codes = draw_standard_normal(rng, n, dims);
  for (Eigen::Index i = 0; i < n; ++i) t.labels.push_back(static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(classes))));
  return t;
}

ModelSpec small_spec(Variant v) {
  ModelSpec spec;
  spec.variant = v;
  spec.input_dim = 9;
  spec.latent_dim = 5;
  spec.encoder_hidden = {6};
  spec.decoder_hidden = {6};
  return spec;
}

// Random orthogonal matrix from the QR factors of a Gaussian draw.
Matrix random_rotation(Rng& rng, Eigen::Index d) {
  const Eigen::MatrixXd g = draw_standard_normal(rng, d, d);
  return Eigen::HouseholderQR<Eigen::MatrixXd>(g).householderQ();
}

}  // namespace

TEST_CASE("knn on the training set itself with k=1 is error free") {
  Rng rng(1);
  const LatentTable t = random_table(rng, 80, 4, 5);
  CHECK(knn_error(t, t, 1) == 0.0);
}

TEST_CASE("knn with one class is error free") {
  Rng rng(2);
  LatentTable train = random_table(rng, 30, 3, 1);
  LatentTable test = random_table(rng, 20, 3, 1);
  for (std::size_t k : {1u, 5u, 30u}) CHECK(knn_error(train, test, k) == 0.0);
}

TEST_CASE("knn tie rules") {
  LatentTable train;
  train.codes = Matrix::Zero(4, 1);
  train.codes << 1.0, -1.0, 2.0, -2.0;
  train.labels = {7, 3, 3, 7};
  Matrix q = Matrix::Zero(1, 1);
  // Equidistant pair: the lower training index (label 7) wins for k=1.
  CHECK(knn_predict(train, q, 1) == std::vector<int>{7});
  // Two votes each at k=4: the smaller label wins.
  CHECK(knn_predict(train, q, 4) == std::vector<int>{3});
  CHECK_THROWS_AS(knn_predict(train, q, 0), ConfigError);
  CHECK_THROWS_AS(knn_predict(train, q, 5), ConfigError);
  LatentTable empty;
  empty.codes = Matrix(0, 1);
  CHECK_THROWS_AS(knn_error(empty, train, 1), ConfigError);
}

TEST_CASE("knn is invariant to training-row permutations and rotations") {
  Rng rng(3);
  const LatentTable train = random_table(rng, 200, 5, 4);
  const LatentTable test = random_table(rng, 60, 5, 4);
  const auto perm = shuffled_indices(200, rng);
  LatentTable shuffled;
  shuffled.codes = gather_rows(train.codes, perm);
  for (std::size_t i : perm) shuffled.labels.push_back(train.labels[i]);
  const Matrix rot = random_rotation(rng, 5);
  LatentTable rtrain = train, rtest = test;
  rtrain.codes = train.codes * rot;
  rtest.codes = test.codes * rot;
  for (std::size_t k : {1u, 3u, 5u, 10u}) {
    const double base = knn_error(train, test, k);
    CHECK(knn_error(shuffled, test, k) == base);
    CHECK(std::abs(knn_error(rtrain, rtest, k) - base) <= 1e-12);
  }
}

TEST_CASE("sparsity diagnostics") {
  ModelSpec g = small_spec(Variant::gauss_vae);
  Rng rng(4);
  ModelParams gp = init_model(g, rng, 0.2);
  Layer& head = gp.latent_head.layers().back();
  head.weight.setZero();
  head.bias.head(5).setZero();
  head.bias.tail(5).setConstant(std::log(std::expm1(1.0 - kPositiveFloor)));
  gp.decoder.layers().front().weight.row(2).setZero();
  const Matrix x = draw_uniform(rng, 30, 9);
  const SparsityDiagnostics d = sparsity_diagnostics(g, gp, x);
  CHECK(d.activity.size() == 5);
  CHECK(d.activity.cwiseAbs().maxCoeff() < 1e-12);
  CHECK(d.decoder_norms[2] == 0.0);
  CHECK(d.decoder_norms[0] > 0.0);

  for (FractionParam f : {FractionParam::kumaraswamy, FractionParam::gamma, FractionParam::gauss_logit}) {
    ModelSpec sb = small_spec(Variant::sb_vae);
    sb.fraction = f;
    const ModelParams sp = init_model(sb, rng, 0.2);
    const SparsityDiagnostics s = sparsity_diagnostics(sb, sp, x);
    CHECK(std::abs(s.activity.sum() - 1.0) < 1e-6);
  }

  std::ostringstream out;
  write_sparsity_csv(out, g, d);
  CHECK(out.str().rfind("dim,mean_kl,decoder_norm\n1,", 0) == 0);
}

TEST_CASE("latent export") {
  const ModelSpec spec = small_spec(Variant::sb_vae);
  Rng rng(5);
  const ModelParams params = init_model(spec, rng, 0.2);
  const Matrix x = draw_uniform(rng, 25, 9);
  std::vector<int> labels(25);
  std::iota(labels.begin(), labels.end(), 0);

  Rng a(6), b(6);
  const LatentTable t1 = export_latents(spec, params, x, labels, LatentSource::sampled, a);
  const LatentTable t2 = export_latents(spec, params, x, labels, LatentSource::sampled, b);
  CHECK(t1.size() == 25);
  CHECK((t1.codes.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-6);
  std::ostringstream c1, c2;
  write_latents_csv(c1, t1);
  write_latents_csv(c2, t2);
  CHECK(c1.str() == c2.str());
  const std::string csv = c1.str();
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 26);
  CHECK(csv.rfind("label,z_1,z_2,z_3,z_4,z_5\n", 0) == 0);

  std::istringstream in(csv);
  const LatentTable back = read_latents_csv(in);
  CHECK(back.labels == labels);
  CHECK(back.codes == t1.codes);

  Rng c(7);
  const LatentTable mean = export_latents(spec, params, x, labels, LatentSource::posterior_mean, c);
  CHECK(mean.codes == posterior_mean_latents(spec, params, x));
  CHECK(parse_latent_source("posterior_mean") == LatentSource::posterior_mean);
  CHECK_THROWS_AS(parse_latent_source("mode"), ConfigError);
}

TEST_CASE("effective dimension statistics") {
  Matrix w(3, 4);
  w << 1.0, 0.0, 0.0, 0.0,
       0.5, 0.495, 0.005, 0.0,
       0.25, 0.25, 0.25, 0.25;
  const EffectiveDimensionStats s = effective_dimension_stats(w);
  CHECK(s.per_example == std::vector<std::size_t>{1, 2, 4});
  CHECK(s.min == 1);
  CHECK(s.max == 4);
  CHECK(s.mean == doctest::Approx(7.0 / 3.0));
}

TEST_CASE("PGM grid layout") {
  const Matrix images = Matrix::Constant(5, 9, 1.0);
  std::ostringstream out;
  write_pgm_grid(out, images, 3, 2);
  const std::string pgm = out.str();
  // 2 columns and 3 rows of 3x3 tiles with 2-pixel gaps.
  const std::string header = "P5\n12 17\n255\n";
  REQUIRE(pgm.rfind(header, 0) == 0);
  CHECK(pgm.size() == header.size() + 12 * 17);
  CHECK(static_cast<unsigned char>(pgm[header.size() + 2 * 12 + 2]) == 255);
  CHECK(pgm[header.size()] == 0);
  CHECK_THROWS_AS(write_pgm_grid(out, images, 2, 2), DimensionError);
}

TEST_CASE("knn CSV") {
  std::ostringstream out;
  const std::vector<KnnRow> rows{{3, 0.0934}, {5, 0.08654}};
  write_knn_csv(out, rows);
  CHECK(out.str() == "k,error_percent\n3,9.34\n5,8.65\n");
}
