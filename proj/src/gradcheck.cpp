#include "sbvae/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace sbvae {

namespace {

constexpr double kToyInitVariance = 0.25;

ModelSpec toy_spec(Variant variant, FractionParam fraction, std::size_t classes) {
  ModelSpec spec;
  spec.variant = variant;
  spec.fraction = fraction;
  spec.input_dim = 6;
  spec.latent_dim = 3;
  spec.classes = classes;
  spec.encoder_hidden = {5, 5};
  spec.encoder_skip = {false, true};
  spec.decoder_hidden = {5, 5};
  spec.decoder_skip = {false, true, false};
  return spec;
}

}  // namespace

double gradcheck_relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

std::vector<GradcheckCase> gradcheck_cases(std::uint64_t seed) {
  Rng rng(seed, 0x67636b);
  const Matrix x = draw_uniform(rng, 4, 6);
  std::vector<GradcheckCase> cases;
  cases.push_back({"gauss_vae", toy_spec(Variant::gauss_vae, FractionParam::kumaraswamy, 0), x, {}});
  cases.push_back({"sb_vae/kumaraswamy", toy_spec(Variant::sb_vae, FractionParam::kumaraswamy, 0), x, {}});
  cases.push_back({"sb_vae/gamma", toy_spec(Variant::sb_vae, FractionParam::gamma, 0), x, {}});
  cases.push_back({"sb_vae/gauss_logit", toy_spec(Variant::sb_vae, FractionParam::gauss_logit, 0), x, {}});
  cases.push_back({"m2/labeled", toy_spec(Variant::sb_vae, FractionParam::kumaraswamy, 2), x, {0, 1, 1, 0}});
  cases.push_back({"m2/unlabeled", toy_spec(Variant::sb_vae, FractionParam::kumaraswamy, 2), x,
                   std::vector<int>(4, kUnlabeled)});
  cases.push_back({"m2/gauss_mixed", toy_spec(Variant::gauss_vae, FractionParam::kumaraswamy, 2), x,
                   {1, kUnlabeled, 0, kUnlabeled}});
  return cases;
}

GradcheckResult run_gradcheck(const GradcheckCase& c, std::uint64_t seed, double h, double tolerance) {
  Rng rng(seed, 0x696e6974);
  ModelParams params = init_model(c.spec, rng, kToyInitVariance);
  // Zero biases put dead ReLU units exactly on their kink, where central
  // differences see half a slope.
  for (Mlp* net : params.networks()) {
    for (Layer& layer : net->layers()) {
      layer.bias = draw_standard_normal(rng, 1, layer.bias.size()) * std::sqrt(kToyInitVariance);
    }
  }
  if (c.spec.stick_breaking() && c.spec.fraction == FractionParam::gamma) {
    // Keep the shapes below the clamp so their gradients are exercised.
    params.latent_head.layers().back().bias.array() -= 1.5;
  }
  const Noise noise = draw_noise(c.spec, rng, c.x.rows(), c.spec.mc_samples);
  const std::vector<double> weights(static_cast<std::size_t>(c.x.rows()), 1.0);

  const ObjectiveResult analytic = evaluate_objective(c.spec, params, c.x, c.labels, weights, noise, true);
  const std::vector<double> grad = analytic.gradient->flatten();
  const std::vector<double> theta = params.flatten();

  ModelParams probe = params;
  auto objective = [&](std::span<const double> t) {
    probe.assign(t);
    return evaluate_objective(c.spec, probe, c.x, c.labels, weights, noise, false).objective;
  };
  const std::vector<double> numeric = finite_difference_gradient(objective, theta, h);

  GradcheckResult result;
  result.name = c.name;
  result.parameters = theta.size();
  const auto names = params.block_names();
  const auto blocks = params.blocks();
  std::size_t block = 0;
  std::size_t block_end = blocks.empty() ? 0 : blocks[0].size();
  for (std::size_t i = 0; i < theta.size(); ++i) {
    while (i >= block_end) block_end += blocks[++block].size();
    const double err = gradcheck_relative_error(grad[i], numeric[i]);
    if (err > result.max_relative_error) {
      result.max_relative_error = err;
      result.worst_block = names[block];
    }
  }
  result.passed = result.max_relative_error <= tolerance;
  return result;
}

std::vector<GradcheckResult> run_gradcheck_suite(std::uint64_t seed) {
  std::vector<GradcheckResult> out;
  for (const auto& c : gradcheck_cases(seed)) out.push_back(run_gradcheck(c, seed));
  return out;
}

}  // namespace sbvae
