#include <cmath>

#include "doctest.h"

#include "cflow/analytic_flows.hpp"
#include "cflow/error.hpp"
#include "cflow/objective.hpp"
#include "oracles.hpp"

using namespace cflow;

namespace {

FlowModel random_flow(std::size_t d, std::uint64_t seed, double noise, std::size_t couplings = 4) {
  Rng rng = Rng::stream(seed, "objective-flow");
  FlowModel model = FlowModel::create(FlowSpec{.dim = d, .num_couplings = couplings, .hidden = {8, 8}}, rng);
  oracle::perturb(model, rng, noise);
  return model;
}

FlowModel identity_flow(std::size_t d) {
  Rng rng = Rng::stream(0, "identity");
  return FlowModel::create(FlowSpec{.dim = d, .hidden = {8, 8}}, rng);
}

std::vector<double> flatten(const GradientMap& grads, std::span<const Var> params) {
  std::vector<double> out;
  for (Var p : params) {
    const Tensor& g = grads[p];
    out.insert(out.end(), g.data().begin(), g.data().end());
  }
  return out;
}

void check_close(const std::vector<double>& analytic, const std::vector<double>& numeric) {
  REQUIRE(analytic.size() == numeric.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double a = analytic[i];
    const double n = numeric[i];
    worst = std::max(worst, std::abs(a - n) / (std::abs(a) + std::abs(n) + 1e-6));
  }
  CHECK(worst < 1e-4);
}

// Pre-generator layers followed by base layers, as a single flow over x.
FlowModel concatenated(const ComposedSampler& cs) {
  std::vector<FlowLayer> layers = cs.pre_generator.layers();
  layers.insert(layers.end(), cs.base.layers().begin(), cs.base.layers().end());
  return FlowModel(cs.base.dim(), layers);
}

}  // namespace

TEST_CASE("smoothing spec") {
  for (double s : {1.0, 0.1, 0.01, 1e-3, 1e-4, 0.37}) {
    const SmoothingSpec spec(s);
    CHECK(spec.beta() * (2.0 * s * s) == doctest::Approx(1.0).epsilon(1e-15));
  }
  CHECK_THROWS_AS(SmoothingSpec(0.0), DomainError);
  CHECK_THROWS_AS(SmoothingSpec(-1.0), DomainError);
}

TEST_CASE("latent KL estimate") {
  Rng rng = Rng::stream(1, "kl");
  SUBCASE("identity start is exactly zero for every batch") {
    ComposedSampler cs(identity_flow(3), random_flow(3, 2, 0.3));
    for (int batch = 0; batch < 5; ++batch) CHECK(latent_kl_estimate(cs, rng.normal_tensor(Shape{16, 3})) == 0.0);
  }
  SUBCASE("fixed affine z = 2 eps matches the closed form") {
    const std::vector<double> zero{0.0};
    ComposedSampler cs(make_gaussian_flow(zero, Tensor::matrix(1, 1, {2.0})), identity_flow(1));
    const std::size_t n = 10000;
    const Tensor eps = rng.normal_tensor(Shape{n, 1});
    const double estimate = latent_kl_estimate(cs, eps);
    // Summand: log N(e) - log 2 - log N(2e) = 1.5 e^2 - log 2.
    double mean = 0.0;
    double sq = 0.0;
    for (double e : eps.data()) {
      const double t = 1.5 * e * e - std::log(2.0);
      mean += t;
      sq += t * t;
    }
    mean /= double(n);
    const double se = std::sqrt((sq / double(n) - mean * mean) / double(n));
    const double exact = oracle::gaussian_kl_1d(0.0, 4.0, 0.0, 1.0);
    CHECK(exact == doctest::Approx(0.8069).epsilon(1e-4));
    CHECK(std::abs(estimate - exact) < 3.0 * se);
  }
  SUBCASE("latent and ambient estimates agree term by term") {
    ComposedSampler cs(random_flow(3, 3, 0.3), random_flow(3, 4, 0.3));
    const Tensor eps = rng.normal_tensor(Shape{64, 3});
    const Observation obs = observe(MeasurementOp::mask(3, {0}), Tensor::vector({0.2, 0.0, 0.0}));
    const SmoothingSpec smoothing(0.5);
    const LossBreakdown ambient = ambient_vi_loss(concatenated(cs), cs.base, obs, smoothing, eps);
    const LossBreakdown latent = svi_loss(cs, obs, smoothing, eps);
    CHECK(std::abs(ambient.kl_term - latent.kl_term) < 1e-9);
    CHECK(std::abs(ambient.penalty_term - latent.penalty_term) < 1e-9);
  }
}

TEST_CASE("svi loss") {
  Rng rng = Rng::stream(2, "svi");
  FlowModel base = random_flow(4, 5, 0.3);
  const SmoothingSpec smoothing(0.3);

  SUBCASE("identity start with an exactly matching observation is zero") {
    ComposedSampler cs(identity_flow(4), base);
    const Tensor eps = rng.normal_tensor(Shape{1, 4});
    const Tensor x = flow_forward(base, eps).out;
    const Observation obs = observe(MeasurementOp::gaussian(3, 2, 4), Tensor::vector(x.values()));
    const LossBreakdown loss = svi_loss(cs, obs, smoothing, eps);
    CHECK(loss.total == 0.0);
  }

  ComposedSampler cs(random_flow(4, 6, 0.3), base);
  const Observation obs = observe(MeasurementOp::gaussian(3, 2, 4), rng.normal_tensor(Shape{4}));
  const Tensor eps = rng.normal_tensor(Shape{8, 4});

  SUBCASE("breakdown is additive and deterministic") {
    const LossBreakdown a = svi_loss(cs, obs, smoothing, eps);
    const LossBreakdown b = svi_loss(cs, obs, smoothing, eps);
    CHECK(std::abs(a.total - (a.kl_term + a.penalty_term)) < 1e-12);
    CHECK(a.total == b.total);
    CHECK(a.penalty_term > 0.0);
  }

  SUBCASE("sigma scaling and permutation invariance of the penalty") {
    const LossBreakdown a = svi_loss(cs, obs, SmoothingSpec(0.3), eps);
    const LossBreakdown b = svi_loss(cs, obs, SmoothingSpec(0.6), eps);
    CHECK(std::abs(b.penalty_term - a.penalty_term / 4.0) < 1e-12 * a.penalty_term);

    const Observation straight = observe(MeasurementOp::mask(4, {0, 1, 3}), Tensor::vector({0.1, -0.4, 2.0, 0.7}));
    const Observation permuted = observe(MeasurementOp::mask(4, {3, 0, 1}), Tensor::vector({0.1, -0.4, 2.0, 0.7}));
    const double p1 = svi_loss(cs, straight, smoothing, eps).penalty_term;
    const double p2 = svi_loss(cs, permuted, smoothing, eps).penalty_term;
    CHECK(std::abs(p1 - p2) < 1e-12 * p1);
  }

  SUBCASE("gradient matches central differences") {
    Graph g;
    const auto pre = bind_parameters(g, cs.pre_generator, true);
    const auto base_params = bind_parameters(g, cs.base, false);
    const LossVars loss = svi_loss(g, cs, pre, base_params, obs, smoothing, g.constant(eps));
    const auto grads = g.backward(loss.total);
    for (Var p : base_params) CHECK_FALSE(grads.contains(p));
    const auto numeric = oracle::parameter_gradient(cs.pre_generator, [&](const FlowModel& m) {
      return svi_loss(ComposedSampler(m, base), obs, smoothing, eps).total;
    });
    check_close(flatten(grads, pre), numeric);
  }

  SUBCASE("errors") {
    const Observation wrong = observe(MeasurementOp::mask(3, {0}), Tensor::vector({1, 2, 3}));
    CHECK_THROWS_AS(svi_loss(cs, wrong, smoothing, eps), ShapeError);
  }
}

TEST_CASE("ambient VI loss") {
  Rng rng = Rng::stream(3, "ambient");
  FlowModel base = random_flow(3, 7, 0.3);
  const Observation obs = observe(MeasurementOp::mask(3, {1}), Tensor::vector({0.0, 0.5, 0.0}));
  const SmoothingSpec smoothing(0.4);
  const Tensor eps = rng.normal_tensor(Shape{10, 3});

  SUBCASE("q equal to the base has zero KL") {
    CHECK(std::abs(ambient_vi_loss(base, base, obs, smoothing, eps).kl_term) < 1e-9);
  }
  SUBCASE("gradient matches central differences") {
    FlowModel q = random_flow(3, 8, 0.3);
    Graph g;
    const auto qp = bind_parameters(g, q, true);
    const auto bp = bind_parameters(g, base, false);
    const LossVars loss = ambient_vi_loss(g, q, qp, base, bp, obs, smoothing, g.constant(eps));
    const auto grads = g.backward(loss.total);
    const auto numeric = oracle::parameter_gradient(
        q, [&](const FlowModel& m) { return ambient_vi_loss(m, base, obs, smoothing, eps).total; });
    check_close(flatten(grads, qp), numeric);
  }
}

TEST_CASE("joint versus marginal KL") {
  const std::vector<double> mu{0.3, -0.2};
  const Tensor cov = Tensor::matrix(2, 2, {1.0, 0.6, 0.6, 1.5});
  const Tensor lower = oracle::cholesky(cov);
  FlowModel base = make_gaussian_flow(mu, lower);
  const double y = 1.0;
  const double sigma = 0.1;
  const SmoothingSpec smoothing(sigma);
  const Observation obs = observe(MeasurementOp::mask(2, {0}), Tensor::vector({y, 0.0}));
  const GridSpec grid{y - 1.0, y + 1.0, 400, -6.0, 6.0, 400};

  // True posterior expressed in the base latent space.
  const auto [post_mean, post_cov] = oracle::smoothed_gaussian_posterior(mu, cov, 0, y, sigma);
  const std::vector<double> shifted{post_mean[0] - mu[0], post_mean[1] - mu[1]};
  const std::vector<double> z_mean = oracle::lower_solve(lower, shifted);
  const Tensor z_cov = oracle::whiten(lower, post_cov);

  SUBCASE("exact posterior closes the gap") {
    ComposedSampler cs(make_gaussian_flow(z_mean, oracle::cholesky(z_cov)), base);
    const JointMarginalKl kl = joint_vs_marginal_gap(cs, obs, smoothing, grid);
    CHECK(std::abs(kl.q_mass - 1.0) < 0.01);
    CHECK(std::abs(kl.joint_kl) < 1e-2);
    CHECK(std::abs(kl.marginal_kl) < 1e-2);
    CHECK(std::abs(kl.joint_kl - kl.marginal_kl) < 1e-2);
  }
  SUBCASE("mismatched conditional x1 | x2 opens a gap") {
    // Same marginal for x2, independent x1 with the right marginal variance.
    Tensor wrong_cov = post_cov;
    wrong_cov.at(0, 1) = wrong_cov.at(1, 0) = 0.0;
    const auto wrong_z_mean = z_mean;
    ComposedSampler cs(make_gaussian_flow(wrong_z_mean, oracle::cholesky(oracle::whiten(lower, wrong_cov))), base);
    const JointMarginalKl kl = joint_vs_marginal_gap(cs, obs, smoothing, grid);
    CHECK(kl.joint_kl - kl.marginal_kl > 1e-3);
    CHECK(kl.marginal_kl < 1e-2);
  }
  SUBCASE("random q keeps joint above marginal") {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      FlowModel pre = make_gaussian_flow(z_mean, oracle::cholesky(z_cov));
      Rng rng = Rng::stream(seed, "jm");
      ComposedSampler cs(pre, base);
      // Nudge the exact posterior a little so q stays on the grid.
      for (Tensor* t : cs.pre_generator.parameters()) {
        for (double& v : t->data()) v += 0.02 * rng.normal();
      }
      const JointMarginalKl kl = joint_vs_marginal_gap(cs, obs, smoothing, grid);
      CHECK(kl.joint_kl >= kl.marginal_kl - 1e-2);
    }
  }
  SUBCASE("a grid that misses q is rejected") {
    ComposedSampler cs(make_gaussian_flow(z_mean, oracle::cholesky(z_cov)), base);
    CHECK_THROWS_AS(joint_vs_marginal_gap(cs, obs, smoothing, GridSpec{3.0, 4.0, 10, -6.0, 6.0, 10}), Error);
  }
}
