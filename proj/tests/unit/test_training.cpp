#include <cmath>
#include <numbers>
#include <sstream>

#include "doctest.h"

#include "cflow/analytic_flows.hpp"
#include "cflow/training.hpp"
#include "oracles.hpp"

using namespace cflow;

namespace {

FlowModel gaussian_base() {
  const std::vector<double> mu{0.0, 0.5};
  return make_gaussian_flow_from_covariance(mu, Tensor::matrix(2, 2, {1.0, 0.8, 0.8, 1.0}));
}

}  // namespace

TEST_CASE("adam") {
  Tensor p = Tensor::vector({1.0, -2.0});
  std::vector<Tensor*> params{&p};
  SUBCASE("zero gradient leaves parameters unchanged") {
    Adam adam(0.1);
    for (int i = 0; i < 5; ++i) CHECK(adam.step(params, {Tensor::vector({0.0, 0.0})}) == 0.0);
    CHECK(p == Tensor::vector({1.0, -2.0}));
  }
  SUBCASE("first step moves each coordinate by about lr against the gradient") {
    Adam adam(0.1);
    adam.step(params, {Tensor::vector({3.0, -0.5})});
    CHECK(p[0] == doctest::Approx(0.9).epsilon(1e-6));
    CHECK(p[1] == doctest::Approx(-1.9).epsilon(1e-6));
    CHECK(adam.step_count() == 1);
  }
  SUBCASE("clipping rescales the global norm") {
    Adam clipped(0.1);
    Adam plain(0.1);
    Tensor q = p;
    std::vector<Tensor*> qs{&q};
    const double norm = clipped.step(params, {Tensor::vector({300.0, 400.0})}, 100.0);
    plain.step(qs, {Tensor::vector({60.0, 80.0})});
    CHECK(norm == doctest::Approx(500.0));
    CHECK(p == q);
  }
  SUBCASE("minimises a quadratic") {
    Adam adam(0.05);
    for (int i = 0; i < 2000; ++i) adam.step(params, {Tensor::vector({2.0 * (p[0] - 3.0), 2.0 * (p[1] + 1.0)})});
    CHECK(p[0] == doctest::Approx(3.0).epsilon(1e-3));
    CHECK(p[1] == doctest::Approx(-1.0).epsilon(1e-3));
  }
}

TEST_CASE("train_svi bookkeeping") {
  const FlowModel base = gaussian_base();
  const FlowModel base_copy = base;
  const Observation obs = observe(MeasurementOp::mask(2, {0}), Tensor::vector({1.0, 0.0}));
  const FlowSpec spec{.dim = 2, .num_couplings = 2, .hidden = {8}};

  SUBCASE("zero steps return the identity start") {
    TrainConfig config{.num_steps = 0, .seed = 4};
    const SviResult r = train_svi(base, obs, config, spec);
    Rng init = Rng::stream(4, "svi-init");
    CHECK(r.pre_generator == FlowModel::create(spec, init));
    CHECK(r.trace.records.empty());
  }
  SUBCASE("trace, determinism and a frozen base") {
    TrainConfig config{.learning_rate = 1e-2, .num_steps = 20, .batch_size = 16, .seed = 9, .checkpoint_every = 5};
    std::vector<std::size_t> saved;
    const SviResult a = train_svi(base, obs, config, spec, [&](std::size_t step, const FlowModel&) { saved.push_back(step); });
    const SviResult b = train_svi(base, obs, config, spec);
    CHECK(saved == std::vector<std::size_t>{5, 10, 15, 20});
    REQUIRE(a.trace.records.size() == 20);
    CHECK(a.trace.records[0].kl == 0.0);
    CHECK(a.pre_generator == b.pre_generator);
    Rng init = Rng::stream(9, "svi-init");
    CHECK(a.pre_generator != FlowModel::create(spec, init));
    CHECK(base == base_copy);
    for (const TraceRecord& r : a.trace.records) {
      CHECK(std::isfinite(r.total));
      CHECK(std::abs(r.total - (r.kl + r.penalty)) < 1e-12);
    }
    std::ostringstream csv;
    a.trace.write_csv(csv);
    CHECK(csv.str().rfind("step,kl,penalty,total,grad_norm\n0,0,", 0) == 0);
  }
  SUBCASE("non-finite loss aborts with the step index") {
    const Observation absurd = observe(MeasurementOp::mask(2, {0}), Tensor::vector({1e200, 0.0}));
    TrainConfig config{.num_steps = 5, .batch_size = 4};
    try {
      train_svi(base, absurd, config, spec);
      FAIL("expected a training error");
    } catch (const TrainingError& e) {
      CHECK(e.step() == 0);
      CHECK(e.trace().records.empty());
    }
  }
  SUBCASE("invalid configs") {
    CHECK_THROWS_AS(train_svi(base, obs, TrainConfig{.batch_size = 0}, spec), ConfigError);
    CHECK_THROWS_AS(train_svi(base, obs, TrainConfig{.sigma = 0.0}, spec), Error);
  }
}

TEST_CASE("train_svi recovers a Gaussian posterior") {
  const FlowModel base = gaussian_base();
  const double y = 1.0;
  const double sigma = 0.1;
  const Observation obs = observe(MeasurementOp::mask(2, {0}), Tensor::vector({y, 0.0}));
  TrainConfig config{.learning_rate = 1e-3, .num_steps = 3000, .batch_size = 256, .sigma = sigma, .seed = 1};
  const SviResult r = train_svi(base, obs, config, FlowSpec{.dim = 2, .num_couplings = 4, .hidden = {32, 32}});

  const auto [m_exact, v_exact] = oracle::posterior_x2_moments(base, y, sigma, -6.0, 7.0);
  // Cross-check the grid oracle against the closed form.
  const std::vector<double> mu{0.0, 0.5};
  const auto [pm, pc] = oracle::smoothed_gaussian_posterior(mu, Tensor::matrix(2, 2, {1.0, 0.8, 0.8, 1.0}), 0, y, sigma);
  CHECK(std::abs(m_exact - pm[1]) < 1e-3);
  CHECK(std::abs(v_exact - pc.at(1, 1)) < 1e-3);

  Rng rng = Rng::stream(2, "posterior-samples");
  const auto s = composed_sample(ComposedSampler(r.pre_generator, base), 20000, rng);
  double m = 0.0;
  for (std::size_t i = 0; i < 20000; ++i) m += s.x.at(i, 1);
  m /= 20000.0;
  double v = 0.0;
  for (std::size_t i = 0; i < 20000; ++i) v += (s.x.at(i, 1) - m) * (s.x.at(i, 1) - m);
  v /= 20000.0;
  CHECK(std::abs(m - m_exact) < 0.05);
  CHECK(std::abs(v - v_exact) < 0.05);
}

TEST_CASE("train_base_mle") {
  Rng rng = Rng::stream(3, "mle-data");
  const Tensor data = rng.normal_tensor(Shape{4000, 2});
  const Tensor held_out = rng.normal_tensor(Shape{4000, 2});
  Rng init = Rng::stream(3, "mle-init");
  FlowModel flow = FlowModel::create(FlowSpec{.dim = 2, .num_couplings = 4, .hidden = {16}}, init);
  const FlowModel start = flow;

  SUBCASE("zero steps leave parameters unchanged") {
    CHECK(train_base_mle(flow, data, TrainConfig{.num_steps = 0}).pre_generator == start);
  }
  SUBCASE("standard normal data reaches the entropy rate") {
    TrainConfig config{.learning_rate = 1e-3, .num_steps = 300, .batch_size = 128, .seed = 5};
    const SviResult r = train_base_mle(flow, data, config);
    const double entropy = 0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e);
    CHECK(entropy == doctest::Approx(1.4189).epsilon(1e-4));
    CHECK(std::abs(nll_per_dim(r.pre_generator, held_out) - entropy) < 0.05);
    CHECK(r.trace.records.size() == 300);
  }
  SUBCASE("a shifted Gaussian is learned") {
    Tensor shifted = data;
    for (std::size_t i = 0; i < shifted.rows(); ++i) {
      shifted.at(i, 0) = 0.5 * shifted.at(i, 0) + 1.0;
      shifted.at(i, 1) = 2.0 * shifted.at(i, 1) - 1.0 + 0.5 * shifted.at(i, 0);
    }
    TrainConfig config{.learning_rate = 1e-2, .num_steps = 600, .batch_size = 128, .seed = 6};
    const SviResult r = train_base_mle(flow, shifted, config);
    CHECK(r.trace.records.back().total < r.trace.records.front().total - 0.3);
    Rng draw = Rng::stream(7, "mle-sample");
    const Tensor xs = sample(r.pre_generator, 20000, draw);
    double m0 = 0.0;
    double m1 = 0.0;
    for (std::size_t i = 0; i < xs.rows(); ++i) {
      m0 += xs.at(i, 0);
      m1 += xs.at(i, 1);
    }
    CHECK(std::abs(m0 / 20000.0 - 1.0) < 0.1);
    CHECK(std::abs(m1 / 20000.0 - (-1.0 + 0.5)) < 0.15);
  }
}

TEST_CASE("amortized training") {
  const FlowModel base = gaussian_base();
  const Observation fixed = observe(MeasurementOp::mask(2, {0}), Tensor::vector({1.0, 0.0}));

  SUBCASE("context embedding") {
    const Observation o = observe(MeasurementOp::mask(3, {2, 0}), Tensor::vector({4.0, 5.0, 6.0}));
    CHECK(amortization_context(o) == Tensor::vector({4.0, 0.0, 6.0, 1.0, 0.0, 1.0}));
    CHECK_THROWS_AS(amortization_context(observe(MeasurementOp::gaussian(1, 2, 3), Tensor::vector({1, 2, 3}))),
                    ConfigError);
  }

  Rng init = Rng::stream(8, "amortized-init");
  const FlowSpec spec{.dim = 2, .num_couplings = 4, .hidden = {32, 32}, .context_width = 4};
  const FlowModel conditional = FlowModel::create(spec, init);
  const ObservationSampler degenerate = [&](Rng&) { return fixed; };

  SUBCASE("zero steps keep the model") {
    CHECK(train_amortized(base, conditional, degenerate, TrainConfig{.num_steps = 0}).pre_generator == conditional);
  }
  SUBCASE("degenerate sampler matches per-observation SVI") {
    TrainConfig config{.learning_rate = 5e-3, .num_steps = 600, .batch_size = 64, .sigma = 0.1, .seed = 2};
    const SviResult amortized = train_amortized(base, conditional, degenerate, config);
    const SviResult svi = train_svi(base, fixed, config, FlowSpec{.dim = 2, .num_couplings = 4, .hidden = {32, 32}});
    Rng eval = Rng::stream(10, "eval-eps");
    const Tensor eps = eval.normal_tensor(Shape{4096, 2});
    const SmoothingSpec smoothing(0.1);
    const double la = amortized_loss(base, amortized.pre_generator, fixed, smoothing, eps).total;
    const double ls = svi_loss(ComposedSampler(svi.pre_generator, base), fixed, smoothing, eps).total;
    CHECK(std::abs(la - ls) < 0.1 * std::abs(ls));
    Rng s = Rng::stream(11, "zero-shot");
    CHECK(amortized_sample(base, amortized.pre_generator, fixed, 10, s).x.rows() == 10);
  }
}
