#include <cmath>
#include <sstream>

#include "doctest.h"

#include "cflow/error.hpp"
#include "cflow/estimators.hpp"
#include "cflow/rng.hpp"

using namespace cflow;

TEST_CASE("mmse estimate is the sample mean") {
  const SampleSet set(Tensor::matrix(2, 2, {0.0, 0.0, 2.0, 2.0}), Provenance::kSvi, 0);
  CHECK(mmse_estimate(set) == Tensor::vector({1.0, 1.0}));
  CHECK_THROWS_AS(SampleSet(Tensor(Shape{0, 2}), Provenance::kSvi, 0), ShapeError);
}

TEST_CASE("provenance names round trip") {
  for (Provenance p : {Provenance::kSvi, Provenance::kLmc, Provenance::kAmortized}) {
    CHECK(parse_provenance(provenance_name(p)) == p);
  }
  CHECK_THROWS_AS(parse_provenance("mcmc"), ConfigError);
}

TEST_CASE("silverman bandwidth") {
  const std::vector<double> one{3.0};
  CHECK(silverman_bandwidth(one) == kMinBandwidth);
  const std::vector<double> same(50, 1.0);
  CHECK(silverman_bandwidth(same) == kMinBandwidth);
  Rng rng = Rng::stream(1, "bw");
  std::vector<double> v(5000);
  for (double& x : v) x = rng.normal();
  CHECK(silverman_bandwidth(v) == doctest::Approx(0.9 * std::pow(5000.0, -0.2)).epsilon(0.05));
}

TEST_CASE("pixel marginal") {
  SUBCASE("bimodal samples give two density peaks") {
    Rng rng = Rng::stream(2, "bimodal");
    Tensor rows(Shape{4000, 1});
    for (std::size_t i = 0; i < 4000; ++i) rows[i] = (i % 2 ? 1.0 : -1.0) + 0.2 * rng.normal();
    const PixelMarginal pm = pixel_marginal(SampleSet(rows, Provenance::kLmc, 2), 0, 30);
    CHECK(pm.kde_mass() == doctest::Approx(1.0).epsilon(1e-3));
    std::size_t maxima = 0;
    for (std::size_t i = 1; i + 1 < pm.density.size(); ++i) {
      if (pm.density[i] > pm.density[i - 1] && pm.density[i] > pm.density[i + 1]) ++maxima;
    }
    CHECK(maxima == 2);
    std::size_t total = 0;
    for (std::size_t c : pm.counts) total += c;
    CHECK(total == 4000);
    CHECK(pm.mean == doctest::Approx(0.0).epsilon(0.02));
  }
  SUBCASE("single sample") {
    const PixelMarginal pm = pixel_marginal(SampleSet(Tensor::matrix(1, 2, {0.3, 0.5}), Provenance::kSvi, 0), 1, 10);
    CHECK(pm.bandwidth == kMinBandwidth);
    CHECK(pm.kde_mass() == doctest::Approx(1.0).epsilon(1e-3));
    CHECK(pm.variance == 0.0);
    std::size_t total = 0;
    for (std::size_t c : pm.counts) total += c;
    CHECK(total == 1);
  }
  SUBCASE("export and errors") {
    const SampleSet set(Tensor::matrix(3, 1, {0.0, 1.0, 2.0}), Provenance::kSvi, 0);
    std::ostringstream out;
    pixel_marginal(set, 0, 4, 0.5).write(out);
    CHECK(out.str().rfind("bin_left,bin_right,count\n", 0) == 0);
    CHECK(out.str().find("\n\ngrid,density\n") != std::string::npos);
    CHECK_THROWS_AS(pixel_marginal(set, 1, 4), ShapeError);
    CHECK_THROWS_AS(pixel_marginal(set, 0, 4, 0.0), DomainError);
  }
}

TEST_CASE("psnr and mse") {
  const Tensor ref = Tensor::vector({0.5, 0.5, 0.5, 0.5});
  const Tensor x = Tensor::vector({0.6, 0.4, 0.6, 0.4});
  CHECK(mse(x, ref) == doctest::Approx(0.01));
  CHECK(psnr(x, ref) == doctest::Approx(20.0));
  CHECK(std::isinf(psnr(ref, ref)));
  CHECK_THROWS_AS(mse(x, Tensor::vector({1.0})), ShapeError);
}

TEST_CASE("diversity of independent standard normals is about sqrt 2") {
  Rng rng = Rng::stream(3, "div");
  const SampleSet set(rng.normal_tensor(Shape{200, 100}), Provenance::kSvi, 3);
  CHECK(std::abs(diversity(set) - std::sqrt(2.0)) < 0.1 * std::sqrt(2.0));
  CHECK_THROWS_AS(diversity(SampleSet(Tensor::matrix(1, 2, {0.0, 0.0}), Provenance::kSvi, 0)), ShapeError);
}

TEST_CASE("mmse decomposition identity") {
  Rng rng = Rng::stream(4, "dec");
  const SampleSet set(rng.normal_tensor(Shape{300, 16}), Provenance::kAmortized, 4);
  const Tensor ref = rng.normal_tensor(Shape{16});
  const MmseDecomposition dec = mmse_decomposition(set, ref);
  CHECK(std::abs(dec.residual()) < 1e-9);
  CHECK(dec.mmse_mse <= dec.mean_sample_mse);
}
