#include <cmath>
#include <sstream>

#include "doctest.h"

#include "cflow/error.hpp"
#include "cflow/rng.hpp"
#include "cflow/satgadget.hpp"
#include "oracles.hpp"

using namespace cflow;

namespace {

std::vector<std::vector<std::pair<std::size_t, int>>> oracle_clauses(const CnfFormula& f) {
  std::vector<std::vector<std::pair<std::size_t, int>>> out;
  for (const Clause& c : f.clauses()) {
    out.push_back({});
    for (const Literal& l : c) out.back().emplace_back(l.var, l.polarity);
  }
  return out;
}

CnfFormula single_clause() { return CnfFormula(3, {Clause{Literal{0, 1}, Literal{1, 1}, Literal{2, 1}}}); }

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

}  // namespace

TEST_CASE("delta and transformed variable") {
  const double eps = 0.2;
  CHECK(delta_eps(1.0, eps) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(delta_eps(1.0 - eps, eps) == doctest::Approx(0.0));
  CHECK(delta_eps(1.0 + eps, eps) == doctest::Approx(0.0));
  CHECK(delta_eps(1.0 - eps / 2, eps) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(delta_eps(5.0, eps) == 0.0);
  CHECK(delta_eps(-3.0, eps) == 0.0);
  CHECK(transformed_var(1.0, eps) == doctest::Approx(1.0));
  CHECK(transformed_var(-1.0, eps) == doctest::Approx(-1.0));
  CHECK(transformed_var(0.0, eps) == 0.0);
  Rng rng = Rng::stream(1, "odd");
  for (int i = 0; i < 20; ++i) {
    const double a = 3.0 * rng.normal();
    CHECK(transformed_var(-a, eps) == doctest::Approx(-transformed_var(a, eps)).epsilon(1e-12));
  }
}

TEST_CASE("single clause gadget") {
  const SatGadget g = compile_gadget(single_clause(), 0.2, 3.0);
  CHECK(g.neurons().size() == 7);
  const std::vector<double> all_true{1.0, 1.0, 1.0};
  CHECK(g.clause_values(all_true)[0] == doctest::Approx(1.0));
  CHECK(eval_gadget(g, all_true) == doctest::Approx(3.0));
  const std::vector<double> all_false{-1.0, -1.0, -1.0};
  CHECK(g.clause_values(all_false)[0] == 0.0);
  CHECK(eval_gadget(g, all_false) == 0.0);
  const std::vector<double> interior{0.5, 0.5, 0.5};
  CHECK(eval_gadget(g, interior) == 0.0);
}

TEST_CASE("compile preconditions") {
  const CnfFormula f = single_clause();
  CHECK_THROWS_AS(compile_gadget(f, 1.0 / 3.0, 1.0), DomainError);
  CHECK_THROWS_AS(compile_gadget(f, 0.0, 1.0), DomainError);
  CHECK_THROWS_AS(compile_gadget(f, 0.2, 0.0), DomainError);
  const CnfFormula repeated(3, {Clause{Literal{0, 1}, Literal{0, 1}, Literal{2, -1}}});
  CHECK_THROWS_AS(compile_gadget(repeated, 0.2, 1.0), ConfigError);
  CHECK_THROWS_AS(CnfFormula(3, {Clause{Literal{0, 1}, Literal{0, -1}, Literal{2, 1}}}), ConfigError);
  CHECK_THROWS_AS(CnfFormula(2, {Clause{Literal{0, 1}, Literal{1, 1}, Literal{2, 1}}}), ConfigError);
}

TEST_CASE("exhaustive corners match brute force") {
  Rng rng = Rng::stream(2, "corpus");
  for (std::size_t d : {4u, 7u, 10u, 12u}) {
    const CnfFormula f = random_satisfiable_3cnf(d, 2 * d, rng);
    const SatGadget g = compile_gadget(f, 0.25, default_gadget_scale(d, f.num_clauses()));
    const auto clauses = oracle_clauses(f);
    std::vector<double> corner(d);
    std::size_t sat = 0;
    for (std::uint64_t bits = 0; bits < (std::uint64_t{1} << d); ++bits) {
      for (std::size_t i = 0; i < d; ++i) corner[i] = (bits >> i) & 1 ? 1.0 : -1.0;
      const bool expected = oracle::satisfies(clauses, corner);
      sat += expected;
      CHECK(std::abs(eval_gadget(g, corner) - (expected ? g.scale() : 0.0)) < 1e-9);
    }
    CHECK(f.satisfying_corners().size() == sat);
    CHECK(sat > 0);
  }
}

TEST_CASE("gadget output stays in [0, M]") {
  Rng rng = Rng::stream(3, "range");
  const CnfFormula f = random_satisfiable_3cnf(6, 10, rng);
  const SatGadget g = compile_gadget(f, 0.3, 5.0);
  const auto corners = f.satisfying_corners();
  std::vector<double> x(6);
  for (int t = 0; t < 2000; ++t) {
    const auto& a = corners[rng.below(corners.size())];
    for (std::size_t i = 0; i < 6; ++i) x[i] = a[i] + 0.3 * rng.normal();
    const double v = eval_gadget(g, x);
    CHECK(v >= 0.0);
    CHECK(v <= 5.0 + 1e-12);
  }
  std::vector<double> inside(6, 0.69);
  CHECK(eval_gadget(g, inside) == 0.0);
}

TEST_CASE("decode assignment") {
  const std::vector<double> near{0.95, -1.02};
  const auto a = decode_assignment(near, 0.1);
  REQUIRE(a.has_value());
  CHECK((*a == std::vector<bool>{true, false}));
  const std::vector<double> far{0.5, 1.0};
  CHECK_FALSE(decode_assignment(far, 0.1).has_value());
  std::vector<double> corner(6);
  for (int bits = 0; bits < 64; ++bits) {
    for (int i = 0; i < 6; ++i) corner[i] = (bits >> i) & 1 ? 1.0 : -1.0;
    const auto d = decode_assignment(corner, 0.1);
    REQUIRE(d.has_value());
    for (int i = 0; i < 6; ++i) CHECK((*d)[i] == (corner[i] > 0));
  }
}

TEST_CASE("gadget flow round trip") {
  Rng rng = Rng::stream(4, "flow");
  const CnfFormula f = random_satisfiable_3cnf(5, 8, rng);
  const GadgetFlow flow(compile_gadget(f, 0.25, 4.0));
  Tensor xz = rng.normal_tensor(Shape{200, 6});
  for (std::size_t r = 0; r < 100; ++r) {
    for (std::size_t c = 0; c < 5; ++c) xz.at(r, c) = (rng.below(2) ? 1.0 : -1.0) + 0.05 * rng.normal();
  }
  const Tensor xy = flow.forward(xz);
  const Tensor back = flow.inverse(xy);
  double worst = 0.0;
  for (std::size_t i = 0; i < xz.size(); ++i) worst = std::max(worst, std::abs(back[i] - xz[i]));
  CHECK(worst < 1e-12);
  for (std::size_t r = 0; r < 200; ++r) {
    for (std::size_t c = 0; c < 5; ++c) CHECK(xy.at(r, c) == xz.at(r, c));
  }
  CHECK(flow.log_det() == 0.0);
}

TEST_CASE("dimacs") {
  const std::string text =
      "c example\n"
      "p cnf 5 3\n"
      "1 -2 3 0\n"
      "-1 4\n"
      "5 0 2 3 -5 0\n"
      "%\n"
      "0\n";
  const CnfFormula f = parse_dimacs(text);
  CHECK(f.num_vars() == 5);
  CHECK(f.num_clauses() == 3);
  CHECK((f.clauses()[1][2] == Literal{4, 1}));
  CHECK(parse_dimacs(to_dimacs(f)) == f);
  CHECK_THROWS_AS(parse_dimacs("p cnf 3 1\n1 2 0\n"), ConfigError);
  CHECK_THROWS_AS(parse_dimacs("p cnf 3 2\n1 2 3 0\n"), ConfigError);
  CHECK_THROWS_AS(parse_dimacs("p cnf 3 1\n1 2 4 0\n"), ConfigError);
  CHECK_THROWS_AS(parse_dimacs("1 2 3 0\n"), ConfigError);
  CHECK_THROWS_AS(parse_dimacs("p cnf 3 1\n1 2 3\n"), ConfigError);
  CHECK_THROWS_AS(parse_dimacs("p cnf 3 1\n1 x 3 0\n"), ConfigError);
}

TEST_CASE("conditional sat demo") {
  SUBCASE("satisfiable two-clause formula") {
    const CnfFormula f(3, {Clause{Literal{0, 1}, Literal{1, 1}, Literal{2, -1}},
                           Clause{Literal{0, -1}, Literal{1, 1}, Literal{2, 1}}});
    Rng rng = Rng::stream(5, "demo");
    const SatDemoReport r = conditional_sat_demo(f, SatDemoConfig{}, rng);
    CHECK_FALSE(r.inconclusive);
    CHECK(r.n_sat_corners == 6);
    CHECK(r.scale == doctest::Approx(4.0 * std::sqrt(3.0 * std::log(2.0))));
    CHECK(r.accepted > 100);
    CHECK(r.success_fraction >= 0.99);
    std::ostringstream out;
    r.write(out);
    CHECK(out.str().find("success_fraction=") != std::string::npos);
    CHECK(out.str().find("n_sat_corners=6") != std::string::npos);
  }
  SUBCASE("unsatisfiable formula accepts at the gaussian tail rate") {
    std::vector<Clause> clauses;
    for (int s = 0; s < 8; ++s) {
      clauses.push_back(Clause{Literal{0, s & 1 ? 1 : -1}, Literal{1, s & 2 ? 1 : -1}, Literal{2, s & 4 ? 1 : -1}});
    }
    const CnfFormula f(3, clauses);
    CHECK(f.satisfying_corners().empty());
    SatDemoConfig config;
    config.scale = 1.5;
    config.budget = 100000;
    Rng rng = Rng::stream(6, "demo");
    const SatDemoReport r = conditional_sat_demo(f, config, rng);
    const double tail = normal_cdf(2.0) - normal_cdf(1.0);
    CHECK(r.accept_rate == doctest::Approx(tail).epsilon(0.05));
    CHECK(r.accepted_success == 0);
    CHECK(r.success_fraction == 0.0);
  }
  SUBCASE("zero budget is inconclusive") {
    SatDemoConfig config;
    config.budget = 0;
    Rng rng = Rng::stream(7, "demo");
    const SatDemoReport r = conditional_sat_demo(single_clause(), config, rng);
    CHECK(r.inconclusive);
    CHECK(r.accepted == 0);
  }
}
