#include <cmath>
#include <string>

#include "doctest.h"

#include "cflow/error.hpp"
#include "cflow/gradcheck.hpp"
#include "cflow/graph.hpp"
#include "cflow/rng.hpp"

using namespace cflow;

namespace {

Tensor random_matrix(Rng& rng, std::size_t rows, std::size_t cols, double scale = 1.0) {
  Tensor t = rng.normal_tensor(Shape{rows, cols});
  for (double& v : t.data()) v *= scale;
  return t;
}

// Keeps samples at least `gap` away from 0 so relu is differentiable there.
Tensor away_from_zero(Tensor t, double gap) {
  for (double& v : t.data()) {
    if (std::abs(v) < gap) v = v < 0 ? -gap - std::abs(v) : gap + v;
  }
  return t;
}

}  // namespace

TEST_CASE("relu, identity matmul and odd tanh") {
  Graph g;
  Var r = relu(g.constant(Tensor::matrix(1, 3, {-1.0, 0.0, 2.0})));
  CHECK(r.value() == Tensor::matrix(1, 3, {0.0, 0.0, 2.0}));

  Var v = g.constant(Tensor::matrix(3, 1, {1.5, -2.0, 4.0}));
  CHECK(matmul(g.constant(Tensor::identity(3)), v).value() == v.value());

  Var s = sum(tanh(g.constant(Tensor::vector({0.5, -0.5}))));
  CHECK(s.value().item() == 0.0);
}

TEST_CASE("analytic derivatives of simple expressions") {
  Graph g;
  Var x = g.parameter(Tensor::scalar(3.0));
  Var loss = sum(square(x));
  CHECK(g.backward(loss)[x].item() == 6.0);

  Graph h;
  Var z = h.parameter(Tensor::scalar(0.0));
  CHECK(h.backward(sum(relu(z)))[z].item() == 0.0);
}

TEST_CASE("backward bookkeeping") {
  Graph g;
  Var x = g.parameter(Tensor::vector({1.0, 2.0}));
  Var unused = g.parameter(Tensor::vector({5.0}));
  Var loss = sum(exp(x));
  Var after = square(x);
  auto grads = g.backward(loss);
  CHECK(g.adjoint(loss).item() == 1.0);
  CHECK(grads[unused] == Tensor::vector({0.0}));
  CHECK(g.adjoint(after) == Tensor::vector({0.0, 0.0}));
  CHECK(grads[x][0] == doctest::Approx(std::exp(1.0)));

  SUBCASE("non-scalar loss is rejected") { CHECK_THROWS_AS(g.backward(x), ShapeError); }
}

TEST_CASE("shape and domain errors name the op and shapes") {
  Graph g;
  Var a = g.constant(Tensor::matrix(2, 3, std::vector<double>(6, 1.0)));
  Var b = g.constant(Tensor::matrix(3, 2, std::vector<double>(6, 1.0)));
  try {
    (void)(a + b);
    FAIL("expected a shape error");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("add") != std::string::npos);
    CHECK(msg.find("[2, 3]") != std::string::npos);
    CHECK(msg.find("[3, 2]") != std::string::npos);
  }
  CHECK_THROWS_AS(matmul(a, a), ShapeError);
  CHECK_THROWS_AS(concat(a, b), ShapeError);
  CHECK_THROWS_AS(gather_cols(a, {3}), ShapeError);
  CHECK_THROWS_AS(log(g.constant(Tensor::vector({1.0, 0.0}))), DomainError);
  CHECK_THROWS_AS(log(g.constant(Tensor::vector({-2.0}))), DomainError);
  CHECK_THROWS_AS(exp(g.constant(Tensor::vector({1000.0}))), NonFiniteError);
}

TEST_CASE("parents precede children") {
  Graph g;
  Var a = g.parameter(Tensor::vector({1.0}));
  Var b = g.constant(Tensor::vector({2.0}));
  Var c = a * b;
  Var d = c + a;
  CHECK(a.id() < c.id());
  CHECK(b.id() < c.id());
  CHECK(c.id() < d.id());
}

TEST_CASE("two-layer tanh network matches central differences") {
  Rng rng = Rng::stream(11, "two-layer");
  const Tensor w1 = random_matrix(rng, 3, 5);
  const Tensor b1 = random_matrix(rng, 1, 5);
  const Tensor w2 = random_matrix(rng, 5, 2);
  const Tensor input = random_matrix(rng, 4, 3);
  // Differentiate with respect to the first-layer weights.
  ScalarBuilder net = [&](Graph& g, Var w) {
    Var h = tanh(matmul(g.constant(input), w) + repeat_rows(g.constant(b1), 4));
    return sum(square(tanh(matmul(h, g.constant(w2)))));
  };
  CHECK(check_gradients(net, w1, 1e-5) < 1e-4);
}

TEST_CASE("check_gradients utility") {
  Rng rng = Rng::stream(5, "gradcheck");
  const Tensor q = random_matrix(rng, 4, 4);
  SUBCASE("quadratic form") {
    ScalarBuilder quad = [&](Graph& g, Var x) { return sum(x * matmul(g.constant(q), x)); };
    CHECK(check_gradients(quad, random_matrix(rng, 4, 1), 1e-5) < 1e-7);
  }
  SUBCASE("constant function") {
    ScalarBuilder constant = [](Graph& g, Var) { return g.constant(Tensor::scalar(2.5)); };
    CHECK(check_gradients(constant, random_matrix(rng, 3, 1)) == 0.0);
  }
  SUBCASE("relu chain away from kinks") {
    ScalarBuilder chain = [&](Graph& g, Var x) {
      return sum(relu(matmul(g.constant(Tensor::identity(3) ), relu(x)) * 2.0));
    };
    CHECK(check_gradients(chain, away_from_zero(random_matrix(rng, 3, 1), 0.05)) < 1e-4);
  }
  SUBCASE("non-finite values are errors") {
    ScalarBuilder blowup = [](Graph&, Var x) { return sum(exp(x * 1000.0)); };
    CHECK_THROWS_AS(check_gradients(blowup, Tensor::matrix(1, 1, {1.0})), NonFiniteError);
  }
}

TEST_CASE("every op passes a random gradient check") {
  for (std::uint64_t trial = 0; trial < 10; ++trial) {
    CAPTURE(trial);
    Rng rng = Rng::stream(trial, "op-gradcheck");
    const Tensor other = random_matrix(rng, 3, 4);
    const Tensor right = random_matrix(rng, 4, 2);
    const Tensor point = away_from_zero(random_matrix(rng, 3, 4), 0.05);
    Tensor positive = point;
    for (double& v : positive.data()) v = std::abs(v) + 0.5;

    const std::vector<std::pair<const char*, ScalarBuilder>> cases = {
        {"add", [&](Graph& g, Var x) { return sum(square(x + g.constant(other))); }},
        {"sub", [&](Graph& g, Var x) { return sum(square(g.constant(other) - x)); }},
        {"mul", [&](Graph& g, Var x) { return sum(x * g.constant(other) * x); }},
        {"matmul", [&](Graph& g, Var x) { return sum(square(matmul(x, g.constant(right)))); }},
        {"scale", [&](Graph&, Var x) { return sum(square(x * -1.7)); }},
        {"sum_cols", [&](Graph&, Var x) { return sum(square(sum_cols(x))); }},
        {"mean", [&](Graph&, Var x) { return square(mean(x)); }},
        {"exp", [&](Graph&, Var x) { return sum(exp(x * 0.5)); }},
        {"tanh", [&](Graph&, Var x) { return sum(tanh(x) * x); }},
        {"relu", [&](Graph&, Var x) { return sum(square(relu(x))); }},
        {"concat", [&](Graph& g, Var x) { return sum(square(concat(x, g.constant(other)) * 0.3)); }},
        {"gather", [&](Graph&, Var x) { return sum(square(gather_cols(x, {3, 0, 0, 2}))); }},
        {"split", [&](Graph&, Var x) {
           auto [l, r] = split(x, 1);
           return sum(square(l)) + sum(r * r * r);
         }},
    };
    for (const auto& [name, fn] : cases) {
      CAPTURE(name);
      CHECK(check_gradients(fn, point, 1e-5) < 1e-4);
    }
    ScalarBuilder log_case = [](Graph&, Var x) { return sum(log(x)); };
    CHECK(check_gradients(log_case, positive, 1e-5) < 1e-4);
  }
}

TEST_CASE("backward is linear in the loss") {
  Rng rng = Rng::stream(3, "linearity");
  const Tensor point = random_matrix(rng, 2, 3);
  const double a = 0.7;
  const double b = -1.3;
  auto l1 = [](Var x) { return sum(tanh(x) * x); };
  auto l2 = [](Var x) { return sum(exp(x * 0.3)); };

  Graph g1;
  Var x1 = g1.parameter(point);
  const Tensor grad1 = g1.backward(l1(x1))[x1];
  Graph g2;
  Var x2 = g2.parameter(point);
  const Tensor grad2 = g2.backward(l2(x2))[x2];
  Graph g3;
  Var x3 = g3.parameter(point);
  const Tensor combined = g3.backward(l1(x3) * a + l2(x3) * b)[x3];
  for (std::size_t i = 0; i < point.size(); ++i) CHECK(std::abs(combined[i] - (a * grad1[i] + b * grad2[i])) < 1e-12);
}

TEST_CASE("replaying a graph is bit-identical") {
  Rng rng = Rng::stream(9, "replay");
  const Tensor w = random_matrix(rng, 3, 3);
  const Tensor x = random_matrix(rng, 5, 3);
  auto run = [&]() {
    Graph g;
    Var p = g.parameter(w);
    Var loss = mean(square(tanh(matmul(g.constant(x), p))));
    auto grads = g.backward(loss);
    return std::make_pair(loss.value(), grads[p]);
  };
  const auto first = run();
  const auto second = run();
  CHECK(first.first == second.first);
  CHECK(first.second == second.second);
}

TEST_CASE("rng streams are keyed and reproducible") {
  Rng a = Rng::stream(1, "eps", 4);
  Rng b = Rng::stream(1, "eps", 4);
  Rng c = Rng::stream(1, "eps", 5);
  const double va = a.normal();
  CHECK(va == b.normal());
  CHECK(va != c.normal());

  Rng u = Rng::stream(2, "moments");
  double mean = 0.0;
  double sq = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double v = u.normal();
    mean += v;
    sq += v * v;
  }
  mean /= n;
  CHECK(std::abs(mean) < 3.0 / std::sqrt(n));
  CHECK(std::abs(sq / n - 1.0) < 0.02);
}
