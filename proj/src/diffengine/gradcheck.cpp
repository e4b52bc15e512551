#include "cflow/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "cflow/error.hpp"

namespace cflow {
namespace {

double evaluate(const ScalarBuilder& function, const Tensor& point) {
  Graph graph;
  Var x = graph.parameter(point);
  const double value = function(graph, x).value().item();
  if (!std::isfinite(value)) throw NonFiniteError("check_gradients: function value is not finite");
  return value;
}

}  // namespace

Tensor numeric_gradient(const ScalarBuilder& function, const Tensor& point, double step) {
  Tensor grad(point.shape());
  Tensor probe = point;
  for (std::size_t i = 0; i < point.size(); ++i) {
    probe[i] = point[i] + step;
    const double up = evaluate(function, probe);
    probe[i] = point[i] - step;
    const double down = evaluate(function, probe);
    probe[i] = point[i];
    grad[i] = (up - down) / (2.0 * step);
  }
  return grad;
}

double check_gradients(const ScalarBuilder& function, const Tensor& point, double step) {
  Graph graph;
  Var x = graph.parameter(point);
  Var loss = function(graph, x);
  if (!std::isfinite(loss.value().item())) throw NonFiniteError("check_gradients: function value is not finite");
  const Tensor analytic = graph.backward(loss)[x];
  const Tensor numeric = numeric_gradient(function, point, step);

  double worst = 0.0;
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double a = analytic[i];
    const double n = numeric[i];
    worst = std::max(worst, std::abs(a - n) / (std::abs(a) + std::abs(n) + 1e-12));
  }
  return worst;
}

}  // namespace cflow
