#pragma once

#include <functional>

#include "cflow/graph.hpp"

namespace cflow {

/// Builds a scalar loss on `graph` from the parameter node `x`.
using ScalarBuilder = std::function<Var(Graph& graph, Var x)>;

/// Max over coordinates of |analytic - central| / (|analytic| + |central| + 1e-12),
/// with the analytic gradient taken from a backward sweep and the numeric one
/// from central differences of width 2*step. Throws NonFiniteError if any
/// evaluation is not finite.
double check_gradients(const ScalarBuilder& function, const Tensor& point, double step = 1e-5);

/// Central-difference gradient alone.
Tensor numeric_gradient(const ScalarBuilder& function, const Tensor& point, double step = 1e-5);

}  // namespace cflow
