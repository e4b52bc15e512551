#pragma once

#include <optional>

#include "cflow/flow.hpp"

namespace cflow {

/// q_x: eps ~ N(0, I), z = pre_generator(eps), x = base(z). The base flow is
/// frozen; only the pre-generator is ever trained.
struct ComposedSampler {
  FlowModel pre_generator;
  FlowModel base;

  ComposedSampler(FlowModel pre, FlowModel base_model);
};

/// Graph nodes of one composed pass over an eps batch.
struct ComposedVars {
  Var eps;
  Var z;
  Var x;
  Var pre_log_det;   // log|det d pre_generator / d eps|, [n, 1]
  Var base_log_det;  // log|det d base / d z|, [n, 1]
};

ComposedVars composed_forward(Graph& graph, const ComposedSampler& cs, std::span<const Var> pre_params,
                              std::span<const Var> base_params, Var eps, std::optional<Var> context = std::nullopt);

struct ComposedSamples {
  Tensor eps;                 // [n, d]
  Tensor z;                   // [n, d]
  Tensor x;                   // [n, d]
  std::vector<double> log_q;  // log q_x(x) per row
};

/// Samples with their composed log-density
/// log q_x(x) = log N(eps) - log|det pre| - log|det base|.
ComposedSamples composed_sample(const ComposedSampler& cs, std::size_t n, Rng& rng, const Tensor* context = nullptr);
ComposedSamples composed_push(const ComposedSampler& cs, const Tensor& eps, const Tensor* context = nullptr);

/// log q_x at arbitrary points, through both inverses.
std::vector<double> composed_log_prob(const ComposedSampler& cs, const Tensor& x, const Tensor* context = nullptr);

}  // namespace cflow
