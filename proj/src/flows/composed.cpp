#include "cflow/composed.hpp"

#include "cflow/error.hpp"

namespace cflow {

ComposedSampler::ComposedSampler(FlowModel pre, FlowModel base_model)
    : pre_generator(std::move(pre)), base(std::move(base_model)) {
  if (pre_generator.dim() != base.dim()) {
    throw ShapeError("composed sampler: pre-generator dimension " + std::to_string(pre_generator.dim()) +
                     " differs from base dimension " + std::to_string(base.dim()));
  }
  if (base.context_width() != 0) throw ShapeError("composed sampler: base flow must be unconditional");
}

ComposedVars composed_forward(Graph& graph, const ComposedSampler& cs, std::span<const Var> pre_params,
                              std::span<const Var> base_params, Var eps, std::optional<Var> context) {
  FlowVars pre = flow_forward(graph, cs.pre_generator, pre_params, eps, context);
  FlowVars base = flow_forward(graph, cs.base, base_params, pre.out);
  return {eps, pre.out, base.out, pre.log_det, base.log_det};
}

ComposedSamples composed_push(const ComposedSampler& cs, const Tensor& eps, const Tensor* context) {
  const Tensor e = eps.as_matrix();
  FlowResult pre = flow_forward(cs.pre_generator, e, context);
  FlowResult base = flow_forward(cs.base, pre.out);
  ComposedSamples out{e, pre.out, base.out, std::vector<double>(e.rows())};
  for (std::size_t r = 0; r < e.rows(); ++r) {
    out.log_q[r] = standard_normal_log_density(e.row(r)) - pre.log_det[r] - base.log_det[r];
  }
  return out;
}

ComposedSamples composed_sample(const ComposedSampler& cs, std::size_t n, Rng& rng, const Tensor* context) {
  return composed_push(cs, rng.normal_tensor(Shape{n, cs.base.dim()}), context);
}

std::vector<double> composed_log_prob(const ComposedSampler& cs, const Tensor& x, const Tensor* context) {
  FlowResult base = flow_inverse(cs.base, x);
  FlowResult pre = flow_inverse(cs.pre_generator, base.out, context);
  const Tensor eps = pre.out.as_matrix();
  std::vector<double> out(eps.rows());
  for (std::size_t r = 0; r < eps.rows(); ++r) {
    out[r] = standard_normal_log_density(eps.row(r)) + pre.log_det[r] + base.log_det[r];
  }
  return out;
}

}  // namespace cflow
