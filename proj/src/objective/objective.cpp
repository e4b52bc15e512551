#include "cflow/objective.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "cflow/error.hpp"

namespace cflow {

SmoothingSpec::SmoothingSpec(double sigma) : sigma_(sigma), beta_(0.0) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) {
    throw DomainError("smoothing: sigma must be positive and finite, got " + std::to_string(sigma));
  }
  beta_ = 1.0 / (2.0 * sigma * sigma);
}

LossBreakdown LossVars::values() const {
  const double kl_v = kl.value().item();
  const double pen_v = penalty.value().item();
  return {kl_v, pen_v, total.value().item()};
}

namespace {

void check_observation(const Observation& obs, std::size_t d, const char* what) {
  if (obs.op.input_dim() != d) {
    throw ShapeError(std::string(what) + ": operator input dimension " + std::to_string(obs.op.input_dim()) +
                     " does not match model dimension " + std::to_string(d));
  }
  if (obs.y_star.size() != obs.op.output_dim()) {
    throw ShapeError(std::string(what) + ": y* has " + std::to_string(obs.y_star.size()) + " entries, operator emits " +
                     std::to_string(obs.op.output_dim()));
  }
}

void check_finite(const LossVars& loss, const char* what) {
  const LossBreakdown v = loss.values();
  if (!std::isfinite(v.kl_term) || !std::isfinite(v.penalty_term)) {
    throw NonFiniteError(std::string(what) + ": non-finite loss (kl " + std::to_string(v.kl_term) + ", penalty " +
                         std::to_string(v.penalty_term) + ")");
  }
}

double log_sum_exp(std::span<const double> v) {
  const double top = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(top)) return top;
  double acc = 0.0;
  for (double x : v) acc += std::exp(x - top);
  return top + std::log(acc);
}

}  // namespace

Var smoothing_penalty(const Observation& obs, const SmoothingSpec& smoothing, Var x) {
  Graph& g = *x.graph();
  const std::size_t n = x.value().rows();
  Var y = g.constant(obs.y_star.reshaped(Shape{1, obs.y_star.size()}));
  Var residual = obs.op.apply(x) - repeat_rows(y, n);
  return mean(sum_cols(square(residual))) * smoothing.beta();
}

Var latent_kl_estimate(const ComposedVars& vars) {
  return mean(standard_normal_log_density(vars.eps) - vars.pre_log_det - standard_normal_log_density(vars.z));
}

double latent_kl_estimate(const ComposedSampler& cs, const Tensor& eps, const Tensor* context) {
  const Tensor e = eps.as_matrix();
  const FlowResult pre = flow_forward(cs.pre_generator, e, context);
  double acc = 0.0;
  for (std::size_t r = 0; r < e.rows(); ++r) {
    acc += standard_normal_log_density(e.row(r)) - pre.log_det[r] - standard_normal_log_density(pre.out.row(r));
  }
  const double kl = acc / static_cast<double>(e.rows());
  if (!std::isfinite(kl)) throw NonFiniteError("latent_kl_estimate: non-finite estimate");
  return kl;
}

LossVars svi_loss(Graph& graph, const ComposedSampler& cs, std::span<const Var> pre_params,
                  std::span<const Var> base_params, const Observation& obs, const SmoothingSpec& smoothing, Var eps,
                  std::optional<Var> context) {
  check_observation(obs, cs.base.dim(), "svi_loss");
  const ComposedVars vars = composed_forward(graph, cs, pre_params, base_params, eps, context);
  Var kl = latent_kl_estimate(vars);
  Var penalty = smoothing_penalty(obs, smoothing, vars.x);
  LossVars loss{kl, penalty, kl + penalty};
  check_finite(loss, "svi_loss");
  return loss;
}

LossBreakdown svi_loss(const ComposedSampler& cs, const Observation& obs, const SmoothingSpec& smoothing,
                       const Tensor& eps, const Tensor* context) {
  Graph graph;
  const auto pre = bind_parameters(graph, cs.pre_generator, false);
  const auto base = bind_parameters(graph, cs.base, false);
  std::optional<Var> ctx;
  const Tensor e = eps.as_matrix();
  if (context != nullptr) {
    const Tensor c = context->as_matrix();
    ctx = c.rows() == e.rows() ? graph.constant(c) : repeat_rows(graph.constant(c), e.rows());
  }
  return svi_loss(graph, cs, pre, base, obs, smoothing, graph.constant(e), ctx).values();
}

LossVars ambient_vi_loss(Graph& graph, const FlowModel& q, std::span<const Var> q_params, const FlowModel& base,
                         std::span<const Var> base_params, const Observation& obs, const SmoothingSpec& smoothing,
                         Var eps) {
  if (q.dim() != base.dim()) throw ShapeError("ambient_vi_loss: q and base dimensions differ");
  check_observation(obs, base.dim(), "ambient_vi_loss");
  FlowVars fwd = flow_forward(graph, q, q_params, eps);
  // log q(x) = log N(eps) - log|det dq/deps|
  Var log_q = standard_normal_log_density(eps) - fwd.log_det;
  Var log_p = flow_log_prob(graph, base, base_params, fwd.out);
  Var kl = mean(log_q - log_p);
  Var penalty = smoothing_penalty(obs, smoothing, fwd.out);
  LossVars loss{kl, penalty, kl + penalty};
  check_finite(loss, "ambient_vi_loss");
  return loss;
}

LossBreakdown ambient_vi_loss(const FlowModel& q, const FlowModel& base, const Observation& obs,
                              const SmoothingSpec& smoothing, const Tensor& eps) {
  Graph graph;
  const auto qp = bind_parameters(graph, q, false);
  const auto bp = bind_parameters(graph, base, false);
  return ambient_vi_loss(graph, q, qp, base, bp, obs, smoothing, graph.constant(eps.as_matrix())).values();
}

JointMarginalKl joint_vs_marginal_gap(const ComposedSampler& cs, const Observation& obs,
                                      const SmoothingSpec& smoothing, const GridSpec& grid) {
  if (cs.base.dim() != 2) throw ShapeError("joint_vs_marginal_gap: needs d = 2");
  if (obs.op.kind() != MeasurementKind::kMask || obs.op.indices() != std::vector<std::size_t>{0}) {
    throw ShapeError("joint_vs_marginal_gap: observation must be a mask on x1 alone");
  }
  if (grid.n1 == 0 || grid.n2 == 0 || !(grid.hi1 > grid.lo1) || !(grid.hi2 > grid.lo2)) {
    throw ShapeError("joint_vs_marginal_gap: empty grid");
  }
  const std::size_t n1 = grid.n1;
  const std::size_t n2 = grid.n2;
  const double h1 = (grid.hi1 - grid.lo1) / static_cast<double>(n1);
  const double h2 = (grid.hi2 - grid.lo2) / static_cast<double>(n2);
  Tensor pts(Shape{n1 * n2, 2});
  for (std::size_t i = 0; i < n1; ++i) {
    for (std::size_t j = 0; j < n2; ++j) {
      pts.at(i * n2 + j, 0) = grid.lo1 + (static_cast<double>(i) + 0.5) * h1;
      pts.at(i * n2 + j, 1) = grid.lo2 + (static_cast<double>(j) + 0.5) * h2;
    }
  }
  std::vector<double> log_q = composed_log_prob(cs, pts);
  std::vector<double> log_p = log_prob(cs.base, pts);
  const double y = obs.y_star[0];
  for (std::size_t k = 0; k < pts.rows(); ++k) {
    const double r = pts.at(k, 0) - y;
    log_p[k] -= smoothing.beta() * r * r;
  }

  const double log_cell = std::log(h1 * h2);
  const double q_mass = std::exp(log_sum_exp(log_q) + log_cell);
  if (!(std::abs(q_mass - 1.0) <= 0.01)) {
    throw Error("joint_vs_marginal_gap: grid too coarse or too small, q mass on grid is " + std::to_string(q_mass));
  }
  const double zq = log_sum_exp(log_q);
  const double zp = log_sum_exp(log_p);
  for (double& v : log_q) v -= zq;
  for (double& v : log_p) v -= zp;

  JointMarginalKl out;
  out.q_mass = q_mass;
  for (std::size_t k = 0; k < log_q.size(); ++k) {
    const double w = std::exp(log_q[k]);
    if (w == 0.0) continue;
    out.joint_kl += w * (log_q[k] - log_p[k]);
  }
  std::vector<double> col_q(n1);
  std::vector<double> col_p(n1);
  for (std::size_t j = 0; j < n2; ++j) {
    for (std::size_t i = 0; i < n1; ++i) {
      col_q[i] = log_q[i * n2 + j];
      col_p[i] = log_p[i * n2 + j];
    }
    const double mq = log_sum_exp(col_q);
    const double mp = log_sum_exp(col_p);
    const double w = std::exp(mq);
    if (w == 0.0) continue;
    out.marginal_kl += w * (mq - mp);
  }
  if (!std::isfinite(out.joint_kl) || !std::isfinite(out.marginal_kl)) {
    throw NonFiniteError("joint_vs_marginal_gap: posterior vanishes where q has mass");
  }
  return out;
}

}  // namespace cflow
