#include "cflow/training.hpp"

#include <cmath>
#include <ostream>

namespace cflow {

Adam::Adam(double learning_rate, double beta1, double beta2, double epsilon)
    : lr_(learning_rate), beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {
  if (!(learning_rate >= 0.0)) throw ConfigError("adam: learning rate must be non-negative");
}

double Adam::step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads,
                  std::optional<double> clip_norm) {
  if (params.size() != grads.size()) throw ShapeError("adam: parameter and gradient counts differ");
  if (m_.empty()) {
    for (const Tensor* p : params) {
      m_.emplace_back(p->shape());
      v_.emplace_back(p->shape());
    }
  }
  if (m_.size() != params.size()) throw ShapeError("adam: parameter list changed between steps");

  double sq = 0.0;
  for (std::size_t k = 0; k < grads.size(); ++k) {
    if (grads[k].shape() != params[k]->shape()) {
      throw ShapeError("adam: gradient " + shape_string(grads[k].shape()) + " for parameter " +
                       shape_string(params[k]->shape()));
    }
    for (double g : grads[k].data()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  double scale = 1.0;
  if (clip_norm && norm > *clip_norm) scale = *clip_norm / norm;

  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto p = params[k]->data();
    auto g = grads[k].data();
    auto m = m_[k].data();
    auto v = v_[k].data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i] * scale;
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * gi;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
      p[i] -= lr_ * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + epsilon_);
    }
  }
  return norm;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be positive");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (!(sigma > 0.0)) throw ConfigError("sigma must be positive");
  if (gradient_clip_norm && !(*gradient_clip_norm > 0.0)) throw ConfigError("gradient_clip_norm must be positive");
}

void TrainTrace::write_csv(std::ostream& out) const {
  out << "step,kl,penalty,total,grad_norm\n";
  const auto old = out.precision(17);
  for (const TraceRecord& r : records) {
    out << r.step << ',' << r.kl << ',' << r.penalty << ',' << r.total << ',' << r.grad_norm << '\n';
  }
  out.precision(old);
}

namespace {

using StepLoss = std::function<LossVars(Graph&, std::span<const Var>, std::size_t)>;

SviResult run_adam(FlowModel model, const TrainConfig& config, const StepLoss& loss_fn, const CheckpointFn& checkpoint,
                   const char* what) {
  config.validate();
  Adam adam(config.learning_rate);
  TrainTrace trace;
  trace.records.reserve(config.num_steps);
  for (std::size_t step = 0; step < config.num_steps; ++step) {
    Graph graph;
    const auto params = bind_parameters(graph, model, true);
    LossVars loss;
    try {
      loss = loss_fn(graph, params, step);
    } catch (const NonFiniteError& e) {
      throw TrainingError(std::string(what) + ": step " + std::to_string(step) + ": " + e.what(), step, trace);
    } catch (const DomainError& e) {
      throw TrainingError(std::string(what) + ": step " + std::to_string(step) + ": " + e.what(), step, trace);
    }
    const LossBreakdown values = loss.values();
    if (!std::isfinite(values.total)) {
      throw TrainingError(std::string(what) + ": step " + std::to_string(step) + ": non-finite loss", step, trace);
    }
    const GradientMap grads = graph.backward(loss.total);
    std::vector<Tensor> grad_list;
    grad_list.reserve(params.size());
    for (Var p : params) grad_list.push_back(grads[p]);
    const double norm = adam.step(model.parameters(), grad_list, config.gradient_clip_norm);
    if (!std::isfinite(norm)) {
      throw TrainingError(std::string(what) + ": step " + std::to_string(step) + ": non-finite gradient", step, trace);
    }
    trace.records.push_back({step, values.kl_term, values.penalty_term, values.total, norm});
    if (checkpoint && config.checkpoint_every > 0 && (step + 1) % config.checkpoint_every == 0) {
      checkpoint(step + 1, model);
    }
  }
  return {std::move(model), std::move(trace)};
}

}  // namespace

SviResult train_svi(const FlowModel& base, const Observation& obs, const TrainConfig& config,
                    const FlowSpec& pre_spec, const CheckpointFn& checkpoint) {
  if (pre_spec.dim != base.dim() || pre_spec.context_width != 0) {
    throw ConfigError("train_svi: pre-generator spec must match the base dimension and have no context");
  }
  Rng init = Rng::stream(config.seed, "svi-init");
  FlowModel pre = FlowModel::create(pre_spec, init);
  const SmoothingSpec smoothing(config.sigma);
  // Graph passes read parameter values from the bound nodes, so this copy
  // only supplies the layer layout.
  const ComposedSampler layout(pre, base);
  const StepLoss loss = [&](Graph& g, std::span<const Var> params, std::size_t step) {
    Rng rng = Rng::stream(config.seed, "svi-eps", step);
    Var eps = g.constant(rng.normal_tensor(Shape{config.batch_size, base.dim()}));
    const auto base_params = bind_parameters(g, base, false);
    return svi_loss(g, layout, params, base_params, obs, smoothing, eps);
  };
  return run_adam(std::move(pre), config, loss, checkpoint, "train_svi");
}

SviResult train_svi(const FlowModel& base, const Observation& obs, const TrainConfig& config) {
  return train_svi(base, obs, config, FlowSpec{.dim = base.dim()});
}

SviResult train_ambient_vi(const FlowModel& base, const Observation& obs, const TrainConfig& config) {
  const SmoothingSpec smoothing(config.sigma);
  const StepLoss loss = [&](Graph& g, std::span<const Var> params, std::size_t step) {
    Rng rng = Rng::stream(config.seed, "svi-eps", step);
    Var eps = g.constant(rng.normal_tensor(Shape{config.batch_size, base.dim()}));
    const auto base_params = bind_parameters(g, base, false);
    return ambient_vi_loss(g, base, params, base, base_params, obs, smoothing, eps);
  };
  return run_adam(base, config, loss, {}, "train_ambient_vi");
}

Tensor amortization_context(const Observation& obs) {
  if (obs.op.kind() != MeasurementKind::kMask) {
    throw ConfigError(std::string("amortization needs a mask observation, got ") + measurement_kind_name(obs.op.kind()));
  }
  const std::size_t d = obs.op.input_dim();
  Tensor ctx(Shape{2 * d});
  const auto& idx = obs.op.indices();
  for (std::size_t k = 0; k < idx.size(); ++k) {
    ctx[idx[k]] = obs.y_star[k];
    ctx[d + idx[k]] = 1.0;
  }
  return ctx;
}

namespace {

void check_conditional(const FlowModel& base, const FlowModel& pre) {
  if (pre.dim() != base.dim() || pre.context_width() != 2 * base.dim()) {
    throw ConfigError("amortized pre-generator must have dimension d and context width 2d");
  }
}

LossVars amortized_graph_loss(Graph& g, const ComposedSampler& layout, std::span<const Var> params,
                              const Observation& obs, const SmoothingSpec& smoothing, const Tensor& eps) {
  const auto base_params = bind_parameters(g, layout.base, false);
  const Tensor ctx = amortization_context(obs);
  Var context = repeat_rows(g.constant(ctx.reshaped(Shape{1, ctx.size()})), eps.rows());
  return svi_loss(g, layout, params, base_params, obs, smoothing, g.constant(eps), context);
}

}  // namespace

SviResult train_amortized(const FlowModel& base, FlowModel conditional_pre_generator,
                          const ObservationSampler& sampler, const TrainConfig& config,
                          const CheckpointFn& checkpoint) {
  check_conditional(base, conditional_pre_generator);
  const SmoothingSpec smoothing(config.sigma);
  const ComposedSampler layout(conditional_pre_generator, base);
  const StepLoss loss = [&](Graph& g, std::span<const Var> params, std::size_t step) {
    Rng obs_rng = Rng::stream(config.seed, "amortized-obs", step);
    const Observation obs = sampler(obs_rng);
    Rng eps_rng = Rng::stream(config.seed, "amortized-eps", step);
    const Tensor eps = eps_rng.normal_tensor(Shape{config.batch_size, base.dim()});
    return amortized_graph_loss(g, layout, params, obs, smoothing, eps);
  };
  return run_adam(std::move(conditional_pre_generator), config, loss, checkpoint, "train_amortized");
}

LossBreakdown amortized_loss(const FlowModel& base, const FlowModel& conditional_pre_generator,
                             const Observation& obs, const SmoothingSpec& smoothing, const Tensor& eps) {
  check_conditional(base, conditional_pre_generator);
  const ComposedSampler layout(conditional_pre_generator, base);
  Graph g;
  const auto params = bind_parameters(g, conditional_pre_generator, false);
  return amortized_graph_loss(g, layout, params, obs, smoothing, eps.as_matrix()).values();
}

ComposedSamples amortized_sample(const FlowModel& base, const FlowModel& conditional_pre_generator,
                                 const Observation& obs, std::size_t n, Rng& rng) {
  check_conditional(base, conditional_pre_generator);
  const ComposedSampler cs(conditional_pre_generator, base);
  const Tensor ctx = amortization_context(obs);
  return composed_sample(cs, n, rng, &ctx);
}

SviResult train_base_mle(FlowModel flow, const Tensor& dataset, const TrainConfig& config,
                         const CheckpointFn& checkpoint) {
  const Tensor data = dataset.as_matrix();
  if (data.cols() != flow.dim()) {
    throw ShapeError("train_base_mle: dataset width " + std::to_string(data.cols()) + " differs from flow dimension " +
                     std::to_string(flow.dim()));
  }
  if (config.num_steps > 0 && (dataset.rank() != 2 || data.rows() == 0)) {
    throw ConfigError("train_base_mle: empty dataset");
  }
  const double d = static_cast<double>(flow.dim());
  const FlowModel layout = flow;
  const StepLoss loss = [&](Graph& g, std::span<const Var> params, std::size_t step) {
    Rng rng = Rng::stream(config.seed, "mle-batch", step);
    Tensor batch(Shape{config.batch_size, layout.dim()});
    for (std::size_t r = 0; r < config.batch_size; ++r) {
      const auto src = data.row(rng.below(data.rows()));
      std::copy(src.begin(), src.end(), batch.row(r).begin());
    }
    Var nll = mean(flow_log_prob(g, layout, params, g.constant(batch))) * (-1.0 / d);
    Var zero = g.constant(Tensor::scalar(0.0));
    return LossVars{nll, zero, nll};
  };
  return run_adam(std::move(flow), config, loss, checkpoint, "train_base_mle");
}

double nll_per_dim(const FlowModel& flow, const Tensor& dataset) {
  const auto lp = log_prob(flow, dataset);
  double acc = 0.0;
  for (double v : lp) acc += v;
  return -acc / static_cast<double>(lp.size()) / static_cast<double>(flow.dim());
}

}  // namespace cflow
