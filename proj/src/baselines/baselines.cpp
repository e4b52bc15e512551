#include "cflow/baselines.hpp"

#include <cmath>
#include <ostream>

#include "cflow/error.hpp"
#include "cflow/objective.hpp"
#include "cflow/training.hpp"

namespace cflow {

void LmcConfig::validate() const {
  if (!(step_size >= 0.0) || !std::isfinite(step_size)) throw ConfigError("lmc: step_size must be non-negative");
  if (chain_length == 0 || burn_in >= chain_length) throw ConfigError("lmc: need burn_in < chain_length");
  if (thinning == 0) throw ConfigError("lmc: thinning must be at least 1");
  if (num_chains == 0) throw ConfigError("lmc: num_chains must be at least 1");
  if (!(sigma > 0.0)) throw ConfigError("lmc: sigma must be positive");
}

std::size_t LmcConfig::retained_per_chain() const { return (chain_length - burn_in + thinning - 1) / thinning; }

void Chain::write(std::ostream& out) const {
  const auto old = out.precision(17);
  out << "# d=" << dim << ",step_size=" << config.step_size << ",chain_length=" << config.chain_length
      << ",burn_in=" << config.burn_in << ",thinning=" << config.thinning << ",seed=" << config.seed
      << ",sigma=" << config.sigma << ",num_chains=" << config.num_chains << ",drift=half_step\n";
  for (std::size_t r = 0; r < states.rows(); ++r) {
    const auto row = states.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) out << (c ? "," : "") << row[c];
    out << '\n';
  }
  out.precision(old);
}

namespace {

// Row-wise log target [n, 1] at latent states z.
Var log_target_rows(Graph& g, const FlowModel& base, std::span<const Var> base_params, const Observation* obs,
                    double sigma, Var z) {
  Var lp = standard_normal_log_density(z);
  if (std::isinf(sigma)) return lp;
  const double beta = SmoothingSpec(sigma).beta();
  Var x = flow_forward(g, base, base_params, z).out;
  Var y = g.constant(obs->y_star.reshaped(Shape{1, obs->y_star.size()}));
  Var residual = obs->op.apply(x) - repeat_rows(y, z.value().rows());
  return lp - sum_cols(square(residual)) * beta;
}

}  // namespace

Chain lmc_sample(const FlowModel& base, const Observation* obs, const LmcConfig& config) {
  config.validate();
  const bool prior_only = std::isinf(config.sigma);
  if (!prior_only) {
    if (obs == nullptr) throw ConfigError("lmc: an observation is required for finite sigma");
    if (obs->op.input_dim() != base.dim()) throw ShapeError("lmc: operator does not match the base dimension");
  }
  const std::size_t d = base.dim();
  const std::size_t chains = config.num_chains;
  Chain chain;
  chain.dim = d;
  chain.config = config;
  chain.states = Tensor(Shape{config.retained_per_chain() * chains, d});
  chain.log_target.reserve(chain.states.rows());

  Rng init = Rng::stream(config.seed, "lmc-init");
  Tensor z = init.normal_tensor(Shape{chains, d});
  const double half = 0.5 * config.step_size;
  const double noise = std::sqrt(config.step_size);
  std::size_t out_row = 0;
  for (std::size_t t = 0; t < config.chain_length; ++t) {
    Graph g;
    const auto base_params = bind_parameters(g, base, false);
    Var zv = g.parameter(z);
    Var rows = log_target_rows(g, base, base_params, obs, config.sigma, zv);
    const Tensor grad = g.backward(sum(rows))[zv];
    Rng xi = Rng::stream(config.seed, "lmc-noise", t);
    const Tensor kick = xi.normal_tensor(Shape{chains, d});
    for (std::size_t i = 0; i < z.size(); ++i) z[i] += half * grad[i] + noise * kick[i];
    if (!z.all_finite()) throw NonFiniteError("lmc: non-finite state at step " + std::to_string(t));

    const std::size_t done = t + 1;
    if (done > config.burn_in && (done - config.burn_in - 1) % config.thinning == 0) {
      Graph eval;
      const auto eval_params = bind_parameters(eval, base, false);
      const Tensor values = log_target_rows(eval, base, eval_params, obs, config.sigma, eval.constant(z)).value();
      for (std::size_t c = 0; c < chains; ++c) {
        std::copy(z.row(c).begin(), z.row(c).end(), chain.states.row(out_row++).begin());
        chain.log_target.push_back(values[c]);
      }
    }
  }
  return chain;
}

Tensor chain_samples(const FlowModel& base, const Chain& chain) { return flow_forward(base, chain.states).out; }

LatentFit optimize_latent(const FlowModel& base, const Observation& obs, Tensor z0, double learning_rate,
                          std::size_t steps, double lambda) {
  const std::size_t d = base.dim();
  if (z0.size() != d) throw ShapeError("optimize_latent: z0 has wrong length");
  if (obs.op.input_dim() != d) throw ShapeError("optimize_latent: operator does not match the base dimension");
  Tensor z = z0.reshaped(Shape{1, d});
  Adam adam(learning_rate);
  const Tensor y = obs.y_star.reshaped(Shape{1, obs.y_star.size()});
  auto objective = [&](Graph& g, Var zv) {
    const auto params = bind_parameters(g, base, false);
    Var x = flow_forward(g, base, params, zv).out;
    Var fit = sum(square(obs.op.apply(x) - g.constant(y)));
    return std::make_pair(lambda == 0.0 ? fit : fit + sum(square(zv)) * lambda, x);
  };
  for (std::size_t step = 0; step < steps; ++step) {
    Graph g;
    Var zv = g.parameter(z);
    Var loss = objective(g, zv).first;
    if (!std::isfinite(loss.value().item())) {
      throw NonFiniteError("latent optimization: non-finite objective at step " + std::to_string(step));
    }
    const Tensor grad = g.backward(loss)[zv];
    adam.step({&z}, {grad});
  }
  Graph g;
  const auto [loss, x] = objective(g, g.constant(z));
  if (!std::isfinite(loss.value().item())) throw NonFiniteError("latent optimization: non-finite final objective");
  return LatentFit{z.reshaped(Shape{d}), x.value().reshaped(Shape{d}), loss.value().item()};
}

LatentFit ivom_estimate(const FlowModel& base, const Observation& obs, double learning_rate, std::size_t steps,
                        std::uint64_t seed) {
  Rng rng = Rng::stream(seed, "ivom-init");
  return optimize_latent(base, obs, rng.normal_tensor(Shape{base.dim()}), learning_rate, steps, 0.0);
}

CsgmResult csgm_estimate(const FlowModel& base, const Observation& obs, double learning_rate, std::size_t steps,
                         double lambda, std::size_t restarts, std::uint64_t seed) {
  if (restarts == 0) throw ConfigError("csgm: restarts must be at least 1");
  CsgmResult result;
  for (std::size_t r = 0; r < restarts; ++r) {
    Rng rng = Rng::stream(seed, "csgm-init", r);
    Tensor z0 = rng.normal_tensor(Shape{base.dim()});
    for (double& v : z0.data()) v *= 0.1;
    LatentFit fit = optimize_latent(base, obs, std::move(z0), learning_rate, steps, lambda);
    result.restart_objectives.push_back(fit.objective);
    if (r == 0 || fit.objective < result.best.objective) result.best = std::move(fit);
  }
  return result;
}

}  // namespace cflow
