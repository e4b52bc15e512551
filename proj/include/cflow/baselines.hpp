#pragma once

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <vector>

#include "cflow/flow.hpp"
#include "cflow/measurement.hpp"

namespace cflow {

struct LmcConfig {
  double step_size = 5e-4;
  std::size_t chain_length = 4000;
  std::size_t burn_in = 800;
  std::size_t thinning = 1;
  std::uint64_t seed = 0;
  /// Smoothing of the observation term; +inf drops it (prior only).
  double sigma = 0.1;
  /// Independent chains advanced together; states of all chains are retained.
  std::size_t num_chains = 1;

  void validate() const;
  /// ceil((chain_length - burn_in) / thinning)
  std::size_t retained_per_chain() const;
};

/// Retained latent states of an unadjusted Langevin run,
/// z <- z + (eta / 2) grad log pi(z) + sqrt(eta) xi, with
/// log pi(z) = log N(z) - ||A(f(z)) - y*||^2 / (2 sigma^2).
struct Chain {
  std::size_t dim = 0;
  LmcConfig config;
  /// [retained_per_chain * num_chains, d], ordered by step then chain.
  Tensor states;
  std::vector<double> log_target;

  /// Header line with d and the config, then one comma-separated state per line.
  void write(std::ostream& out) const;
};

/// obs may be null only when sigma is infinite.
Chain lmc_sample(const FlowModel& base, const Observation* obs, const LmcConfig& config);

/// Pushes retained latent states through the base flow.
Tensor chain_samples(const FlowModel& base, const Chain& chain);

struct LatentFit {
  Tensor z;                // [d]
  Tensor x;                // f(z), [d]
  double objective = 0.0;  // ||A(x) - y*||^2 + lambda ||z||^2 at the returned z
};

/// Adam on ||A(f(z)) - y*||^2 + lambda ||z||^2 from z0.
LatentFit optimize_latent(const FlowModel& base, const Observation& obs, Tensor z0, double learning_rate,
                          std::size_t steps, double lambda);

/// Inference via optimization: z0 ~ N(0, I), lambda = 0; returns f(z).
LatentFit ivom_estimate(const FlowModel& base, const Observation& obs, double learning_rate = 5e-4,
                        std::size_t steps = 4000, std::uint64_t seed = 0);

struct CsgmResult {
  LatentFit best;
  std::vector<double> restart_objectives;
};

/// Regularised projection with restarts from z0 ~ N(0, 0.1^2 I); keeps the
/// restart with the lowest final objective.
CsgmResult csgm_estimate(const FlowModel& base, const Observation& obs, double learning_rate = 0.02,
                         std::size_t steps = 1000, double lambda = 0.1, std::size_t restarts = 3,
                         std::uint64_t seed = 0);

}  // namespace cflow
