#pragma once

#include <optional>

#include "cflow/composed.hpp"
#include "cflow/measurement.hpp"

namespace cflow {

/// Gaussian smoothing p(y~ | y) proportional to exp(-beta * ||y~ - y||^2) with
/// beta = 1 / (2 sigma^2). Only the squared-l2 distance is implemented.
class SmoothingSpec {
 public:
  explicit SmoothingSpec(double sigma);

  double sigma() const { return sigma_; }
  double beta() const { return beta_; }

 private:
  double sigma_;
  double beta_;
};

struct LossBreakdown {
  double kl_term = 0.0;
  double penalty_term = 0.0;
  double total = 0.0;
};

struct LossVars {
  Var kl;
  Var penalty;
  Var total;

  LossBreakdown values() const;
};

/// beta * mean_rows ||A(x_row) - y*||^2 for a [n, d] batch.
Var smoothing_penalty(const Observation& obs, const SmoothingSpec& smoothing, Var x);

/// mean[log N(eps) - log|det pre(eps)| - log N(z)], a Monte Carlo estimate of
/// KL(q_z || p_z).
Var latent_kl_estimate(const ComposedVars& vars);
double latent_kl_estimate(const ComposedSampler& cs, const Tensor& eps, const Tensor* context = nullptr);

/// Smoothed latent VI loss over an eps batch. Only pre_params should be
/// trainable; the base is bound as constants by the tensor-level overload.
LossVars svi_loss(Graph& graph, const ComposedSampler& cs, std::span<const Var> pre_params,
                  std::span<const Var> base_params, const Observation& obs, const SmoothingSpec& smoothing, Var eps,
                  std::optional<Var> context = std::nullopt);
LossBreakdown svi_loss(const ComposedSampler& cs, const Observation& obs, const SmoothingSpec& smoothing,
                       const Tensor& eps, const Tensor* context = nullptr);

/// VI directly in data space: x = q(eps), kl = mean[log q(x) - log p_base(x)].
LossVars ambient_vi_loss(Graph& graph, const FlowModel& q, std::span<const Var> q_params, const FlowModel& base,
                         std::span<const Var> base_params, const Observation& obs, const SmoothingSpec& smoothing,
                         Var eps);
LossBreakdown ambient_vi_loss(const FlowModel& q, const FlowModel& base, const Observation& obs,
                              const SmoothingSpec& smoothing, const Tensor& eps);

/// Cell-centre grid on a rectangle of R^2.
struct GridSpec {
  double lo1 = -6.0;
  double hi1 = 6.0;
  std::size_t n1 = 600;
  double lo2 = -6.0;
  double hi2 = 6.0;
  std::size_t n2 = 600;
};

struct JointMarginalKl {
  double joint_kl = 0.0;     // KL(q(x1, x2) || p(x1, x2 | y~))
  double marginal_kl = 0.0;  // KL(q(x2) || p(x2 | y~))
  double q_mass = 0.0;       // grid mass of q before renormalisation
};

/// Both divergences by grid quadrature for d = 2 with a mask observing x1.
/// The two densities are renormalised on the grid, which makes
/// joint >= marginal hold exactly for the discrete distributions. Throws
/// when q's grid mass is off by more than 1%.
JointMarginalKl joint_vs_marginal_gap(const ComposedSampler& cs, const Observation& obs,
                                      const SmoothingSpec& smoothing, const GridSpec& grid);

}  // namespace cflow
