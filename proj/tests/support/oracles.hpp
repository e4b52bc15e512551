#pragma once

// Independent reference computations used only by tests. Nothing here calls
// into the code paths it is used to check beyond plain model evaluation.

#include <functional>
#include <span>
#include <vector>

#include "cflow/flow.hpp"
#include "cflow/rng.hpp"
#include "cflow/tensor.hpp"

namespace cflow::oracle {

using VectorFn = std::function<std::vector<double>(std::span<const double>)>;

/// Central-difference Jacobian, J[i][j] = d f_i / d x_j.
Tensor jacobian(const VectorFn& f, std::span<const double> x, double step = 1e-6);
double log_abs_det(const Tensor& square);

/// KL(N(m1, v1) || N(m2, v2)) in one dimension.
double gaussian_kl_1d(double m1, double v1, double m2, double v2);

/// Adds N(0, scale^2) noise to every parameter of a model.
void perturb(FlowModel& model, Rng& rng, double scale);

/// Fills a uniform [lo, hi]^2 grid of cell centres and returns exp(log_prob).
struct Grid2 {
  double lo1, hi1;
  std::size_t n1;
  double lo2, hi2;
  std::size_t n2;
  double cell() const { return (hi1 - lo1) / double(n1) * (hi2 - lo2) / double(n2); }
  double x1(std::size_t i) const { return lo1 + (double(i) + 0.5) * (hi1 - lo1) / double(n1); }
  double x2(std::size_t j) const { return lo2 + (double(j) + 0.5) * (hi2 - lo2) / double(n2); }
};
std::vector<double> grid_density(const FlowModel& model, const Grid2& grid);

/// Posterior of x2 given a smoothed observation of x1 under a 2-D base,
/// integrated over each of `bins` equal bins on [lo, hi]; sums to 1.
std::vector<double> posterior_x2_bins(const FlowModel& base, double y, double sigma, double lo, double hi,
                                      std::size_t bins);

/// Mean and variance of the same posterior.
std::pair<double, double> posterior_x2_moments(const FlowModel& base, double y, double sigma, double lo, double hi);

std::vector<double> histogram(std::span<const double> values, double lo, double hi, std::size_t bins);
double total_variation(std::span<const double> p, std::span<const double> q);

/// Posterior of N(mean, cov) under the smoothing factor
/// exp(-(x[observed] - y)^2 / (2 sigma^2)); returns (mean, covariance).
std::pair<std::vector<double>, Tensor> smoothed_gaussian_posterior(std::span<const double> mean, const Tensor& cov,
                                                                   std::size_t observed, double y, double sigma);

/// Lower Cholesky factor of a symmetric positive-definite matrix.
Tensor cholesky(const Tensor& spd);
/// L^{-1} v and L^{-1} C L^{-T} for lower-triangular L.
std::vector<double> lower_solve(const Tensor& lower, std::span<const double> v);
Tensor whiten(const Tensor& lower, const Tensor& cov);

/// Central differences of a scalar function of a model's flat parameters.
std::vector<double> parameter_gradient(FlowModel model, const std::function<double(const FlowModel&)>& f,
                                       double step = 1e-6);

/// Brute-force CNF evaluation over a {-1, 1} corner.
bool satisfies(const std::vector<std::vector<std::pair<std::size_t, int>>>& clauses, std::span<const double> corner);

}  // namespace cflow::oracle
