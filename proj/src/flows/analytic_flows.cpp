#include "cflow/analytic_flows.hpp"

#include <cmath>

#include <Eigen/Dense>

#include "cflow/error.hpp"

namespace cflow {
namespace {

// Keeps atanh well away from its poles.
constexpr double kMaxLogScalePerLayer = 0.9 * 1.3862943611198906;  // 0.9 * log(4)

CouplingLayer single_coordinate_layer(std::size_t d, std::size_t coord, double log_scale,
                                      const std::vector<double>& shift_weights, double shift_bias) {
  CouplingLayer layer;
  layer.kind = CouplingKind::kAffine;
  layer.transformed = {coord};
  for (std::size_t j = 0; j < d; ++j) {
    if (j != coord) layer.conditioning.push_back(j);
  }
  Mlp mlp;
  mlp.widths = {d - 1, 2};
  Tensor w(Shape{d - 1, 2});
  for (std::size_t k = 0; k < layer.conditioning.size(); ++k) w.at(k, 0) = shift_weights[layer.conditioning[k]];
  Tensor b(Shape{1, 2});
  b[0] = shift_bias;
  b[1] = std::atanh(log_scale / std::log(kAffineScaleMax));
  mlp.weights.push_back(std::move(w));
  mlp.biases.push_back(std::move(b));
  layer.conditioner = std::move(mlp);
  return layer;
}

}  // namespace

FlowModel make_gaussian_flow(std::span<const double> mean, const Tensor& lower) {
  const std::size_t d = mean.size();
  if (lower.rank() != 2 || lower.rows() != d || lower.cols() != d) {
    throw ShapeError("gaussian flow: factor " + shape_string(lower.shape()) + " does not match mean of length " +
                     std::to_string(d));
  }
  Eigen::MatrixXd L(d, d);
  for (std::size_t r = 0; r < d; ++r) {
    for (std::size_t c = 0; c < d; ++c) L(Eigen::Index(r), Eigen::Index(c)) = c <= r ? lower.at(r, c) : 0.0;
  }
  std::vector<FlowLayer> layers;
  for (std::size_t i = 0; i < d; ++i) {
    const double diag = L(Eigen::Index(i), Eigen::Index(i));
    if (!(diag > 0.0)) throw DomainError("gaussian flow: factor diagonal must be positive");
    // x_i = L_ii z_i + mean_i + r (x_<i - mean_<i), r = L[i, <i] * inv(L[<i, <i]).
    std::vector<double> shift_weights(d, 0.0);
    double shift_bias = mean[i];
    if (i > 0) {
      const auto n = Eigen::Index(i);
      Eigen::VectorXd row = L.block(n, 0, 1, n).transpose();
      Eigen::VectorXd r = L.topLeftCorner(n, n).transpose().triangularView<Eigen::Upper>().solve(row);
      for (std::size_t j = 0; j < i; ++j) {
        shift_weights[j] = r(Eigen::Index(j));
        shift_bias -= r(Eigen::Index(j)) * mean[j];
      }
    }
    const double log_scale = std::log(diag);
    const std::size_t chunks = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(std::abs(log_scale) / kMaxLogScalePerLayer)));
    const double part = log_scale / static_cast<double>(chunks);
    const std::vector<double> no_shift(d, 0.0);
    for (std::size_t c = 0; c + 1 < chunks; ++c) layers.emplace_back(single_coordinate_layer(d, i, part, no_shift, 0.0));
    layers.emplace_back(single_coordinate_layer(d, i, part, shift_weights, shift_bias));
  }
  return FlowModel(d, std::move(layers));
}

FlowModel make_gaussian_flow_from_covariance(std::span<const double> mean, const Tensor& covariance) {
  const std::size_t d = mean.size();
  if (covariance.rank() != 2 || covariance.rows() != d || covariance.cols() != d) {
    throw ShapeError("gaussian flow: covariance " + shape_string(covariance.shape()) + " does not match mean");
  }
  Eigen::MatrixXd cov(d, d);
  for (std::size_t r = 0; r < d; ++r) {
    for (std::size_t c = 0; c < d; ++c) cov(Eigen::Index(r), Eigen::Index(c)) = covariance.at(r, c);
  }
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success) throw DomainError("gaussian flow: covariance is not positive definite");
  Eigen::MatrixXd L = llt.matrixL();
  Tensor lower(Shape{d, d});
  for (std::size_t r = 0; r < d; ++r) {
    for (std::size_t c = 0; c < d; ++c) lower.at(r, c) = L(Eigen::Index(r), Eigen::Index(c));
  }
  return make_gaussian_flow(mean, lower);
}

}  // namespace cflow
