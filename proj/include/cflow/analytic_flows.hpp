#pragma once

#include <span>

#include "cflow/flow.hpp"

namespace cflow {

/// Exact affine flow x = mean + L z for a lower-triangular L with positive
/// diagonal, built from single-coordinate affine couplings with linear
/// conditioners. Its density is N(mean, L L^T).
FlowModel make_gaussian_flow(std::span<const double> mean, const Tensor& lower);

/// Same, from a covariance matrix (Cholesky-factored internally).
FlowModel make_gaussian_flow_from_covariance(std::span<const double> mean, const Tensor& covariance);

}  // namespace cflow
