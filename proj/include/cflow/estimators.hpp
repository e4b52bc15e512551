#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "cflow/tensor.hpp"

namespace cflow {

enum class Provenance : std::uint8_t { kSvi = 0, kLmc = 1, kAmortized = 2 };

const char* provenance_name(Provenance p);
Provenance parse_provenance(std::string_view name);

struct SampleSet {
  Tensor samples;  // [n, d], n >= 1
  Provenance provenance = Provenance::kSvi;
  std::uint64_t seed = 0;

  SampleSet(Tensor rows, Provenance from, std::uint64_t seed_value);
  std::size_t size() const { return samples.rows(); }
  std::size_t dim() const { return samples.cols(); }
};

/// Coordinatewise sample mean.
Tensor mmse_estimate(const SampleSet& set);

/// Gaussian-kernel bandwidth used when none is given: Silverman's rule
/// 0.9 min(sd, IQR / 1.34) n^(-1/5), floored at kMinBandwidth.
inline constexpr double kMinBandwidth = 1e-4;
double silverman_bandwidth(std::span<const double> values);

struct PixelMarginal {
  std::size_t coordinate = 0;
  std::vector<double> edges;  // bins + 1
  std::vector<std::size_t> counts;
  std::vector<double> grid;
  std::vector<double> density;
  double bandwidth = 0.0;
  double mean = 0.0;
  double variance = 0.0;

  /// Trapezoid integral of the KDE over its grid.
  double kde_mass() const;
  /// bin_left,bin_right,count rows, a blank line, then grid,density rows.
  void write(std::ostream& out) const;
};

PixelMarginal pixel_marginal(const SampleSet& set, std::size_t coordinate, std::size_t bins,
                             std::optional<double> bandwidth = std::nullopt);

double mse(const Tensor& x, const Tensor& ref);
/// 10 log10(peak^2 / mse); +infinity when mse is 0.
double psnr(const Tensor& x, const Tensor& ref, double peak = 1.0);

/// Mean over unordered pairs of ||x_i - x_j|| / sqrt(d).
double diversity(const SampleSet& set);

/// mean_i mse(x_i, ref) = mse(mean, ref) + mean coordinatewise variance.
struct MmseDecomposition {
  double mean_sample_mse = 0.0;
  double mmse_mse = 0.0;
  double mean_variance = 0.0;

  double residual() const { return mean_sample_mse - (mmse_mse + mean_variance); }
};
MmseDecomposition mmse_decomposition(const SampleSet& set, const Tensor& ref);

}  // namespace cflow
