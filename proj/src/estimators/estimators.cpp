#include "cflow/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <ostream>
#include <string>

#include "cflow/error.hpp"

namespace cflow {

const char* provenance_name(Provenance p) {
  switch (p) {
    case Provenance::kSvi:
      return "svi";
    case Provenance::kLmc:
      return "lmc";
    case Provenance::kAmortized:
      return "amortized";
  }
  return "unknown";
}

Provenance parse_provenance(std::string_view name) {
  if (name == "svi") return Provenance::kSvi;
  if (name == "lmc") return Provenance::kLmc;
  if (name == "amortized") return Provenance::kAmortized;
  throw ConfigError("unknown sample provenance '" + std::string(name) + "'");
}

SampleSet::SampleSet(Tensor rows, Provenance from, std::uint64_t seed_value)
    : samples(rows.as_matrix()), provenance(from), seed(seed_value) {
  if (samples.rows() == 0 || samples.cols() == 0) throw ShapeError("sample set: need at least one non-empty sample");
}

Tensor mmse_estimate(const SampleSet& set) {
  const std::size_t n = set.size();
  const std::size_t d = set.dim();
  Tensor mean(Shape{d});
  for (std::size_t r = 0; r < n; ++r) {
    const auto row = set.samples.row(r);
    for (std::size_t c = 0; c < d; ++c) mean[c] += row[c];
  }
  for (double& v : mean.data()) v /= static_cast<double>(n);
  return mean;
}

namespace {

double quantile(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

}  // namespace

double silverman_bandwidth(std::span<const double> values) {
  const std::size_t n = values.size();
  if (n < 2) return kMinBandwidth;
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const double iqr = (quantile(sorted, 0.75) - quantile(sorted, 0.25)) / 1.34;
  double spread = 0.0;
  if (sd > 0.0 && iqr > 0.0) {
    spread = std::min(sd, iqr);
  } else {
    spread = std::max(sd, iqr);
  }
  return std::max(kMinBandwidth, 0.9 * spread * std::pow(static_cast<double>(n), -0.2));
}

double PixelMarginal::kde_mass() const {
  double acc = 0.0;
  for (std::size_t i = 1; i < grid.size(); ++i) acc += 0.5 * (density[i] + density[i - 1]) * (grid[i] - grid[i - 1]);
  return acc;
}

void PixelMarginal::write(std::ostream& out) const {
  const auto old = out.precision(17);
  out << "bin_left,bin_right,count\n";
  for (std::size_t b = 0; b < counts.size(); ++b) out << edges[b] << ',' << edges[b + 1] << ',' << counts[b] << '\n';
  out << "\ngrid,density\n";
  for (std::size_t i = 0; i < grid.size(); ++i) out << grid[i] << ',' << density[i] << '\n';
  out.precision(old);
}

PixelMarginal pixel_marginal(const SampleSet& set, std::size_t coordinate, std::size_t bins,
                             std::optional<double> bandwidth) {
  if (coordinate >= set.dim()) {
    throw ShapeError("pixel_marginal: coordinate " + std::to_string(coordinate) + " out of range for d = " +
                     std::to_string(set.dim()));
  }
  if (bins < 2) throw ShapeError("pixel_marginal: need at least 2 bins");
  if (bandwidth && !(*bandwidth > 0.0)) throw DomainError("pixel_marginal: bandwidth must be positive");
  const std::size_t n = set.size();
  std::vector<double> values(n);
  for (std::size_t r = 0; r < n; ++r) values[r] = set.samples.at(r, coordinate);
  std::sort(values.begin(), values.end());

  PixelMarginal out;
  out.coordinate = coordinate;
  for (double v : values) out.mean += v;
  out.mean /= static_cast<double>(n);
  for (double v : values) out.variance += (v - out.mean) * (v - out.mean);
  out.variance /= static_cast<double>(n);

  double lo = values.front();
  double hi = values.back();
  if (hi == lo) {
    lo -= 0.5;
    hi += 0.5;
  }
  out.edges.resize(bins + 1);
  for (std::size_t b = 0; b <= bins; ++b) out.edges[b] = lo + (hi - lo) * static_cast<double>(b) / static_cast<double>(bins);
  out.counts.assign(bins, 0);
  for (double v : values) {
    const auto b = static_cast<std::size_t>((v - lo) / (hi - lo) * static_cast<double>(bins));
    ++out.counts[std::min(b, bins - 1)];
  }

  const double h = bandwidth ? *bandwidth : silverman_bandwidth(values);
  out.bandwidth = h;
  const double reach = 6.0 * h;
  const double g_lo = values.front() - reach;
  const double g_hi = values.back() + reach;
  const double spacing_target = h / 5.0;
  const auto points = static_cast<std::size_t>(
      std::clamp(std::ceil((g_hi - g_lo) / spacing_target) + 1.0, 513.0, 200001.0));
  const double spacing = (g_hi - g_lo) / static_cast<double>(points - 1);
  out.grid.resize(points);
  for (std::size_t i = 0; i < points; ++i) out.grid[i] = g_lo + spacing * static_cast<double>(i);
  out.density.assign(points, 0.0);
  const double norm = 1.0 / (static_cast<double>(n) * h * std::sqrt(2.0 * std::numbers::pi));
  for (double v : values) {
    const auto first = static_cast<std::size_t>(std::max(0.0, std::floor((v - reach - g_lo) / spacing)));
    const auto last = std::min(points - 1, static_cast<std::size_t>(std::ceil((v + reach - g_lo) / spacing)));
    for (std::size_t i = first; i <= last; ++i) {
      const double u = (out.grid[i] - v) / h;
      out.density[i] += norm * std::exp(-0.5 * u * u);
    }
  }
  return out;
}

double mse(const Tensor& x, const Tensor& ref) {
  if (x.size() != ref.size() || x.size() == 0) {
    throw ShapeError("mse: shapes " + shape_string(x.shape()) + " and " + shape_string(ref.shape()) + " differ");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += (x[i] - ref[i]) * (x[i] - ref[i]);
  return acc / static_cast<double>(x.size());
}

double psnr(const Tensor& x, const Tensor& ref, double peak) {
  if (!(peak > 0.0)) throw DomainError("psnr: peak must be positive");
  const double e = mse(x, ref);
  if (e == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / e);
}

double diversity(const SampleSet& set) {
  const std::size_t n = set.size();
  if (n < 2) throw ShapeError("diversity: need at least two samples");
  const std::size_t d = set.dim();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto a = set.samples.row(i);
    for (std::size_t j = i + 1; j < n; ++j) {
      const auto b = set.samples.row(j);
      double sq = 0.0;
      for (std::size_t c = 0; c < d; ++c) sq += (a[c] - b[c]) * (a[c] - b[c]);
      acc += std::sqrt(sq);
    }
  }
  const double pairs = 0.5 * static_cast<double>(n) * static_cast<double>(n - 1);
  return acc / pairs / std::sqrt(static_cast<double>(d));
}

MmseDecomposition mmse_decomposition(const SampleSet& set, const Tensor& ref) {
  if (ref.size() != set.dim()) throw ShapeError("mmse_decomposition: reference has wrong length");
  const Tensor mean = mmse_estimate(set);
  MmseDecomposition out;
  out.mmse_mse = mse(mean, ref);
  const double n = static_cast<double>(set.size());
  const double d = static_cast<double>(set.dim());
  for (std::size_t r = 0; r < set.size(); ++r) {
    const auto row = set.samples.row(r);
    double se = 0.0;
    double var = 0.0;
    for (std::size_t c = 0; c < set.dim(); ++c) {
      se += (row[c] - ref[c]) * (row[c] - ref[c]);
      var += (row[c] - mean[c]) * (row[c] - mean[c]);
    }
    out.mean_sample_mse += se / d;
    out.mean_variance += var / d;
  }
  out.mean_sample_mse /= n;
  out.mean_variance /= n;
  return out;
}

}  // namespace cflow
