#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cflow/graph.hpp"
#include "cflow/rng.hpp"
#include "cflow/tensor.hpp"

namespace cflow {

enum class MeasurementKind : std::uint8_t { kMask, kGaussian, kDownsample2x, kGrayscale };

const char* measurement_kind_name(MeasurementKind kind);

/// Channel-last, row-major image layout of a flattened vector.
struct ImageShape {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 1;

  std::size_t size() const { return height * width * channels; }
  bool operator==(const ImageShape&) const = default;
};

/// Linear forward operator A: R^d -> R^m. Immutable once built.
class MeasurementOp {
 public:
  /// Keeps x[indices[k]] as output k. Indices must be distinct and < d.
  static MeasurementOp mask(std::size_t d, std::vector<std::size_t> indices);
  /// m x d matrix with N(0, 1/m) entries, reproducible from (seed, m, d).
  static MeasurementOp gaussian(std::uint64_t seed, std::size_t m, std::size_t d);
  /// Averages non-overlapping 2x2 blocks per channel; height and width must be even.
  static MeasurementOp downsample2x(ImageShape image);
  /// Averages the channels of each pixel.
  static MeasurementOp grayscale(ImageShape image);

  MeasurementKind kind() const { return kind_; }
  std::size_t input_dim() const { return input_dim_; }
  std::size_t output_dim() const { return output_dim_; }
  const std::vector<std::size_t>& indices() const { return indices_; }
  std::uint64_t seed() const { return seed_; }
  const ImageShape& image() const { return image_; }
  /// Dense [m, d] matrix.
  Tensor matrix() const;

  /// x is [d] or [n, d]; result has the same rank.
  Tensor apply(const Tensor& x) const;
  /// A^T u for u of shape [m] or [n, m].
  Tensor vjp(const Tensor& u) const;
  /// Batched apply inside a graph: [n, d] -> [n, m].
  Var apply(Var x) const;

 private:
  MeasurementOp() = default;
  void build_dense();
  void check_input(const Tensor& t, std::size_t width, const char* what) const;

  MeasurementKind kind_ = MeasurementKind::kMask;
  std::size_t input_dim_ = 0;
  std::size_t output_dim_ = 0;
  std::vector<std::size_t> indices_;
  std::uint64_t seed_ = 0;
  ImageShape image_;
  // Non-mask kinds keep their dense matrix for graph-side matmuls.
  std::shared_ptr<const Tensor> dense_;    // [m, d]
  std::shared_ptr<const Tensor> dense_t_;  // [d, m]
};

/// Spec-style free functions.
inline Tensor apply(const MeasurementOp& op, const Tensor& x) { return op.apply(x); }
/// The operators are linear, so the vjp does not depend on x beyond its length.
Tensor vjp(const MeasurementOp& op, const Tensor& x, const Tensor& u);
inline MeasurementOp make_gaussian_op(std::uint64_t seed, std::size_t m, std::size_t d) {
  return MeasurementOp::gaussian(seed, m, d);
}

struct Observation {
  Tensor y_star;                      // [m]
  MeasurementOp op;
  std::optional<Tensor> ground_truth;  // [d], evaluation only
  double noise_sigma = 0.0;            // explicit noise added when synthesised
};

/// y* = A(x) + N(0, noise_sigma^2) noise (no noise when noise_sigma is 0).
Observation observe(const MeasurementOp& op, const Tensor& x, double noise_sigma = 0.0, Rng* rng = nullptr);

/// Newline-separated integer indices.
std::vector<std::size_t> read_mask_file(const std::filesystem::path& path);
void write_mask_file(const std::filesystem::path& path, const std::vector<std::size_t>& indices);

}  // namespace cflow
