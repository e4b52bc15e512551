#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cflow/measurement.hpp"
#include "cflow/tensor.hpp"

namespace cflow {

struct Dataset {
  std::string kind;
  Tensor samples;  // [n, d]
  /// Set for image data; samples are then channel-last pixels in [0, 1].
  std::optional<ImageShape> image;

  std::size_t size() const { return samples.rank() == 2 ? samples.rows() : 0; }
  std::size_t dim() const { return samples.rank() == 2 ? samples.cols() : 0; }
};

/// Deterministic synthetic data.
///   two-moons         half circles of radius 1, centres (0, 0) and (1, 0.5), noise sd 0.05
///   gaussian-mixture  equal mixture of N((+-2, +-2), 0.25 I)
///   checkerboard      uniform on the squares of [-2, 2]^2 whose integer corners sum to an even number
///   blobs             8x8 grayscale images with one or two Gaussian bumps
///   blobs-rgb         8x8x3 version of blobs with a random colour per bump
/// Throws ConfigError for an unknown kind.
Dataset synth_dataset(std::string_view kind, std::size_t n, std::uint64_t seed);
const std::vector<std::string>& synth_dataset_kinds();

/// "FLWI" | u32 version | u64 total bytes | u64 n | u64 height | u64 width | u64 channels
/// | f64 pixels | u32 CRC-32. Pixels must lie in [0, 1].
std::string encode_image_dataset(const Dataset& data);
Dataset decode_image_dataset(std::string_view bytes);
void save_image_dataset(const Dataset& data, const std::string& path);
Dataset load_image_dataset(const std::string& path);

/// One image per line, comma-separated pixel values in channel-last order.
/// If any value exceeds 1 the file is read as 8-bit and every value is divided by 255.
Dataset import_csv_images(std::istream& in, ImageShape shape);

/// Last n_held rows become the second dataset.
std::pair<Dataset, Dataset> split_held_out(const Dataset& data, std::size_t n_held);

}  // namespace cflow
