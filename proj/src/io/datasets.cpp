#include "cflow/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numbers>
#include <sstream>

#include "binary.hpp"
#include "cflow/checkpoint.hpp"
#include "cflow/error.hpp"
#include "cflow/rng.hpp"

namespace cflow {

namespace {

constexpr std::string_view kImageMagic = "FLWI";
constexpr std::uint32_t kImageVersion = 1;
constexpr std::size_t kBlobSide = 8;

void two_moons(Tensor& out, Rng& rng) {
  for (std::size_t r = 0; r < out.rows(); ++r) {
    const double t = std::numbers::pi * rng.uniform();
    if (rng.below(2) == 0) {
      out.at(r, 0) = std::cos(t);
      out.at(r, 1) = std::sin(t);
    } else {
      out.at(r, 0) = 1.0 - std::cos(t);
      out.at(r, 1) = 0.5 - std::sin(t);
    }
    out.at(r, 0) += 0.05 * rng.normal();
    out.at(r, 1) += 0.05 * rng.normal();
  }
}

void gaussian_mixture(Tensor& out, Rng& rng) {
  for (std::size_t r = 0; r < out.rows(); ++r) {
    const std::size_t k = rng.below(4);
    out.at(r, 0) = (k & 1 ? 2.0 : -2.0) + 0.5 * rng.normal();
    out.at(r, 1) = (k & 2 ? 2.0 : -2.0) + 0.5 * rng.normal();
  }
}

void checkerboard(Tensor& out, Rng& rng) {
  for (std::size_t r = 0; r < out.rows(); ++r) {
    const double x = -2.0 + 4.0 * rng.uniform();
    const double y0 = -2.0 + 4.0 * rng.uniform();
    // Shift y by one unit when the cell parity is odd; stays inside [-2, 2].
    const auto parity = static_cast<long>(std::floor(x) + std::floor(y0)) & 1;
    double y = y0;
    if (parity) y = y0 < 1.0 ? y0 + 1.0 : y0 - 3.0;
    out.at(r, 0) = x;
    out.at(r, 1) = y;
  }
}

void blobs(Tensor& out, std::size_t channels, Rng& rng) {
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    std::fill(row.begin(), row.end(), 0.0);
    const std::size_t bumps = 1 + rng.below(2);
    for (std::size_t b = 0; b < bumps; ++b) {
      const double cy = 1.5 + 4.0 * rng.uniform();
      const double cx = 1.5 + 4.0 * rng.uniform();
      const double width = 0.8 + 0.8 * rng.uniform();
      const double amplitude = 0.5 + 0.5 * rng.uniform();
      std::vector<double> colour(channels, 1.0);
      if (channels > 1) {
        for (double& c : colour) c = 0.3 + 0.7 * rng.uniform();
      }
      for (std::size_t i = 0; i < kBlobSide; ++i) {
        for (std::size_t j = 0; j < kBlobSide; ++j) {
          const double dy = static_cast<double>(i) - cy;
          const double dx = static_cast<double>(j) - cx;
          const double v = amplitude * std::exp(-(dx * dx + dy * dy) / (2.0 * width * width));
          for (std::size_t c = 0; c < channels; ++c) row[(i * kBlobSide + j) * channels + c] += v * colour[c];
        }
      }
    }
    for (double& v : row) v = std::min(1.0, v);
  }
}

void check_pixels(const Dataset& data) {
  for (double v : data.samples.data()) {
    if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("image dataset: pixel value " + std::to_string(v) + " outside [0, 1]");
  }
}

}  // namespace

const std::vector<std::string>& synth_dataset_kinds() {
  static const std::vector<std::string> kinds{"two-moons", "gaussian-mixture", "checkerboard", "blobs", "blobs-rgb"};
  return kinds;
}

Dataset synth_dataset(std::string_view kind, std::size_t n, std::uint64_t seed) {
  Rng rng = Rng::stream(seed, std::string("dataset-") + std::string(kind));
  Dataset out;
  out.kind = std::string(kind);
  if (kind == "two-moons" || kind == "gaussian-mixture" || kind == "checkerboard") {
    out.samples = Tensor(Shape{n, 2});
    if (kind == "two-moons") two_moons(out.samples, rng);
    if (kind == "gaussian-mixture") gaussian_mixture(out.samples, rng);
    if (kind == "checkerboard") checkerboard(out.samples, rng);
  } else if (kind == "blobs" || kind == "blobs-rgb") {
    const std::size_t channels = kind == "blobs" ? 1 : 3;
    out.image = ImageShape{kBlobSide, kBlobSide, channels};
    out.samples = Tensor(Shape{n, out.image->size()});
    blobs(out.samples, channels, rng);
  } else {
    throw ConfigError("unknown synthetic dataset '" + std::string(kind) + "'");
  }
  return out;
}

std::string encode_image_dataset(const Dataset& data) {
  if (!data.image) throw ConfigError("image dataset: data has no image shape");
  if (data.dim() != data.image->size()) throw ShapeError("image dataset: rows do not match the image shape");
  check_pixels(data);
  binary::Writer w(kImageMagic, kImageVersion);
  w.u64(data.size());
  w.u64(data.image->height);
  w.u64(data.image->width);
  w.u64(data.image->channels);
  for (double v : data.samples.data()) w.f64(v);
  return w.finish();
}

Dataset decode_image_dataset(std::string_view bytes) {
  binary::Reader r(bytes, kImageMagic, kImageVersion, "image dataset");
  const std::uint64_t n = r.u64();
  ImageShape shape{static_cast<std::size_t>(r.u64()), static_cast<std::size_t>(r.u64()),
                   static_cast<std::size_t>(r.u64())};
  if (shape.size() == 0) throw FormatError("image dataset: empty image shape");
  if (n > r.remaining() / 8 / shape.size()) throw FormatError("image dataset: sample count exceeds file size");
  Dataset out;
  out.kind = "image";
  out.image = shape;
  std::vector<double> pixels(n * shape.size());
  for (double& v : pixels) v = r.f64();
  r.finish();
  out.samples = Tensor(Shape{n, shape.size()}, std::move(pixels));
  check_pixels(out);
  return out;
}

void save_image_dataset(const Dataset& data, const std::string& path) {
  write_file_bytes(path, encode_image_dataset(data));
}

Dataset load_image_dataset(const std::string& path) { return decode_image_dataset(read_file_bytes(path)); }

Dataset import_csv_images(std::istream& in, ImageShape shape) {
  if (shape.size() == 0) throw ConfigError("csv import: empty image shape");
  std::vector<double> values;
  std::string line;
  std::size_t rows = 0;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream cells(line);
    std::string cell;
    std::size_t count = 0;
    while (std::getline(cells, cell, ',')) {
      try {
        std::size_t used = 0;
        const double v = std::stod(cell, &used);
        if (cell.find_first_not_of(" \t\r", used) != std::string::npos) throw std::invalid_argument(cell);
        values.push_back(v);
      } catch (const std::exception&) {
        throw ConfigError("csv import: bad value '" + cell + "' on line " + std::to_string(line_no));
      }
      ++count;
    }
    if (count != shape.size()) {
      throw ConfigError("csv import: line " + std::to_string(line_no) + " has " + std::to_string(count) +
                        " values, expected " + std::to_string(shape.size()));
    }
    ++rows;
  }
  if (std::any_of(values.begin(), values.end(), [](double v) { return v > 1.0; })) {
    for (double& v : values) v /= 255.0;
  }
  Dataset out;
  out.kind = "image";
  out.image = shape;
  out.samples = Tensor(Shape{rows, shape.size()}, std::move(values));
  check_pixels(out);
  return out;
}

std::pair<Dataset, Dataset> split_held_out(const Dataset& data, std::size_t n_held) {
  if (n_held > data.size()) throw ConfigError("held-out count exceeds the dataset size");
  const std::size_t d = data.dim();
  const std::size_t n_train = data.size() - n_held;
  auto slice = [&](std::size_t begin, std::size_t end) {
    Dataset part{data.kind, Tensor(Shape{end - begin, d}), data.image};
    std::copy(data.samples.data().begin() + static_cast<std::ptrdiff_t>(begin * d),
              data.samples.data().begin() + static_cast<std::ptrdiff_t>(end * d), part.samples.data().begin());
    return part;
  };
  return {slice(0, n_train), slice(n_train, data.size())};
}

}  // namespace cflow
