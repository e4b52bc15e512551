#include "cflow/measurement.hpp"

#include <cmath>
#include <fstream>
#include <string>

#include "cflow/error.hpp"

namespace cflow {

const char* measurement_kind_name(MeasurementKind kind) {
  switch (kind) {
    case MeasurementKind::kMask:
      return "mask";
    case MeasurementKind::kGaussian:
      return "gaussian";
    case MeasurementKind::kDownsample2x:
      return "downsample2x";
    case MeasurementKind::kGrayscale:
      return "grayscale";
  }
  return "unknown";
}

namespace {

// Row-major dense matrix of a linear map given by its column images.
template <typename Apply>
Tensor densify(std::size_t m, std::size_t d, Apply apply_unit) {
  Tensor a(Shape{m, d});
  for (std::size_t j = 0; j < d; ++j) apply_unit(j, a);
  return a;
}

Tensor transpose(const Tensor& a) {
  Tensor t(Shape{a.cols(), a.rows()});
  for (std::size_t r = 0; r < a.rows(); ++r) {
    for (std::size_t c = 0; c < a.cols(); ++c) t.at(c, r) = a.at(r, c);
  }
  return t;
}

}  // namespace

MeasurementOp MeasurementOp::mask(std::size_t d, std::vector<std::size_t> indices) {
  std::vector<bool> seen(d, false);
  for (std::size_t i : indices) {
    if (i >= d) throw ShapeError("mask: index " + std::to_string(i) + " out of range for d = " + std::to_string(d));
    if (seen[i]) throw ShapeError("mask: index " + std::to_string(i) + " repeated");
    seen[i] = true;
  }
  MeasurementOp op;
  op.kind_ = MeasurementKind::kMask;
  op.input_dim_ = d;
  op.output_dim_ = indices.size();
  op.indices_ = std::move(indices);
  return op;
}

MeasurementOp MeasurementOp::gaussian(std::uint64_t seed, std::size_t m, std::size_t d) {
  if (m == 0 || d == 0) throw ShapeError("gaussian op: need m >= 1 and d >= 1");
  MeasurementOp op;
  op.kind_ = MeasurementKind::kGaussian;
  op.input_dim_ = d;
  op.output_dim_ = m;
  op.seed_ = seed;
  Rng rng = Rng::stream(seed, "gaussian-op");
  const double scale = 1.0 / std::sqrt(static_cast<double>(m));
  Tensor a(Shape{m, d});
  for (double& v : a.data()) v = scale * rng.normal();
  op.dense_t_ = std::make_shared<const Tensor>(transpose(a));
  op.dense_ = std::make_shared<const Tensor>(std::move(a));
  return op;
}

MeasurementOp MeasurementOp::downsample2x(ImageShape image) {
  if (image.height == 0 || image.width == 0 || image.channels == 0 || image.height % 2 != 0 ||
      image.width % 2 != 0) {
    throw ShapeError("downsample2x: image must have even, non-zero height and width");
  }
  MeasurementOp op;
  op.kind_ = MeasurementKind::kDownsample2x;
  op.image_ = image;
  op.input_dim_ = image.size();
  op.output_dim_ = image.size() / 4;
  op.build_dense();
  return op;
}

MeasurementOp MeasurementOp::grayscale(ImageShape image) {
  if (image.size() == 0) throw ShapeError("grayscale: empty image");
  MeasurementOp op;
  op.kind_ = MeasurementKind::kGrayscale;
  op.image_ = image;
  op.input_dim_ = image.size();
  op.output_dim_ = image.height * image.width;
  op.build_dense();
  return op;
}

void MeasurementOp::check_input(const Tensor& t, std::size_t width, const char* what) const {
  if (t.rank() < 1 || t.rank() > 2 || t.cols() != width) {
    throw ShapeError(std::string(what) + " (" + measurement_kind_name(kind_) + "): input " + shape_string(t.shape()) +
                     " expected width " + std::to_string(width));
  }
}

Tensor MeasurementOp::apply(const Tensor& x) const {
  check_input(x, input_dim_, "apply");
  const Tensor in = x.as_matrix();
  const std::size_t n = in.rows();
  Tensor out(Shape{n, output_dim_});
  for (std::size_t r = 0; r < n; ++r) {
    auto src = in.row(r);
    auto dst = out.row(r);
    switch (kind_) {
      case MeasurementKind::kMask:
        for (std::size_t k = 0; k < indices_.size(); ++k) dst[k] = src[indices_[k]];
        break;
      case MeasurementKind::kGaussian: {
        const Tensor& a = *dense_;
        for (std::size_t i = 0; i < output_dim_; ++i) {
          double acc = 0.0;
          for (std::size_t j = 0; j < input_dim_; ++j) acc += a.at(i, j) * src[j];
          dst[i] = acc;
        }
        break;
      }
      case MeasurementKind::kDownsample2x: {
        const auto [h, w, c] = image_;
        const std::size_t w2 = w / 2;
        for (std::size_t i = 0; i < h / 2; ++i) {
          for (std::size_t j = 0; j < w2; ++j) {
            for (std::size_t ch = 0; ch < c; ++ch) {
              double acc = 0.0;
              for (std::size_t di = 0; di < 2; ++di) {
                for (std::size_t dj = 0; dj < 2; ++dj) acc += src[((2 * i + di) * w + 2 * j + dj) * c + ch];
              }
              dst[(i * w2 + j) * c + ch] = 0.25 * acc;
            }
          }
        }
        break;
      }
      case MeasurementKind::kGrayscale: {
        const std::size_t c = image_.channels;
        for (std::size_t p = 0; p < output_dim_; ++p) {
          double acc = 0.0;
          for (std::size_t ch = 0; ch < c; ++ch) acc += src[p * c + ch];
          dst[p] = acc / static_cast<double>(c);
        }
        break;
      }
    }
  }
  if (x.rank() == 1) return out.reshaped(Shape{output_dim_});
  return out;
}

Tensor MeasurementOp::vjp(const Tensor& u) const {
  check_input(u, output_dim_, "vjp");
  const Tensor in = u.as_matrix();
  const std::size_t n = in.rows();
  Tensor out(Shape{n, input_dim_});
  for (std::size_t r = 0; r < n; ++r) {
    auto src = in.row(r);
    auto dst = out.row(r);
    switch (kind_) {
      case MeasurementKind::kMask:
        for (std::size_t k = 0; k < indices_.size(); ++k) dst[indices_[k]] = src[k];
        break;
      case MeasurementKind::kGaussian: {
        const Tensor& a = *dense_;
        for (std::size_t i = 0; i < output_dim_; ++i) {
          for (std::size_t j = 0; j < input_dim_; ++j) dst[j] += a.at(i, j) * src[i];
        }
        break;
      }
      case MeasurementKind::kDownsample2x: {
        const auto [h, w, c] = image_;
        for (std::size_t i = 0; i < h; ++i) {
          for (std::size_t j = 0; j < w; ++j) {
            for (std::size_t ch = 0; ch < c; ++ch) dst[(i * w + j) * c + ch] = 0.25 * src[((i / 2) * (w / 2) + j / 2) * c + ch];
          }
        }
        break;
      }
      case MeasurementKind::kGrayscale: {
        const std::size_t c = image_.channels;
        for (std::size_t p = 0; p < output_dim_; ++p) {
          for (std::size_t ch = 0; ch < c; ++ch) dst[p * c + ch] = src[p] / static_cast<double>(c);
        }
        break;
      }
    }
  }
  if (u.rank() == 1) return out.reshaped(Shape{input_dim_});
  return out;
}

Tensor MeasurementOp::matrix() const {
  if (dense_) return *dense_;
  return densify(output_dim_, input_dim_, [&](std::size_t j, Tensor& dst) {
    Tensor unit(Shape{input_dim_});
    unit[j] = 1.0;
    const Tensor col = apply(unit);
    for (std::size_t i = 0; i < output_dim_; ++i) dst.at(i, j) = col[i];
  });
}

void MeasurementOp::build_dense() {
  Tensor a = matrix();
  dense_t_ = std::make_shared<const Tensor>(transpose(a));
  dense_ = std::make_shared<const Tensor>(std::move(a));
}

Var MeasurementOp::apply(Var x) const {
  const Tensor& v = x.value();
  if (v.rank() != 2 || v.cols() != input_dim_) {
    throw ShapeError(std::string("apply (") + measurement_kind_name(kind_) + "): input " + shape_string(v.shape()) +
                     " expected [n, " + std::to_string(input_dim_) + "]");
  }
  if (kind_ == MeasurementKind::kMask) return gather_cols(x, indices_);
  return matmul(x, x.graph()->constant(*dense_t_));
}

Tensor vjp(const MeasurementOp& op, const Tensor& x, const Tensor& u) {
  if (x.as_matrix().cols() != op.input_dim()) {
    throw ShapeError("vjp: x " + shape_string(x.shape()) + " does not match input dimension " +
                     std::to_string(op.input_dim()));
  }
  return op.vjp(u);
}

Observation observe(const MeasurementOp& op, const Tensor& x, double noise_sigma, Rng* rng) {
  if (x.rank() != 1) throw ShapeError("observe: ground truth must be a vector, got " + shape_string(x.shape()));
  Tensor y = op.apply(x);
  if (noise_sigma > 0.0) {
    if (rng == nullptr) throw ConfigError("observe: noise requested without an rng");
    for (double& v : y.data()) v += noise_sigma * rng->normal();
  }
  return Observation{std::move(y), op, x, noise_sigma};
}

std::vector<std::size_t> read_mask_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("mask file: cannot open " + path.string());
  std::vector<std::size_t> indices;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      std::size_t used = 0;
      const long long v = std::stoll(line, &used);
      if (v < 0 || line.find_first_not_of(" \t\r", used) != std::string::npos) throw std::invalid_argument(line);
      indices.push_back(static_cast<std::size_t>(v));
    } catch (const std::logic_error&) {
      throw ConfigError("mask file " + path.string() + ":" + std::to_string(line_no) + ": not an index: " + line);
    }
  }
  return indices;
}

void write_mask_file(const std::filesystem::path& path, const std::vector<std::size_t>& indices) {
  std::ofstream out(path);
  if (!out) throw ConfigError("mask file: cannot write " + path.string());
  for (std::size_t i : indices) out << i << '\n';
}

}  // namespace cflow
