#pragma once

#include <span>
#include <vector>

#include "cflow/graph.hpp"
#include "cflow/rng.hpp"

namespace cflow {

/// Hands out bound parameter nodes in the canonical parameter order.
class ParamCursor {
 public:
  explicit ParamCursor(std::span<const Var> vars) : vars_(vars) {}
  Var next();
  bool exhausted() const { return pos_ == vars_.size(); }

 private:
  std::span<const Var> vars_;
  std::size_t pos_ = 0;
};

/// Fully connected network with tanh hidden activations and a linear output.
struct Mlp {
  std::vector<std::size_t> widths;  // input, hidden..., output
  std::vector<Tensor> weights;      // [widths[i], widths[i+1]]
  std::vector<Tensor> biases;       // [1, widths[i+1]]

  /// Hidden weights ~ N(0, 1/fan_in), biases 0; the output layer is all zeros
  /// so a fresh conditioner emits exactly 0.
  static Mlp create(std::vector<std::size_t> widths, Rng& rng);

  std::size_t input_width() const { return widths.front(); }
  std::size_t output_width() const { return widths.back(); }
  std::size_t parameter_count() const;

  void collect(std::vector<Tensor*>& out);
  void collect(std::vector<const Tensor*>& out) const;

  Var forward(Var input, ParamCursor& params) const;

  bool operator==(const Mlp&) const = default;
};

}  // namespace cflow
