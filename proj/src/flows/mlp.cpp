#include "cflow/mlp.hpp"

#include <cmath>

#include "cflow/error.hpp"

namespace cflow {

Var ParamCursor::next() {
  if (pos_ >= vars_.size()) throw Error("parameter cursor exhausted");
  return vars_[pos_++];
}

Mlp Mlp::create(std::vector<std::size_t> widths, Rng& rng) {
  if (widths.size() < 2) throw ShapeError("mlp: need at least input and output widths");
  Mlp mlp;
  mlp.widths = std::move(widths);
  const std::size_t layers = mlp.widths.size() - 1;
  for (std::size_t i = 0; i < layers; ++i) {
    const std::size_t fan_in = mlp.widths[i];
    const std::size_t fan_out = mlp.widths[i + 1];
    Tensor w(Shape{fan_in, fan_out});
    if (i + 1 < layers && fan_in > 0) {
      const double sd = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (double& v : w.data()) v = sd * rng.normal();
    }
    mlp.weights.push_back(std::move(w));
    mlp.biases.emplace_back(Shape{1, fan_out});
  }
  return mlp;
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) n += weights[i].size() + biases[i].size();
  return n;
}

void Mlp::collect(std::vector<Tensor*>& out) {
  for (std::size_t i = 0; i < weights.size(); ++i) {
    out.push_back(&weights[i]);
    out.push_back(&biases[i]);
  }
}

void Mlp::collect(std::vector<const Tensor*>& out) const {
  for (std::size_t i = 0; i < weights.size(); ++i) {
    out.push_back(&weights[i]);
    out.push_back(&biases[i]);
  }
}

Var Mlp::forward(Var input, ParamCursor& params) const {
  if (input.value().cols() != input_width()) {
    throw ShapeError("mlp: input " + shape_string(input.shape()) + " but expected width " +
                     std::to_string(input_width()));
  }
  const std::size_t n = input.value().rows();
  Var h = input;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    Var w = params.next();
    Var b = params.next();
    h = matmul(h, w) + repeat_rows(b, n);
    if (i + 1 < weights.size()) h = tanh(h);
  }
  return h;
}

}  // namespace cflow
