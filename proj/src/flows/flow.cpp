#include "cflow/flow.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "cflow/error.hpp"

namespace cflow {
namespace {

constexpr std::size_t kChunkRows = 4096;

std::vector<std::size_t> invert(const std::vector<std::size_t>& order) {
  std::vector<std::size_t> inv(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) inv[order[i]] = i;
  return inv;
}

std::vector<std::size_t> merged_inverse(const CouplingLayer& layer) {
  std::vector<std::size_t> order = layer.conditioning;
  order.insert(order.end(), layer.transformed.begin(), layer.transformed.end());
  return invert(order);
}

Var conditioner_input(Var x1, const std::optional<Var>& context) { return context ? concat(x1, *context) : x1; }

struct AffineParts {
  Var shift;
  Var log_scale;
};

AffineParts affine_parts(Var out, std::size_t k) {
  auto [shift, raw] = split(out, k);
  return {shift, tanh(raw) * std::log(kAffineScaleMax)};
}

void check_input(const FlowModel& model, Var v, const std::optional<Var>& context, const char* what) {
  if (v.value().rank() != 2 || v.value().cols() != model.dim()) {
    throw ShapeError(std::string(what) + ": expected [n, " + std::to_string(model.dim()) + "], got " +
                     shape_string(v.shape()));
  }
  if (model.context_width() > 0) {
    if (!context) throw ShapeError(std::string(what) + ": conditional model needs a context");
    if (context->value().rows() != v.value().rows() || context->value().cols() != model.context_width()) {
      throw ShapeError(std::string(what) + ": context " + shape_string(context->shape()) + " does not match");
    }
  } else if (context) {
    throw ShapeError(std::string(what) + ": unconditional model given a context");
  }
}

Tensor rows_of(const Tensor& t, std::size_t begin, std::size_t end) {
  const std::size_t c = t.cols();
  std::vector<double> data(t.data().begin() + static_cast<std::ptrdiff_t>(begin * c),
                           t.data().begin() + static_cast<std::ptrdiff_t>(end * c));
  return Tensor(Shape{end - begin, c}, std::move(data));
}

Tensor context_rows(const Tensor& context, std::size_t n_total, std::size_t begin, std::size_t end) {
  const Tensor m = context.as_matrix();
  if (m.rows() == n_total) return rows_of(m, begin, end);
  if (m.rows() != 1) throw ShapeError("context: " + shape_string(context.shape()) + " is neither shared nor per-row");
  Tensor out(Shape{end - begin, m.cols()});
  for (std::size_t r = 0; r < end - begin; ++r) std::copy(m.data().begin(), m.data().end(), out.row(r).begin());
  return out;
}

template <typename Pass>
FlowResult run_chunked(const FlowModel& model, const Tensor& input, const Tensor* context, Pass pass) {
  const Tensor x = input.as_matrix();
  if (x.cols() != model.dim()) {
    throw ShapeError("flow: input " + shape_string(input.shape()) + " has wrong dimension, expected " +
                     std::to_string(model.dim()));
  }
  const std::size_t n = x.rows();
  FlowResult result{Tensor(Shape{n, model.dim()}), std::vector<double>(n, 0.0)};
  for (std::size_t begin = 0; begin < n; begin += kChunkRows) {
    const std::size_t end = std::min(n, begin + kChunkRows);
    Graph graph;
    const auto params = bind_parameters(graph, model, false);
    Var in = graph.constant(rows_of(x, begin, end));
    std::optional<Var> ctx;
    if (context != nullptr) ctx = graph.constant(context_rows(*context, n, begin, end));
    FlowVars vars = pass(graph, params, in, ctx);
    const Tensor& out = vars.out.value();
    std::copy(out.data().begin(), out.data().end(), result.out.row(begin).begin());
    for (std::size_t r = begin; r < end; ++r) result.log_det[r] = vars.log_det.value()[r - begin];
  }
  if (input.rank() == 1) result.out = result.out.reshaped(Shape{model.dim()});
  return result;
}

}  // namespace

FlowModel::FlowModel(std::size_t dim, std::vector<FlowLayer> layers, std::size_t context_width)
    : dim_(dim), context_width_(context_width), layers_(std::move(layers)) {
  validate();
}

void FlowModel::validate() const {
  if (dim_ == 0) throw ShapeError("flow: dimension must be positive");
  for (std::size_t li = 0; li < layers_.size(); ++li) {
    const std::string where = "flow layer " + std::to_string(li);
    if (const auto* perm = std::get_if<Permutation>(&layers_[li])) {
      std::vector<std::size_t> sorted = perm->order;
      std::sort(sorted.begin(), sorted.end());
      for (std::size_t i = 0; i < sorted.size(); ++i) {
        if (sorted.size() != dim_ || sorted[i] != i) throw ShapeError(where + ": not a permutation of 0.." + std::to_string(dim_ - 1));
      }
      continue;
    }
    const auto& c = std::get<CouplingLayer>(layers_[li]);
    std::vector<std::size_t> all = c.conditioning;
    all.insert(all.end(), c.transformed.begin(), c.transformed.end());
    std::sort(all.begin(), all.end());
    if (all.size() != dim_) throw ShapeError(where + ": partition does not cover the dimension");
    for (std::size_t i = 0; i < all.size(); ++i) {
      if (all[i] != i) throw ShapeError(where + ": partition blocks overlap or leave gaps");
    }
    if (c.context_width != context_width_) throw ShapeError(where + ": context width disagrees with the model");
    const std::size_t in = c.conditioning.size() + c.context_width;
    const std::size_t out = c.kind == CouplingKind::kAdditive ? c.transformed.size() : 2 * c.transformed.size();
    if (c.conditioner.input_width() != in || c.conditioner.output_width() != out) {
      throw ShapeError(where + ": conditioner widths do not match the partition");
    }
    for (std::size_t i = 0; i + 1 < c.conditioner.widths.size(); ++i) {
      const Shape expected{c.conditioner.widths[i], c.conditioner.widths[i + 1]};
      if (c.conditioner.weights.at(i).shape() != expected || c.conditioner.biases.at(i).shape() != Shape{1, expected[1]}) {
        throw ShapeError(where + ": conditioner tensor shapes do not match its widths");
      }
    }
  }
}

FlowModel FlowModel::create(const FlowSpec& spec, Rng& rng) {
  const std::size_t d = spec.dim;
  if (d == 0) throw ShapeError("flow: dimension must be positive");
  std::vector<FlowLayer> layers;
  std::vector<std::size_t> position_to_original(d);
  std::iota(position_to_original.begin(), position_to_original.end(), std::size_t{0});
  std::vector<std::size_t> reversal(d);
  for (std::size_t i = 0; i < d; ++i) reversal[i] = d - 1 - i;

  for (std::size_t k = 0; k < spec.num_couplings; ++k) {
    if (k > 0) {
      layers.emplace_back(Permutation{reversal});
      std::reverse(position_to_original.begin(), position_to_original.end());
    }
    // Reversal already alternates parity for even d; odd d alternates the split instead.
    const std::size_t parity = (d % 2 == 0 || d == 1) ? 0 : k % 2;
    CouplingLayer layer;
    layer.kind = spec.kind;
    layer.context_width = spec.context_width;
    for (std::size_t i = 0; i < d; ++i) {
      (i % 2 == parity ? layer.transformed : layer.conditioning).push_back(i);
    }
    std::vector<std::size_t> widths{layer.conditioning.size() + spec.context_width};
    widths.insert(widths.end(), spec.hidden.begin(), spec.hidden.end());
    widths.push_back(spec.kind == CouplingKind::kAdditive ? layer.transformed.size() : 2 * layer.transformed.size());
    Rng layer_rng = rng.split("coupling", k);
    layer.conditioner = Mlp::create(std::move(widths), layer_rng);
    layers.emplace_back(std::move(layer));
  }
  if (spec.restore_order) {
    bool identity = true;
    for (std::size_t i = 0; i < d; ++i) identity = identity && position_to_original[i] == i;
    // y[i] = x[order[i]] must put original i back at position i.
    if (!identity) layers.emplace_back(Permutation{invert(position_to_original)});
  }
  return FlowModel(d, std::move(layers), spec.context_width);
}

void FlowModel::append(FlowLayer layer) {
  layers_.push_back(std::move(layer));
  validate();
}

std::vector<Tensor*> FlowModel::parameters() {
  std::vector<Tensor*> out;
  for (auto& layer : layers_) {
    if (auto* c = std::get_if<CouplingLayer>(&layer)) c->conditioner.collect(out);
  }
  return out;
}

std::vector<const Tensor*> FlowModel::parameters() const {
  std::vector<const Tensor*> out;
  for (const auto& layer : layers_) {
    if (const auto* c = std::get_if<CouplingLayer>(&layer)) c->conditioner.collect(out);
  }
  return out;
}

std::size_t FlowModel::parameter_count() const {
  std::size_t n = 0;
  for (const Tensor* t : parameters()) n += t->size();
  return n;
}

std::vector<double> FlowModel::flat_parameters() const {
  std::vector<double> flat;
  flat.reserve(parameter_count());
  for (const Tensor* t : parameters()) flat.insert(flat.end(), t->data().begin(), t->data().end());
  return flat;
}

void FlowModel::set_flat_parameters(std::span<const double> values) {
  if (values.size() != parameter_count()) {
    throw ShapeError("flow: expected " + std::to_string(parameter_count()) + " parameters, got " +
                     std::to_string(values.size()));
  }
  std::size_t offset = 0;
  for (Tensor* t : parameters()) {
    std::copy(values.begin() + static_cast<std::ptrdiff_t>(offset),
              values.begin() + static_cast<std::ptrdiff_t>(offset + t->size()), t->data().begin());
    offset += t->size();
  }
}

std::vector<Var> bind_parameters(Graph& graph, const FlowModel& model, bool trainable) {
  std::vector<Var> vars;
  for (const Tensor* t : model.parameters()) vars.push_back(trainable ? graph.parameter(*t) : graph.constant(*t));
  return vars;
}

FlowVars flow_forward(Graph& graph, const FlowModel& model, std::span<const Var> params, Var z,
                      std::optional<Var> context) {
  check_input(model, z, context, "flow_forward");
  ParamCursor cursor(params);
  Var x = z;
  Var log_det = graph.constant(Tensor(Shape{z.value().rows(), 1}));
  for (const auto& layer : model.layers()) {
    if (const auto* perm = std::get_if<Permutation>(&layer)) {
      x = gather_cols(x, perm->order);
      continue;
    }
    const auto& c = std::get<CouplingLayer>(layer);
    Var x1 = gather_cols(x, c.conditioning);
    Var x2 = gather_cols(x, c.transformed);
    Var out = c.conditioner.forward(conditioner_input(x1, context), cursor);
    Var y2;
    if (c.kind == CouplingKind::kAdditive) {
      y2 = x2 + out;
    } else {
      auto parts = affine_parts(out, c.transformed.size());
      y2 = x2 * exp(parts.log_scale) + parts.shift;
      log_det = log_det + sum_cols(parts.log_scale);
    }
    x = gather_cols(concat(x1, y2), merged_inverse(c));
  }
  if (!cursor.exhausted()) throw Error("flow_forward: unused parameters");
  return {x, log_det};
}

FlowVars flow_inverse(Graph& graph, const FlowModel& model, std::span<const Var> params, Var x,
                      std::optional<Var> context) {
  check_input(model, x, context, "flow_inverse");
  // Parameters are laid out in forward order; walk layers backwards with
  // per-layer offsets.
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& layer : model.layers()) {
    offsets.push_back(offset);
    if (const auto* c = std::get_if<CouplingLayer>(&layer)) offset += 2 * c->conditioner.weights.size();
  }
  if (offset != params.size()) throw Error("flow_inverse: parameter count mismatch");

  Var y = x;
  Var log_det = graph.constant(Tensor(Shape{x.value().rows(), 1}));
  for (std::size_t li = model.layers().size(); li-- > 0;) {
    const auto& layer = model.layers()[li];
    if (const auto* perm = std::get_if<Permutation>(&layer)) {
      y = gather_cols(y, invert(perm->order));
      continue;
    }
    const auto& c = std::get<CouplingLayer>(layer);
    ParamCursor cursor(params.subspan(offsets[li], 2 * c.conditioner.weights.size()));
    Var y1 = gather_cols(y, c.conditioning);
    Var y2 = gather_cols(y, c.transformed);
    Var out = c.conditioner.forward(conditioner_input(y1, context), cursor);
    Var x2;
    if (c.kind == CouplingKind::kAdditive) {
      x2 = y2 - out;
    } else {
      auto parts = affine_parts(out, c.transformed.size());
      Var inv_scale = exp(parts.log_scale * -1.0);
      for (double s : inv_scale.value().data()) {
        if (!(1.0 / s >= 1e-12)) throw SingularityError("flow_inverse: affine scale underflow");
      }
      x2 = (y2 - parts.shift) * inv_scale;
      log_det = log_det - sum_cols(parts.log_scale);
    }
    y = gather_cols(concat(y1, x2), merged_inverse(c));
  }
  return {y, log_det};
}

Var standard_normal_log_density(Var z) {
  const double d = static_cast<double>(z.value().cols());
  const std::size_t n = z.value().rows();
  Var quad = sum_cols(square(z)) * -0.5;
  Var norm = z.graph()->constant(Tensor::filled(Shape{n, 1}, -0.5 * d * std::log(2.0 * std::numbers::pi)));
  return quad + norm;
}

Var flow_log_prob(Graph& graph, const FlowModel& model, std::span<const Var> params, Var x,
                  std::optional<Var> context) {
  FlowVars inv = flow_inverse(graph, model, params, x, context);
  return standard_normal_log_density(inv.out) + inv.log_det;
}

double standard_normal_log_density(std::span<const double> z) {
  double quad = 0.0;
  for (double v : z) quad += v * v;
  return -0.5 * quad + -0.5 * static_cast<double>(z.size()) * std::log(2.0 * std::numbers::pi);
}

FlowResult flow_forward(const FlowModel& model, const Tensor& z, const Tensor* context) {
  return run_chunked(model, z, context, [&](Graph& g, std::span<const Var> params, Var in, std::optional<Var> ctx) {
    return flow_forward(g, model, params, in, ctx);
  });
}

FlowResult flow_inverse(const FlowModel& model, const Tensor& x, const Tensor* context) {
  return run_chunked(model, x, context, [&](Graph& g, std::span<const Var> params, Var in, std::optional<Var> ctx) {
    return flow_inverse(g, model, params, in, ctx);
  });
}

std::vector<double> log_prob(const FlowModel& model, const Tensor& x, const Tensor* context) {
  FlowResult inv = flow_inverse(model, x, context);
  const Tensor z = inv.out.as_matrix();
  std::vector<double> out(z.rows());
  for (std::size_t r = 0; r < z.rows(); ++r) out[r] = standard_normal_log_density(z.row(r)) + inv.log_det[r];
  return out;
}

Tensor sample(const FlowModel& model, std::size_t n, Rng& rng, const Tensor* context) {
  Tensor z = rng.normal_tensor(Shape{n, model.dim()});
  return flow_forward(model, z, context).out;
}

}  // namespace cflow
