#include "cflow/graph.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include <Eigen/Core>

#include "cflow/error.hpp"

namespace cflow {
namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;
using MutMap = Eigen::Map<RowMajor>;

ConstMap view(const Tensor& t) { return ConstMap(t.data().data(), Eigen::Index(t.rows()), Eigen::Index(t.cols())); }
MutMap view(Tensor& t) { return MutMap(t.data().data(), Eigen::Index(t.rows()), Eigen::Index(t.cols())); }

[[noreturn]] void shape_mismatch(const char* op, const Tensor& a, const Tensor& b) {
  throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
}

void require_matrix(const char* op, const Tensor& a) {
  if (a.rank() != 2) throw ShapeError(std::string(op) + ": expected rank-2 operand, got " + shape_string(a.shape()));
}

template <typename F>
Tensor map_unary(const Tensor& a, F f) {
  Tensor out(a.shape());
  auto src = a.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = f(src[i]);
  return out;
}

template <typename F>
Tensor map_binary(const Tensor& a, const Tensor& b, F f) {
  Tensor out(a.shape());
  auto x = a.data();
  auto y = b.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) dst[i] = f(x[i], y[i]);
  return out;
}

}  // namespace

const char* op_name(Op op) {
  switch (op) {
    case Op::kConstant: return "constant";
    case Op::kParameter: return "parameter";
    case Op::kAdd: return "add";
    case Op::kSub: return "subtract";
    case Op::kMul: return "multiply";
    case Op::kMatMul: return "matmul";
    case Op::kScale: return "scale";
    case Op::kSum: return "sum";
    case Op::kSumCols: return "sum_cols";
    case Op::kMean: return "mean";
    case Op::kExp: return "exp";
    case Op::kLog: return "log";
    case Op::kTanh: return "tanh";
    case Op::kRelu: return "relu";
    case Op::kSquare: return "square";
    case Op::kConcat: return "concat";
    case Op::kGather: return "gather";
  }
  return "unknown";
}

const Tensor& Var::value() const { return graph_->value(*this); }

const Tensor& GradientMap::operator[](Var parameter) const {
  auto it = grads_.find(parameter.id());
  if (it == grads_.end()) throw Error("gradient map: node " + std::to_string(parameter.id()) + " is not a parameter");
  return it->second;
}

void Graph::check_owner(Var v, const char* op) const {
  if (v.graph() != this || v.id() >= nodes_.size()) {
    throw Error(std::string(op) + ": operand does not belong to this graph");
  }
}

Var Graph::push(Node node, Tensor value) {
  if (!value.all_finite()) {
    throw NonFiniteError(std::string(op_name(node.op)) + ": produced a non-finite value");
  }
  nodes_.push_back(std::move(node));
  values_.push_back(std::move(value));
  return Var(this, nodes_.size() - 1);
}

Var Graph::constant(Tensor value) {
  Node node{.op = Op::kConstant};
  return push(std::move(node), std::move(value));
}

Var Graph::parameter(Tensor value) {
  Node node{.op = Op::kParameter, .needs_grad = true};
  Var v = push(std::move(node), std::move(value));
  parameters_.push_back(v.id());
  return v;
}

Var Graph::add(Var a, Var b) {
  check_owner(a, "add");
  check_owner(b, "add");
  const Tensor& x = value(a);
  const Tensor& y = value(b);
  if (x.shape() != y.shape()) shape_mismatch("add", x, y);
  Node node{.op = Op::kAdd, .lhs = a.id(), .rhs = b.id(), .needs_grad = needs_grad(a) || needs_grad(b)};
  return push(std::move(node), map_binary(x, y, [](double p, double q) { return p + q; }));
}

Var Graph::sub(Var a, Var b) {
  check_owner(a, "subtract");
  check_owner(b, "subtract");
  const Tensor& x = value(a);
  const Tensor& y = value(b);
  if (x.shape() != y.shape()) shape_mismatch("subtract", x, y);
  Node node{.op = Op::kSub, .lhs = a.id(), .rhs = b.id(), .needs_grad = needs_grad(a) || needs_grad(b)};
  return push(std::move(node), map_binary(x, y, [](double p, double q) { return p - q; }));
}

Var Graph::mul(Var a, Var b) {
  check_owner(a, "multiply");
  check_owner(b, "multiply");
  const Tensor& x = value(a);
  const Tensor& y = value(b);
  if (x.shape() != y.shape()) shape_mismatch("multiply", x, y);
  Node node{.op = Op::kMul, .lhs = a.id(), .rhs = b.id(), .needs_grad = needs_grad(a) || needs_grad(b)};
  return push(std::move(node), map_binary(x, y, [](double p, double q) { return p * q; }));
}

Var Graph::matmul(Var a, Var b) {
  check_owner(a, "matmul");
  check_owner(b, "matmul");
  const Tensor& x = value(a);
  const Tensor& y = value(b);
  require_matrix("matmul", x);
  require_matrix("matmul", y);
  if (x.cols() != y.rows()) shape_mismatch("matmul", x, y);
  Tensor out(Shape{x.rows(), y.cols()});
  if (x.cols() > 0) view(out).noalias() = view(x) * view(y);
  Node node{.op = Op::kMatMul, .lhs = a.id(), .rhs = b.id(), .needs_grad = needs_grad(a) || needs_grad(b)};
  return push(std::move(node), std::move(out));
}

Var Graph::scale(Var a, double factor) {
  check_owner(a, "scale");
  Node node{.op = Op::kScale, .lhs = a.id(), .factor = factor, .needs_grad = needs_grad(a)};
  return push(std::move(node), map_unary(value(a), [factor](double p) { return factor * p; }));
}

Var Graph::sum(Var a) {
  check_owner(a, "sum");
  const auto data = value(a).data();
  const double total = std::accumulate(data.begin(), data.end(), 0.0);
  Node node{.op = Op::kSum, .lhs = a.id(), .needs_grad = needs_grad(a)};
  return push(std::move(node), Tensor::scalar(total));
}

Var Graph::sum_cols(Var a) {
  check_owner(a, "sum_cols");
  const Tensor& x = value(a);
  require_matrix("sum_cols", x);
  Tensor out(Shape{x.rows(), 1});
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double acc = 0.0;
    for (double v : x.row(r)) acc += v;
    out[r] = acc;
  }
  Node node{.op = Op::kSumCols, .lhs = a.id(), .needs_grad = needs_grad(a)};
  return push(std::move(node), std::move(out));
}

Var Graph::mean(Var a) {
  check_owner(a, "mean");
  const Tensor& x = value(a);
  if (x.size() == 0) throw ShapeError("mean: empty operand " + shape_string(x.shape()));
  const auto data = x.data();
  const double total = std::accumulate(data.begin(), data.end(), 0.0);
  Node node{.op = Op::kMean, .lhs = a.id(), .needs_grad = needs_grad(a)};
  return push(std::move(node), Tensor::scalar(total / static_cast<double>(x.size())));
}

Var Graph::exp(Var a) {
  check_owner(a, "exp");
  Node node{.op = Op::kExp, .lhs = a.id(), .needs_grad = needs_grad(a)};
  return push(std::move(node), map_unary(value(a), [](double p) { return std::exp(p); }));
}

Var Graph::log(Var a) {
  check_owner(a, "log");
  for (double v : value(a).data()) {
    if (!(v > 0.0)) throw DomainError("log: non-positive input " + std::to_string(v));
  }
  Node node{.op = Op::kLog, .lhs = a.id(), .needs_grad = needs_grad(a)};
  return push(std::move(node), map_unary(value(a), [](double p) { return std::log(p); }));
}

Var Graph::tanh(Var a) {
  check_owner(a, "tanh");
  Node node{.op = Op::kTanh, .lhs = a.id(), .needs_grad = needs_grad(a)};
  return push(std::move(node), map_unary(value(a), [](double p) { return std::tanh(p); }));
}

Var Graph::relu(Var a) {
  check_owner(a, "relu");
  Node node{.op = Op::kRelu, .lhs = a.id(), .needs_grad = needs_grad(a)};
  return push(std::move(node), map_unary(value(a), [](double p) { return p > 0.0 ? p : 0.0; }));
}

Var Graph::square(Var a) {
  check_owner(a, "square");
  Node node{.op = Op::kSquare, .lhs = a.id(), .needs_grad = needs_grad(a)};
  return push(std::move(node), map_unary(value(a), [](double p) { return p * p; }));
}

Var Graph::concat(Var a, Var b) {
  check_owner(a, "concat");
  check_owner(b, "concat");
  const Tensor& x = value(a);
  const Tensor& y = value(b);
  require_matrix("concat", x);
  require_matrix("concat", y);
  if (x.rows() != y.rows()) shape_mismatch("concat", x, y);
  const std::size_t n = x.rows();
  const std::size_t kx = x.cols();
  const std::size_t ky = y.cols();
  Tensor out(Shape{n, kx + ky});
  for (std::size_t r = 0; r < n; ++r) {
    auto dst = out.row(r);
    std::copy(x.row(r).begin(), x.row(r).end(), dst.begin());
    std::copy(y.row(r).begin(), y.row(r).end(), dst.begin() + static_cast<std::ptrdiff_t>(kx));
  }
  Node node{.op = Op::kConcat, .lhs = a.id(), .rhs = b.id(), .needs_grad = needs_grad(a) || needs_grad(b)};
  return push(std::move(node), std::move(out));
}

Var Graph::gather_cols(Var a, std::vector<std::size_t> indices) {
  check_owner(a, "gather");
  const Tensor& x = value(a);
  require_matrix("gather", x);
  for (std::size_t idx : indices) {
    if (idx >= x.cols()) {
      throw ShapeError("gather: index " + std::to_string(idx) + " out of range for shape " + shape_string(x.shape()));
    }
  }
  const std::size_t n = x.rows();
  Tensor out(Shape{n, indices.size()});
  for (std::size_t r = 0; r < n; ++r) {
    auto src = x.row(r);
    auto dst = out.row(r);
    for (std::size_t j = 0; j < indices.size(); ++j) dst[j] = src[indices[j]];
  }
  Node node{.op = Op::kGather, .lhs = a.id(), .indices = std::move(indices), .needs_grad = needs_grad(a)};
  return push(std::move(node), std::move(out));
}

const Tensor& Graph::value(Var v) const {
  check_owner(v, "value");
  return values_[v.id()];
}

Tensor Graph::adjoint(Var v) const {
  check_owner(v, "adjoint");
  if (v.id() < has_adjoint_.size() && has_adjoint_[v.id()]) return adjoints_[v.id()];
  return Tensor(values_[v.id()].shape());
}

void Graph::accumulate(std::size_t id, const Tensor& delta) {
  if (!nodes_[id].needs_grad) return;
  if (!has_adjoint_[id]) {
    adjoints_[id] = delta;
    has_adjoint_[id] = true;
    return;
  }
  auto dst = adjoints_[id].data();
  auto src = delta.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

GradientMap Graph::backward(Var loss) {
  check_owner(loss, "backward");
  if (values_[loss.id()].size() != 1) {
    throw ShapeError("backward: loss must be a scalar, got " + shape_string(values_[loss.id()].shape()));
  }
  adjoints_.assign(nodes_.size(), Tensor());
  has_adjoint_.assign(nodes_.size(), false);
  adjoints_[loss.id()] = Tensor::filled(values_[loss.id()].shape(), 1.0);
  has_adjoint_[loss.id()] = true;

  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    if (!has_adjoint_[id] || !nodes_[id].needs_grad) continue;
    const Node& node = nodes_[id];
    const Tensor& g = adjoints_[id];
    const Tensor& y = values_[id];
    switch (node.op) {
      case Op::kConstant:
      case Op::kParameter:
        break;
      case Op::kAdd:
        accumulate(node.lhs, g);
        accumulate(node.rhs, g);
        break;
      case Op::kSub:
        accumulate(node.lhs, g);
        if (nodes_[node.rhs].needs_grad) accumulate(node.rhs, map_unary(g, [](double p) { return -p; }));
        break;
      case Op::kMul:
        if (nodes_[node.lhs].needs_grad) accumulate(node.lhs, map_binary(g, values_[node.rhs], std::multiplies<>()));
        if (nodes_[node.rhs].needs_grad) accumulate(node.rhs, map_binary(g, values_[node.lhs], std::multiplies<>()));
        break;
      case Op::kMatMul: {
        const Tensor& a = values_[node.lhs];
        const Tensor& b = values_[node.rhs];
        if (nodes_[node.lhs].needs_grad) {
          Tensor da(a.shape());
          if (b.cols() > 0) view(da).noalias() = view(g) * view(b).transpose();
          accumulate(node.lhs, da);
        }
        if (nodes_[node.rhs].needs_grad) {
          Tensor db(b.shape());
          if (a.rows() > 0) view(db).noalias() = view(a).transpose() * view(g);
          accumulate(node.rhs, db);
        }
        break;
      }
      case Op::kScale: {
        const double c = node.factor;
        accumulate(node.lhs, map_unary(g, [c](double p) { return c * p; }));
        break;
      }
      case Op::kSum:
        accumulate(node.lhs, Tensor::filled(values_[node.lhs].shape(), g.item()));
        break;
      case Op::kSumCols: {
        const Tensor& a = values_[node.lhs];
        Tensor da(a.shape());
        for (std::size_t r = 0; r < a.rows(); ++r) {
          for (double& v : da.row(r)) v = g[r];
        }
        accumulate(node.lhs, da);
        break;
      }
      case Op::kMean: {
        const Tensor& a = values_[node.lhs];
        accumulate(node.lhs, Tensor::filled(a.shape(), g.item() / static_cast<double>(a.size())));
        break;
      }
      case Op::kExp:
        accumulate(node.lhs, map_binary(g, y, std::multiplies<>()));
        break;
      case Op::kLog:
        accumulate(node.lhs, map_binary(g, values_[node.lhs], std::divides<>()));
        break;
      case Op::kTanh:
        accumulate(node.lhs, map_binary(g, y, [](double p, double t) { return p * (1.0 - t * t); }));
        break;
      case Op::kRelu:
        // Subgradient at exactly 0 is 0.
        accumulate(node.lhs, map_binary(g, values_[node.lhs], [](double p, double x) { return x > 0.0 ? p : 0.0; }));
        break;
      case Op::kSquare:
        accumulate(node.lhs, map_binary(g, values_[node.lhs], [](double p, double x) { return 2.0 * x * p; }));
        break;
      case Op::kConcat: {
        const Tensor& a = values_[node.lhs];
        const Tensor& b = values_[node.rhs];
        const std::size_t ka = a.cols();
        Tensor da(a.shape());
        Tensor db(b.shape());
        for (std::size_t r = 0; r < g.rows(); ++r) {
          auto src = g.row(r);
          std::copy(src.begin(), src.begin() + static_cast<std::ptrdiff_t>(ka), da.row(r).begin());
          std::copy(src.begin() + static_cast<std::ptrdiff_t>(ka), src.end(), db.row(r).begin());
        }
        accumulate(node.lhs, da);
        accumulate(node.rhs, db);
        break;
      }
      case Op::kGather: {
        const Tensor& a = values_[node.lhs];
        Tensor da(a.shape());
        for (std::size_t r = 0; r < g.rows(); ++r) {
          auto src = g.row(r);
          auto dst = da.row(r);
          for (std::size_t j = 0; j < node.indices.size(); ++j) dst[node.indices[j]] += src[j];
        }
        accumulate(node.lhs, da);
        break;
      }
    }
  }

  GradientMap grads;
  for (std::size_t id : parameters_) {
    grads.grads_.emplace(id, has_adjoint_[id] ? adjoints_[id] : Tensor(values_[id].shape()));
  }
  return grads;
}

std::pair<Var, Var> split(Var a, std::size_t k) {
  const std::size_t cols = a.value().cols();
  if (k > cols) throw ShapeError("split: offset " + std::to_string(k) + " exceeds " + shape_string(a.shape()));
  std::vector<std::size_t> left(k);
  std::vector<std::size_t> right(cols - k);
  std::iota(left.begin(), left.end(), std::size_t{0});
  std::iota(right.begin(), right.end(), k);
  return {gather_cols(a, std::move(left)), gather_cols(a, std::move(right))};
}

Var repeat_rows(Var row, std::size_t n) {
  if (row.value().rank() != 2 || row.value().rows() != 1) {
    throw ShapeError("repeat_rows: expected [1, k], got " + shape_string(row.shape()));
  }
  Var ones = row.graph()->constant(Tensor::filled(Shape{n, 1}, 1.0));
  return matmul(ones, row);
}

}  // namespace cflow
