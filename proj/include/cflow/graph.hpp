#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cflow/tensor.hpp"

namespace cflow {

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid as long as its Graph.
class Var {
 public:
  Var() = default;

  std::size_t id() const { return id_; }
  Graph* graph() const { return graph_; }
  bool valid() const { return graph_ != nullptr; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  friend class Graph;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph* graph_ = nullptr;
  std::size_t id_ = std::numeric_limits<std::size_t>::max();
};

enum class Op : std::uint8_t {
  kConstant,
  kParameter,
  kAdd,
  kSub,
  kMul,
  kMatMul,
  kScale,
  kSum,
  kSumCols,
  kMean,
  kExp,
  kLog,
  kTanh,
  kRelu,
  kSquare,
  kConcat,
  kGather,
};

const char* op_name(Op op);

/// Adjoints of the parameter nodes after a backward sweep.
class GradientMap {
 public:
  const Tensor& operator[](Var parameter) const;
  bool contains(Var parameter) const { return grads_.contains(parameter.id()); }
  std::size_t size() const { return grads_.size(); }

 private:
  friend class Graph;
  std::unordered_map<std::size_t, Tensor> grads_;
};

/// Define-by-run tape. Nodes are appended in evaluation order, so every
/// parent index precedes its children. Not thread-safe; use one per thread.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  Var parameter(Tensor value);

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var matmul(Var a, Var b);
  Var scale(Var a, double factor);
  Var sum(Var a);
  /// [n, k] -> [n, 1]
  Var sum_cols(Var a);
  Var mean(Var a);
  Var exp(Var a);
  Var log(Var a);
  Var tanh(Var a);
  Var relu(Var a);
  Var square(Var a);
  /// Column-wise concatenation of two [n, *] tensors.
  Var concat(Var a, Var b);
  /// Selects columns of a [n, k] tensor; indices may repeat or reorder.
  Var gather_cols(Var a, std::vector<std::size_t> indices);

  /// Reverse sweep from a scalar node. Afterwards adjoint() reports the loss
  /// adjoint (1), the adjoint of every node that depends on a parameter, and
  /// zero for everything else.
  GradientMap backward(Var loss);

  const Tensor& value(Var v) const;
  Tensor adjoint(Var v) const;
  std::size_t size() const { return nodes_.size(); }
  bool needs_grad(Var v) const { return nodes_.at(v.id()).needs_grad; }

 private:
  struct Node {
    Op op;
    std::size_t lhs = 0;
    std::size_t rhs = 0;
    double factor = 0.0;
    std::vector<std::size_t> indices = {};
    bool needs_grad = false;
  };

  Var push(Node node, Tensor value);
  void check_owner(Var v, const char* op) const;
  void accumulate(std::size_t id, const Tensor& delta);

  std::vector<Node> nodes_;
  std::vector<Tensor> values_;
  std::vector<Tensor> adjoints_;
  std::vector<bool> has_adjoint_;
  std::vector<std::size_t> parameters_;
};

inline Var operator+(Var a, Var b) { return a.graph()->add(a, b); }
inline Var operator-(Var a, Var b) { return a.graph()->sub(a, b); }
inline Var operator*(Var a, Var b) { return a.graph()->mul(a, b); }
inline Var operator*(double c, Var a) { return a.graph()->scale(a, c); }
inline Var operator*(Var a, double c) { return a.graph()->scale(a, c); }

inline Var matmul(Var a, Var b) { return a.graph()->matmul(a, b); }
inline Var sum(Var a) { return a.graph()->sum(a); }
inline Var sum_cols(Var a) { return a.graph()->sum_cols(a); }
inline Var mean(Var a) { return a.graph()->mean(a); }
inline Var exp(Var a) { return a.graph()->exp(a); }
inline Var log(Var a) { return a.graph()->log(a); }
inline Var tanh(Var a) { return a.graph()->tanh(a); }
inline Var relu(Var a) { return a.graph()->relu(a); }
inline Var square(Var a) { return a.graph()->square(a); }
inline Var concat(Var a, Var b) { return a.graph()->concat(a, b); }
inline Var gather_cols(Var a, std::vector<std::size_t> indices) {
  return a.graph()->gather_cols(a, std::move(indices));
}

/// Columns [0, k) and [k, cols) of a [n, cols] tensor.
std::pair<Var, Var> split(Var a, std::size_t k);

/// Stacks a [1, k] row n times via an outer product with ones.
Var repeat_rows(Var row, std::size_t n);

}  // namespace cflow
