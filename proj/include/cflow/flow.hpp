#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <variant>
#include <vector>

#include "cflow/graph.hpp"
#include "cflow/mlp.hpp"
#include "cflow/rng.hpp"

namespace cflow {

enum class CouplingKind : std::uint32_t { kAdditive = 0, kAffine = 1 };

/// Affine scales are exp(tanh(raw) * log(kAffineScaleMax)), i.e. within
/// [1/kAffineScaleMax, kAffineScaleMax].
inline constexpr double kAffineScaleMax = 4.0;

/// y[conditioning] = x[conditioning]
/// y[transformed]  = x[transformed] + g(x[conditioning], ctx)            (additive)
/// y[transformed]  = x[transformed] * scale(ctx, ...) + shift(...)       (affine)
struct CouplingLayer {
  CouplingKind kind = CouplingKind::kAffine;
  std::vector<std::size_t> conditioning;
  std::vector<std::size_t> transformed;
  std::size_t context_width = 0;
  Mlp conditioner;

  bool operator==(const CouplingLayer&) const = default;
};

/// y[i] = x[order[i]]
struct Permutation {
  std::vector<std::size_t> order;

  bool operator==(const Permutation&) const = default;
};

using FlowLayer = std::variant<CouplingLayer, Permutation>;

struct FlowSpec {
  std::size_t dim = 2;
  std::size_t num_couplings = 6;
  std::vector<std::size_t> hidden = {64, 64};
  CouplingKind kind = CouplingKind::kAffine;
  std::size_t context_width = 0;
  /// Append a permutation undoing the accumulated reversals, so a freshly
  /// created model is exactly the identity map.
  bool restore_order = true;
};

/// Stack of coupling and permutation layers mapping latent z to data x with a
/// standard normal prior on z.
class FlowModel {
 public:
  FlowModel() = default;
  FlowModel(std::size_t dim, std::vector<FlowLayer> layers, std::size_t context_width = 0);

  /// Even/odd index split with reversal permutations between couplings and
  /// zeroed conditioner outputs (identity start).
  static FlowModel create(const FlowSpec& spec, Rng& rng);

  std::size_t dim() const { return dim_; }
  std::size_t context_width() const { return context_width_; }
  const std::vector<FlowLayer>& layers() const { return layers_; }
  std::vector<FlowLayer>& mutable_layers() { return layers_; }
  void append(FlowLayer layer);

  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;
  std::size_t parameter_count() const;
  std::vector<double> flat_parameters() const;
  void set_flat_parameters(std::span<const double> values);

  bool operator==(const FlowModel&) const = default;

 private:
  void validate() const;

  std::size_t dim_ = 0;
  std::size_t context_width_ = 0;
  std::vector<FlowLayer> layers_;
};

/// Output rows and per-row log|det J| as a [n, 1] node.
struct FlowVars {
  Var out;
  Var log_det;
};

/// Copies the model's parameters into the graph, as trainable parameters or
/// as constants, in FlowModel::parameters() order.
std::vector<Var> bind_parameters(Graph& graph, const FlowModel& model, bool trainable);

FlowVars flow_forward(Graph& graph, const FlowModel& model, std::span<const Var> params, Var z,
                      std::optional<Var> context = std::nullopt);
FlowVars flow_inverse(Graph& graph, const FlowModel& model, std::span<const Var> params, Var x,
                      std::optional<Var> context = std::nullopt);

/// Row-wise log density of the model at x, [n, 1].
Var flow_log_prob(Graph& graph, const FlowModel& model, std::span<const Var> params, Var x,
                  std::optional<Var> context = std::nullopt);

/// Row-wise log N(z; 0, I) as a [n, 1] node.
Var standard_normal_log_density(Var z);
double standard_normal_log_density(std::span<const double> z);

struct FlowResult {
  Tensor out;                   // [n, d]
  std::vector<double> log_det;  // one per row
};

/// Tensor-level entry points. Inputs are [d] or [n, d]; a context, when the
/// model has one, is [c] (shared by all rows) or [n, c].
FlowResult flow_forward(const FlowModel& model, const Tensor& z, const Tensor* context = nullptr);
FlowResult flow_inverse(const FlowModel& model, const Tensor& x, const Tensor* context = nullptr);
std::vector<double> log_prob(const FlowModel& model, const Tensor& x, const Tensor* context = nullptr);
Tensor sample(const FlowModel& model, std::size_t n, Rng& rng, const Tensor* context = nullptr);

}  // namespace cflow
