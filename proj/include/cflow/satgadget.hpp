#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cflow/tensor.hpp"

namespace cflow {

class Rng;

struct Literal {
  std::size_t var = 0;
  int polarity = 1;  // +1 for x, -1 for not x

  bool operator==(const Literal&) const = default;
};

using Clause = std::array<Literal, 3>;

/// 3-CNF over variables taking values in {-1, +1}.
class CnfFormula {
 public:
  /// Throws ConfigError on an out-of-range variable, a bad polarity or a
  /// clause containing a literal and its negation.
  CnfFormula(std::size_t num_vars, std::vector<Clause> clauses);

  std::size_t num_vars() const { return num_vars_; }
  std::size_t num_clauses() const { return clauses_.size(); }
  const std::vector<Clause>& clauses() const { return clauses_; }

  bool satisfied_by(std::span<const double> corner) const;
  /// Corners of {-1, 1}^d satisfying the formula; d must be at most 24.
  std::vector<std::vector<double>> satisfying_corners() const;

  bool operator==(const CnfFormula&) const = default;

 private:
  std::size_t num_vars_;
  std::vector<Clause> clauses_;
};

/// DIMACS "p cnf" text. Comments and a trailing '%' line are skipped.
CnfFormula parse_dimacs(std::istream& in);
CnfFormula parse_dimacs(std::string_view text);
CnfFormula read_dimacs_file(const std::string& path);
std::string to_dimacs(const CnfFormula& formula);

/// Uniformly random 3-CNF with distinct variables per clause, every variable
/// used at least once (requires 3 * num_clauses >= num_vars), resampled until
/// satisfiable. num_vars must be between 3 and 20.
CnfFormula random_satisfiable_3cnf(std::size_t num_vars, std::size_t num_clauses, Rng& rng);

/// Bump: 0 outside (1 - eps, 1 + eps), 1 at x = 1, linear in between.
double delta_eps(double x, double eps);
/// delta_eps(x) - delta_eps(-x)
double transformed_var(double x, double eps);

/// M = 4 sqrt(d ln m)
double default_gadget_scale(std::size_t num_vars, std::size_t num_clauses);

/// ReLU network that outputs M at satisfying corners and 0 at the others.
class SatGadget {
 public:
  struct Neuron {
    std::array<std::size_t, 3> vars;
    std::array<double, 3> weights;  // +-1/3
  };

  const CnfFormula& formula() const { return formula_; }
  double eps() const { return eps_; }
  double scale() const { return scale_; }
  /// Seven neurons per clause, in clause order.
  const std::vector<Neuron>& neurons() const { return neurons_; }

  /// Per-clause sums c_j.
  std::vector<double> clause_values(std::span<const double> x) const;
  double evaluate(std::span<const double> x) const;

 private:
  friend SatGadget compile_gadget(const CnfFormula&, double, double);
  SatGadget(CnfFormula formula, double eps, double scale);

  CnfFormula formula_;
  double eps_;
  double scale_;
  std::vector<Neuron> neurons_;
};

/// Requires 0 < eps < 1/3, M > 0 and three distinct variables per clause.
SatGadget compile_gadget(const CnfFormula& formula, double eps, double scale);
double eval_gadget(const SatGadget& gadget, std::span<const double> x);

/// The corner within eps of x in every coordinate, if any.
std::optional<std::vector<bool>> decode_assignment(std::span<const double> x, double eps);

/// (x, z) -> (x, z + f_M(x)) on rows of width d + 1; log-det is 0.
class GadgetFlow {
 public:
  explicit GadgetFlow(SatGadget gadget) : gadget_(std::move(gadget)) {}

  const SatGadget& gadget() const { return gadget_; }
  std::size_t dim() const { return gadget_.formula().num_vars() + 1; }
  Tensor forward(const Tensor& xz) const;
  Tensor inverse(const Tensor& xy) const;
  double log_det() const { return 0.0; }

 private:
  Tensor apply(const Tensor& rows, double sign) const;
  SatGadget gadget_;
};

struct SatDemoConfig {
  double eps = 0.25;
  /// <= 0 selects default_gadget_scale.
  double scale = 0.0;
  double tau = 0.5;
  std::size_t budget = 200000;
  /// Weight of the N(0, I) prior in the proposal; the rest is a product of
  /// two-point Gaussian mixtures at +-1.
  double prior_weight = 0.5;
  /// Width of the corner components; <= 0 selects eps^2 / (m M).
  double corner_sd = 0.0;
};

struct SatDemoReport {
  std::size_t num_vars = 0;
  std::size_t num_clauses = 0;
  double eps = 0.0;
  double scale = 0.0;
  double tau = 0.0;
  std::size_t budget = 0;
  std::size_t n_sat_corners = 0;
  std::size_t accepted = 0;
  std::size_t accepted_success = 0;
  /// Importance-weighted estimate of P(y in [M - tau, M + tau]).
  double accept_rate = 0.0;
  /// Importance-weighted P(decode succeeds and satisfies | accepted).
  double success_fraction = 0.0;
  bool inconclusive = true;

  /// Human-readable block followed by key=value lines.
  void write(std::ostream& out) const;
};

/// Samples (x, z) from the gadget flow's prior by importance sampling and
/// keeps the draws whose y lands within tau of M. Requires d <= 12.
SatDemoReport conditional_sat_demo(const CnfFormula& formula, const SatDemoConfig& config, Rng& rng);

}  // namespace cflow
