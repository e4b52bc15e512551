#include "cflow/satgadget.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <numbers>
#include <ostream>
#include <sstream>

#include "cflow/error.hpp"
#include "cflow/rng.hpp"

namespace cflow {

namespace {

double relu(double v) { return v > 0.0 ? v : 0.0; }

double log_sum_exp(double a, double b) {
  const double hi = std::max(a, b);
  if (std::isinf(hi) && hi < 0) return hi;
  return hi + std::log(std::exp(a - hi) + std::exp(b - hi));
}

double log_normal(double x, double mean, double sd) {
  const double u = (x - mean) / sd;
  return -0.5 * u * u - std::log(sd) - 0.5 * std::log(2.0 * std::numbers::pi);
}

}  // namespace

CnfFormula::CnfFormula(std::size_t num_vars, std::vector<Clause> clauses)
    : num_vars_(num_vars), clauses_(std::move(clauses)) {
  for (std::size_t j = 0; j < clauses_.size(); ++j) {
    const Clause& c = clauses_[j];
    for (std::size_t k = 0; k < 3; ++k) {
      if (c[k].var >= num_vars_) {
        throw ConfigError("cnf: clause " + std::to_string(j) + " uses variable " + std::to_string(c[k].var + 1) +
                          " but the formula has " + std::to_string(num_vars_));
      }
      if (c[k].polarity != 1 && c[k].polarity != -1) throw ConfigError("cnf: polarity must be +1 or -1");
      for (std::size_t l = 0; l < k; ++l) {
        if (c[l].var == c[k].var && c[l].polarity != c[k].polarity) {
          throw ConfigError("cnf: clause " + std::to_string(j) + " contains a literal and its negation");
        }
      }
    }
  }
}

bool CnfFormula::satisfied_by(std::span<const double> corner) const {
  if (corner.size() != num_vars_) throw ShapeError("cnf: assignment has wrong length");
  return std::all_of(clauses_.begin(), clauses_.end(), [&](const Clause& c) {
    return std::any_of(c.begin(), c.end(), [&](const Literal& l) { return corner[l.var] * l.polarity > 0.0; });
  });
}

std::vector<std::vector<double>> CnfFormula::satisfying_corners() const {
  if (num_vars_ > 24) throw DomainError("cnf: too many variables to enumerate");
  std::vector<std::vector<double>> out;
  std::vector<double> corner(num_vars_);
  for (std::uint64_t bits = 0; bits < (std::uint64_t{1} << num_vars_); ++bits) {
    for (std::size_t i = 0; i < num_vars_; ++i) corner[i] = (bits >> i) & 1 ? 1.0 : -1.0;
    if (satisfied_by(corner)) out.push_back(corner);
  }
  return out;
}

CnfFormula parse_dimacs(std::istream& in) {
  std::string line;
  long declared_vars = -1;
  long declared_clauses = -1;
  std::vector<Clause> clauses;
  std::vector<long> pending;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto start = line.find_first_not_of(" \t\r");
    if (start == std::string::npos) continue;
    const char lead = line[start];
    if (lead == 'c') continue;
    if (lead == '%') break;
    std::istringstream tokens(line);
    if (lead == 'p') {
      std::string p;
      std::string fmt;
      if (!(tokens >> p >> fmt >> declared_vars >> declared_clauses) || fmt != "cnf" || declared_vars < 0 ||
          declared_clauses < 0) {
        throw ConfigError("dimacs: bad problem line " + std::to_string(line_no));
      }
      continue;
    }
    if (declared_vars < 0) throw ConfigError("dimacs: clause before the problem line at line " + std::to_string(line_no));
    long lit = 0;
    while (tokens >> lit) {
      if (lit != 0) {
        if (std::labs(lit) > declared_vars) {
          throw ConfigError("dimacs: literal " + std::to_string(lit) + " out of range at line " + std::to_string(line_no));
        }
        pending.push_back(lit);
        continue;
      }
      if (pending.size() != 3) {
        throw ConfigError("dimacs: clause ending at line " + std::to_string(line_no) + " has " +
                          std::to_string(pending.size()) + " literals, expected 3");
      }
      Clause c;
      for (std::size_t k = 0; k < 3; ++k) {
        c[k] = Literal{static_cast<std::size_t>(std::labs(pending[k]) - 1), pending[k] > 0 ? 1 : -1};
      }
      clauses.push_back(c);
      pending.clear();
    }
    if (!tokens.eof()) throw ConfigError("dimacs: unexpected token at line " + std::to_string(line_no));
  }
  if (declared_vars < 0) throw ConfigError("dimacs: missing problem line");
  if (!pending.empty()) throw ConfigError("dimacs: last clause is not terminated by 0");
  if (static_cast<long>(clauses.size()) != declared_clauses) {
    throw ConfigError("dimacs: header declares " + std::to_string(declared_clauses) + " clauses, found " +
                      std::to_string(clauses.size()));
  }
  return CnfFormula(static_cast<std::size_t>(declared_vars), std::move(clauses));
}

CnfFormula parse_dimacs(std::string_view text) {
  std::istringstream in{std::string(text)};
  return parse_dimacs(in);
}

CnfFormula read_dimacs_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("dimacs: cannot open " + path);
  return parse_dimacs(in);
}

std::string to_dimacs(const CnfFormula& formula) {
  std::ostringstream out;
  out << "p cnf " << formula.num_vars() << ' ' << formula.num_clauses() << '\n';
  for (const Clause& c : formula.clauses()) {
    for (const Literal& l : c) out << (l.polarity < 0 ? "-" : "") << l.var + 1 << ' ';
    out << "0\n";
  }
  return out.str();
}

CnfFormula random_satisfiable_3cnf(std::size_t num_vars, std::size_t num_clauses, Rng& rng) {
  if (num_vars < 3 || num_vars > 20) throw DomainError("random 3-cnf: num_vars must be in [3, 20]");
  if (3 * num_clauses < num_vars) throw DomainError("random 3-cnf: too few clauses to use every variable");
  for (int attempt = 0; attempt < 100000; ++attempt) {
    std::vector<Clause> clauses(num_clauses);
    std::vector<bool> used(num_vars, false);
    for (Clause& c : clauses) {
      for (std::size_t k = 0; k < 3; ++k) {
        std::size_t v = 0;
        do {
          v = rng.below(num_vars);
        } while ((k > 0 && c[0].var == v) || (k > 1 && c[1].var == v));
        c[k] = Literal{v, rng.below(2) ? 1 : -1};
        used[v] = true;
      }
    }
    if (std::find(used.begin(), used.end(), false) != used.end()) continue;
    CnfFormula formula(num_vars, std::move(clauses));
    if (!formula.satisfying_corners().empty()) return formula;
  }
  throw Error("random 3-cnf: no satisfiable formula found");
}

double delta_eps(double x, double eps) {
  const double u = (x - (1.0 - eps)) / eps;
  const double v = (x - 1.0) / eps;
  return relu(u) - relu(u - 1.0) - relu(v) + relu(v - 1.0);
}

double transformed_var(double x, double eps) { return delta_eps(x, eps) - delta_eps(-x, eps); }

double default_gadget_scale(std::size_t num_vars, std::size_t num_clauses) {
  const double m = static_cast<double>(std::max<std::size_t>(num_clauses, 2));
  return 4.0 * std::sqrt(static_cast<double>(num_vars) * std::log(m));
}

SatGadget::SatGadget(CnfFormula formula, double eps, double scale)
    : formula_(std::move(formula)), eps_(eps), scale_(scale) {
  for (const Clause& c : formula_.clauses()) {
    for (int bits = 0; bits < 8; ++bits) {
      Neuron n;
      bool satisfies = false;
      for (std::size_t k = 0; k < 3; ++k) {
        const double value = (bits >> k) & 1 ? 1.0 : -1.0;
        n.vars[k] = c[k].var;
        n.weights[k] = value / 3.0;
        satisfies = satisfies || value * c[k].polarity > 0.0;
      }
      if (satisfies) neurons_.push_back(n);
    }
  }
}

std::vector<double> SatGadget::clause_values(std::span<const double> x) const {
  if (x.size() != formula_.num_vars()) {
    throw ShapeError("sat gadget: input has length " + std::to_string(x.size()) + ", expected " +
                     std::to_string(formula_.num_vars()));
  }
  std::vector<double> xt(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) xt[i] = transformed_var(x[i], eps_);
  std::vector<double> c(formula_.num_clauses(), 0.0);
  for (std::size_t n = 0; n < neurons_.size(); ++n) {
    const Neuron& neuron = neurons_[n];
    double s = 0.0;
    for (std::size_t k = 0; k < 3; ++k) s += neuron.weights[k] * xt[neuron.vars[k]];
    c[n / 7] += delta_eps(s, eps_);
  }
  return c;
}

double SatGadget::evaluate(std::span<const double> x) const {
  const std::vector<double> c = clause_values(x);
  double total = 0.0;
  for (double v : c) total += v;
  const double m = static_cast<double>(c.size());
  return scale_ * relu(std::min(total, m) - (m - 1.0));
}

SatGadget compile_gadget(const CnfFormula& formula, double eps, double scale) {
  if (!(eps > 0.0 && eps < 1.0 / 3.0)) throw DomainError("sat gadget: eps must lie in (0, 1/3)");
  if (!(scale > 0.0) || !std::isfinite(scale)) throw DomainError("sat gadget: M must be positive");
  for (std::size_t j = 0; j < formula.num_clauses(); ++j) {
    const Clause& c = formula.clauses()[j];
    if (c[0].var == c[1].var || c[0].var == c[2].var || c[1].var == c[2].var) {
      throw ConfigError("sat gadget: clause " + std::to_string(j) + " repeats a variable");
    }
  }
  return SatGadget(formula, eps, scale);
}

double eval_gadget(const SatGadget& gadget, std::span<const double> x) { return gadget.evaluate(x); }

std::optional<std::vector<bool>> decode_assignment(std::span<const double> x, double eps) {
  std::vector<bool> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (std::abs(x[i] - 1.0) < eps) {
      out[i] = true;
    } else if (std::abs(x[i] + 1.0) < eps) {
      out[i] = false;
    } else {
      return std::nullopt;
    }
  }
  return out;
}

Tensor GadgetFlow::apply(const Tensor& rows, double sign) const {
  const Tensor m = rows.as_matrix();
  const std::size_t d = gadget_.formula().num_vars();
  if (m.cols() != d + 1) throw ShapeError("gadget flow: rows must have width d + 1");
  Tensor out = m;
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto row = m.row(r);
    out.at(r, d) = row[d] + sign * gadget_.evaluate(row.first(d));
  }
  return rows.rank() == 1 ? out.reshaped(rows.shape()) : out;
}

Tensor GadgetFlow::forward(const Tensor& xz) const { return apply(xz, 1.0); }
Tensor GadgetFlow::inverse(const Tensor& xy) const { return apply(xy, -1.0); }

void SatDemoReport::write(std::ostream& out) const {
  const auto old = out.precision(10);
  out << "conditional SAT sampling\n"
      << "  variables " << num_vars << ", clauses " << num_clauses << ", satisfying corners " << n_sat_corners << '\n'
      << "  eps " << eps << ", M " << scale << ", window +-" << tau << '\n'
      << "  draws " << budget << ", accepted " << accepted << " (" << accepted_success << " decode to a solution)\n"
      << "  status " << (inconclusive ? "inconclusive" : "ok") << "\n\n";
  out << "accept_rate=" << accept_rate << '\n'
      << "success_fraction=" << success_fraction << '\n'
      << "n_sat_corners=" << n_sat_corners << '\n'
      << "M=" << scale << '\n'
      << "tau=" << tau << '\n'
      << "accepted=" << accepted << '\n'
      << "status=" << (inconclusive ? "inconclusive" : "ok") << '\n';
  out.precision(old);
}

SatDemoReport conditional_sat_demo(const CnfFormula& formula, const SatDemoConfig& config, Rng& rng) {
  const std::size_t d = formula.num_vars();
  if (d == 0 || d > 12) throw DomainError("sat demo: need 1 <= d <= 12 for exhaustive checking");
  if (!(config.tau > 0.0)) throw ConfigError("sat demo: tau must be positive");
  if (!(config.prior_weight > 0.0 && config.prior_weight <= 1.0)) {
    throw ConfigError("sat demo: prior_weight must lie in (0, 1]");
  }
  const double scale = config.scale > 0.0 ? config.scale : default_gadget_scale(d, formula.num_clauses());
  const SatGadget gadget = compile_gadget(formula, config.eps, scale);
  const double m = static_cast<double>(std::max<std::size_t>(formula.num_clauses(), 1));
  const double sd = config.corner_sd > 0.0 ? config.corner_sd : config.eps * config.eps / (m * scale);

  SatDemoReport report;
  report.num_vars = d;
  report.num_clauses = formula.num_clauses();
  report.eps = config.eps;
  report.scale = scale;
  report.tau = config.tau;
  report.budget = config.budget;
  report.n_sat_corners = formula.satisfying_corners().size();

  const double log_w0 = std::log(config.prior_weight);
  const double log_w1 = config.prior_weight < 1.0 ? std::log1p(-config.prior_weight) : -INFINITY;
  const double log_half = std::log(0.5);
  std::vector<double> x(d);
  std::vector<double> corner(d);
  double accept_weight = 0.0;
  double success_weight = 0.0;
  for (std::size_t s = 0; s < config.budget; ++s) {
    const bool from_prior = rng.uniform() < config.prior_weight;
    for (std::size_t i = 0; i < d; ++i) {
      x[i] = from_prior ? rng.normal() : (rng.below(2) ? 1.0 : -1.0) + sd * rng.normal();
    }
    const double z = rng.normal();
    double log_p = 0.0;
    double log_corner = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      log_p += log_normal(x[i], 0.0, 1.0);
      log_corner += log_half + log_sum_exp(log_normal(x[i], 1.0, sd), log_normal(x[i], -1.0, sd));
    }
    const double y = z + gadget.evaluate(x);
    if (std::abs(y - scale) > config.tau) continue;
    const double weight = std::exp(log_p - log_sum_exp(log_w0 + log_p, log_w1 + log_corner));
    ++report.accepted;
    accept_weight += weight;
    const auto decoded = decode_assignment(x, config.eps);
    if (!decoded) continue;
    for (std::size_t i = 0; i < d; ++i) corner[i] = (*decoded)[i] ? 1.0 : -1.0;
    if (!formula.satisfied_by(corner)) continue;
    ++report.accepted_success;
    success_weight += weight;
  }
  if (config.budget > 0) report.accept_rate = accept_weight / static_cast<double>(config.budget);
  report.inconclusive = report.accepted == 0;
  if (!report.inconclusive) report.success_fraction = success_weight / accept_weight;
  return report;
}

}  // namespace cflow
