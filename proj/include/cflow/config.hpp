#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "cflow/baselines.hpp"
#include "cflow/flow.hpp"
#include "cflow/training.hpp"

namespace cflow {

struct FlowArch {
  std::size_t num_couplings = 6;
  std::vector<std::size_t> hidden = {64, 64};
  CouplingKind kind = CouplingKind::kAffine;

  FlowSpec spec(std::size_t dim, std::size_t context_width = 0) const;
};

/// Everything a CLI run reads. Each field maps to one "[section] key" of the
/// INI file; the README lists them all.
struct RunConfig {
  // [run]
  std::string task = "toy2d";  // inpaint | cs | sr2x | grayscale | toy2d | sat
  std::uint64_t seed = 0;
  std::string output_dir = "out";

  // [data]
  std::string synthetic = "gaussian-mixture";
  std::string data_path;  // FLWI file; overrides synthetic
  std::size_t n_train = 5000;
  std::size_t n_held_out = 500;

  // [base]
  std::string base_checkpoint;  // default <output_dir>/base.ckpt
  FlowArch base_arch;
  TrainConfig base_train{.learning_rate = 1e-3, .num_steps = 2000, .batch_size = 128};

  // [measurement]
  std::string measurement;  // mask | gaussian | downsample2x | grayscale; empty picks the task default
  std::vector<std::size_t> indices;
  std::string mask_file;
  std::size_t num_measurements = 16;
  std::uint64_t op_seed = 0;
  double noise_sigma = 0.0;
  std::vector<double> y;  // explicit observation; otherwise the held-out row observation_index
  std::size_t observation_index = 0;

  // [infer]
  TrainConfig infer{.learning_rate = 1e-3, .num_steps = 1000, .batch_size = 64, .sigma = 0.1};
  FlowArch pregen_arch{.num_couplings = 4, .hidden = {32, 32}};
  std::size_t num_samples = 1000;

  // [lmc]
  LmcConfig lmc;

  // [ivom] / [csgm]
  double ivom_learning_rate = 5e-4;
  std::size_t ivom_steps = 4000;
  double csgm_learning_rate = 0.02;
  std::size_t csgm_steps = 1000;
  double csgm_lambda = 0.1;
  std::size_t csgm_restarts = 3;

  // [amortize]
  TrainConfig amortize{.learning_rate = 1e-3, .num_steps = 2000, .batch_size = 64, .sigma = 0.1};
  FlowArch amortize_arch{.num_couplings = 4, .hidden = {64, 64}};
  std::string amortized_checkpoint;  // default <output_dir>/amortized.ckpt

  // [eval]
  std::string samples;  // default <output_dir>/samples.flws
  std::size_t bins = 50;
  std::size_t coordinate = 0;

  // [sweep]
  std::vector<double> sigmas = {1.0, 0.1, 0.01, 1e-3, 1e-4};

  // [sat]
  std::string dimacs;
  double sat_eps = 0.25;
  double sat_scale = 0.0;  // 0 selects 4 sqrt(d ln m)
  double sat_tau = 0.5;
  std::size_t sat_budget = 200000;

  std::string resolved_base_checkpoint() const;
  std::string resolved_amortized_checkpoint() const;
  std::string resolved_samples() const;
  /// Task default when measurement is empty.
  std::string resolved_measurement() const;
};

/// Parses INI text. Unknown sections or keys and malformed values throw
/// ConfigError naming the field.
RunConfig parse_config(std::string_view text);
RunConfig load_config(const std::string& path);

/// Applies "section.key=value" overrides in order.
void apply_overrides(RunConfig& config, const std::vector<std::string>& overrides);

/// Canonical INI text of every field; parse_config(to_ini(c)) reproduces c.
std::string to_ini(const RunConfig& config);

/// Field-level checks for the given subcommand, including that referenced
/// input files exist.
void validate_config(const RunConfig& config, std::string_view command);

}  // namespace cflow
