#include "cflow/config.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "cflow/datasets.hpp"
#include "cflow/error.hpp"

namespace cflow {

namespace {

namespace pt = boost::property_tree;

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

double to_double(const std::string& s) {
  std::size_t used = 0;
  const double v = std::stod(s, &used);
  if (used != s.size()) throw std::invalid_argument(s);
  return v;
}

std::uint64_t to_u64(const std::string& s) {
  if (s.empty() || s[0] == '-' || s[0] == '+') throw std::invalid_argument(s);
  std::size_t used = 0;
  const unsigned long long v = std::stoull(s, &used);
  if (used != s.size()) throw std::invalid_argument(s);
  return v;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::istringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(trim(item));
  return out;
}

std::string fmt(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

template <typename T, typename F>
std::string join(const std::vector<T>& v, F f) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + f(v[i]);
  return out;
}

std::string size_str(std::size_t v) { return std::to_string(v); }

struct Field {
  std::string section;
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename M>
Field string_field(std::string section, std::string key, M member) {
  return {std::move(section), std::move(key), [member](RunConfig& c, const std::string& v) { c.*member = v; },
          [member](const RunConfig& c) { return c.*member; }};
}

template <typename Access>
Field double_field(std::string section, std::string key, Access access) {
  return {std::move(section), std::move(key),
          [access](RunConfig& c, const std::string& v) { access(c) = to_double(v); },
          [access](const RunConfig& c) { return fmt(access(const_cast<RunConfig&>(c))); }};
}

template <typename Access>
Field count_field(std::string section, std::string key, Access access) {
  return {std::move(section), std::move(key),
          [access](RunConfig& c, const std::string& v) {
            access(c) = static_cast<std::remove_reference_t<decltype(access(c))>>(to_u64(v));
          },
          [access](const RunConfig& c) { return std::to_string(access(const_cast<RunConfig&>(c))); }};
}

CouplingKind parse_coupling(const std::string& v) {
  if (v == "affine") return CouplingKind::kAffine;
  if (v == "additive") return CouplingKind::kAdditive;
  throw std::invalid_argument("expected affine or additive");
}

const char* coupling_name(CouplingKind k) { return k == CouplingKind::kAffine ? "affine" : "additive"; }

void arch_fields(std::vector<Field>& f, const std::string& section, FlowArch RunConfig::*arch) {
  f.push_back(count_field(section, "num_couplings", [arch](RunConfig& c) -> std::size_t& { return (c.*arch).num_couplings; }));
  f.push_back({section, "hidden",
               [arch](RunConfig& c, const std::string& v) {
                 std::vector<std::size_t> widths;
                 for (const std::string& s : split_list(v)) widths.push_back(to_u64(s));
                 (c.*arch).hidden = widths;
               },
               [arch](const RunConfig& c) { return join((c.*arch).hidden, size_str); }});
  f.push_back({section, "coupling", [arch](RunConfig& c, const std::string& v) { (c.*arch).kind = parse_coupling(v); },
               [arch](const RunConfig& c) { return std::string(coupling_name((c.*arch).kind)); }});
}

void train_fields(std::vector<Field>& f, const std::string& section, TrainConfig RunConfig::*train) {
  f.push_back(double_field(section, "learning_rate", [train](RunConfig& c) -> double& { return (c.*train).learning_rate; }));
  f.push_back(count_field(section, "num_steps", [train](RunConfig& c) -> std::size_t& { return (c.*train).num_steps; }));
  f.push_back(count_field(section, "batch_size", [train](RunConfig& c) -> std::size_t& { return (c.*train).batch_size; }));
  f.push_back(double_field(section, "sigma", [train](RunConfig& c) -> double& { return (c.*train).sigma; }));
  f.push_back({section, "gradient_clip_norm",
               [train](RunConfig& c, const std::string& v) {
                 if (v == "none") {
                   (c.*train).gradient_clip_norm.reset();
                 } else {
                   (c.*train).gradient_clip_norm = to_double(v);
                 }
               },
               [train](const RunConfig& c) {
                 return (c.*train).gradient_clip_norm ? fmt(*(c.*train).gradient_clip_norm) : std::string("none");
               }});
  f.push_back(count_field(section, "checkpoint_every",
                          [train](RunConfig& c) -> std::size_t& { return (c.*train).checkpoint_every; }));
}

const std::vector<Field>& fields() {
  static const std::vector<Field> all = [] {
    std::vector<Field> f;
    f.push_back(string_field("run", "task", &RunConfig::task));
    f.push_back(count_field("run", "seed", [](RunConfig& c) -> std::uint64_t& { return c.seed; }));
    f.push_back(string_field("run", "output_dir", &RunConfig::output_dir));

    f.push_back(string_field("data", "synthetic", &RunConfig::synthetic));
    f.push_back(string_field("data", "path", &RunConfig::data_path));
    f.push_back(count_field("data", "n_train", [](RunConfig& c) -> std::size_t& { return c.n_train; }));
    f.push_back(count_field("data", "n_held_out", [](RunConfig& c) -> std::size_t& { return c.n_held_out; }));

    f.push_back(string_field("base", "checkpoint", &RunConfig::base_checkpoint));
    arch_fields(f, "base", &RunConfig::base_arch);
    train_fields(f, "base", &RunConfig::base_train);

    f.push_back(string_field("measurement", "kind", &RunConfig::measurement));
    f.push_back({"measurement", "indices",
                 [](RunConfig& c, const std::string& v) {
                   c.indices.clear();
                   for (const std::string& s : split_list(v)) c.indices.push_back(to_u64(s));
                 },
                 [](const RunConfig& c) { return join(c.indices, size_str); }});
    f.push_back(string_field("measurement", "mask_file", &RunConfig::mask_file));
    f.push_back(count_field("measurement", "num_measurements", [](RunConfig& c) -> std::size_t& { return c.num_measurements; }));
    f.push_back(count_field("measurement", "op_seed", [](RunConfig& c) -> std::uint64_t& { return c.op_seed; }));
    f.push_back(double_field("measurement", "noise_sigma", [](RunConfig& c) -> double& { return c.noise_sigma; }));
    f.push_back({"measurement", "y",
                 [](RunConfig& c, const std::string& v) {
                   c.y.clear();
                   for (const std::string& s : split_list(v)) c.y.push_back(to_double(s));
                 },
                 [](const RunConfig& c) { return join(c.y, fmt); }});
    f.push_back(count_field("measurement", "observation_index",
                            [](RunConfig& c) -> std::size_t& { return c.observation_index; }));

    train_fields(f, "infer", &RunConfig::infer);
    arch_fields(f, "infer", &RunConfig::pregen_arch);
    f.push_back(count_field("infer", "num_samples", [](RunConfig& c) -> std::size_t& { return c.num_samples; }));

    f.push_back(double_field("lmc", "step_size", [](RunConfig& c) -> double& { return c.lmc.step_size; }));
    f.push_back(count_field("lmc", "chain_length", [](RunConfig& c) -> std::size_t& { return c.lmc.chain_length; }));
    f.push_back(count_field("lmc", "burn_in", [](RunConfig& c) -> std::size_t& { return c.lmc.burn_in; }));
    f.push_back(count_field("lmc", "thinning", [](RunConfig& c) -> std::size_t& { return c.lmc.thinning; }));
    f.push_back(count_field("lmc", "num_chains", [](RunConfig& c) -> std::size_t& { return c.lmc.num_chains; }));
    f.push_back(double_field("lmc", "sigma", [](RunConfig& c) -> double& { return c.lmc.sigma; }));

    f.push_back(double_field("ivom", "learning_rate", [](RunConfig& c) -> double& { return c.ivom_learning_rate; }));
    f.push_back(count_field("ivom", "num_steps", [](RunConfig& c) -> std::size_t& { return c.ivom_steps; }));
    f.push_back(double_field("csgm", "learning_rate", [](RunConfig& c) -> double& { return c.csgm_learning_rate; }));
    f.push_back(count_field("csgm", "num_steps", [](RunConfig& c) -> std::size_t& { return c.csgm_steps; }));
    f.push_back(double_field("csgm", "lambda", [](RunConfig& c) -> double& { return c.csgm_lambda; }));
    f.push_back(count_field("csgm", "restarts", [](RunConfig& c) -> std::size_t& { return c.csgm_restarts; }));

    train_fields(f, "amortize", &RunConfig::amortize);
    arch_fields(f, "amortize", &RunConfig::amortize_arch);
    f.push_back(string_field("amortize", "checkpoint", &RunConfig::amortized_checkpoint));

    f.push_back(string_field("eval", "samples", &RunConfig::samples));
    f.push_back(count_field("eval", "bins", [](RunConfig& c) -> std::size_t& { return c.bins; }));
    f.push_back(count_field("eval", "coordinate", [](RunConfig& c) -> std::size_t& { return c.coordinate; }));

    f.push_back({"sweep", "sigmas",
                 [](RunConfig& c, const std::string& v) {
                   c.sigmas.clear();
                   for (const std::string& s : split_list(v)) c.sigmas.push_back(to_double(s));
                 },
                 [](const RunConfig& c) { return join(c.sigmas, fmt); }});

    f.push_back(string_field("sat", "dimacs", &RunConfig::dimacs));
    f.push_back(double_field("sat", "eps", [](RunConfig& c) -> double& { return c.sat_eps; }));
    f.push_back(double_field("sat", "M", [](RunConfig& c) -> double& { return c.sat_scale; }));
    f.push_back(double_field("sat", "tau", [](RunConfig& c) -> double& { return c.sat_tau; }));
    f.push_back(count_field("sat", "budget", [](RunConfig& c) -> std::size_t& { return c.sat_budget; }));
    return f;
  }();
  return all;
}

const Field& find_field(const std::string& section, const std::string& key) {
  for (const Field& f : fields()) {
    if (f.section == section && f.key == key) return f;
  }
  throw ConfigError("unknown config key [" + section + "] " + key);
}

void set_field(RunConfig& config, const std::string& section, const std::string& key, const std::string& value) {
  const Field& f = find_field(section, key);
  try {
    f.set(config, trim(value));
  } catch (const std::exception& e) {
    throw ConfigError("[" + section + "] " + key + ": cannot parse '" + trim(value) + "'");
  }
}

[[noreturn]] void field_error(const std::string& section, const std::string& key, const std::string& message) {
  throw ConfigError("[" + section + "] " + key + ": " + message);
}

void require_file(const std::string& section, const std::string& key, const std::string& path) {
  if (!std::filesystem::is_regular_file(path)) field_error(section, key, "file '" + path + "' does not exist");
}

void check_train(const std::string& section, const TrainConfig& t, bool needs_sigma) {
  if (!(t.learning_rate > 0.0) || !std::isfinite(t.learning_rate)) field_error(section, "learning_rate", "must be positive");
  if (t.batch_size == 0) field_error(section, "batch_size", "must be at least 1");
  if (needs_sigma && (!(t.sigma > 0.0) || !std::isfinite(t.sigma))) field_error(section, "sigma", "must be positive");
  if (t.gradient_clip_norm && !(*t.gradient_clip_norm > 0.0)) field_error(section, "gradient_clip_norm", "must be positive");
}

void check_arch(const std::string& section, const FlowArch& a) {
  if (a.num_couplings == 0) field_error(section, "num_couplings", "must be at least 1");
  for (std::size_t w : a.hidden) {
    if (w == 0) field_error(section, "hidden", "widths must be positive");
  }
}

}  // namespace

FlowSpec FlowArch::spec(std::size_t dim, std::size_t context_width) const {
  return FlowSpec{.dim = dim, .num_couplings = num_couplings, .hidden = hidden, .kind = kind, .context_width = context_width};
}

std::string RunConfig::resolved_base_checkpoint() const {
  return base_checkpoint.empty() ? output_dir + "/base.ckpt" : base_checkpoint;
}

std::string RunConfig::resolved_amortized_checkpoint() const {
  return amortized_checkpoint.empty() ? output_dir + "/amortized.ckpt" : amortized_checkpoint;
}

std::string RunConfig::resolved_samples() const { return samples.empty() ? output_dir + "/samples.flws" : samples; }

std::string RunConfig::resolved_measurement() const {
  if (!measurement.empty()) return measurement;
  if (task == "cs") return "gaussian";
  if (task == "sr2x") return "downsample2x";
  if (task == "grayscale") return "grayscale";
  return "mask";
}

RunConfig parse_config(std::string_view text) {
  pt::ptree tree;
  std::istringstream in{std::string(text)};
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("config: " + e.message() + " at line " + std::to_string(e.line()));
  }
  RunConfig config;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) {
      throw ConfigError("config: key '" + section + "' must be inside a [section]");
    }
    for (const auto& [key, value] : body) set_field(config, section, key, value.data());
  }
  return config;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config(buffer.str());
}

void apply_overrides(RunConfig& config, const std::vector<std::string>& overrides) {
  for (const std::string& o : overrides) {
    const auto eq = o.find('=');
    const auto dot = o.find('.');
    if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
      throw ConfigError("override '" + o + "' is not section.key=value");
    }
    set_field(config, trim(o.substr(0, dot)), trim(o.substr(dot + 1, eq - dot - 1)), o.substr(eq + 1));
  }
}

std::string to_ini(const RunConfig& config) {
  std::string out;
  std::string section;
  for (const Field& f : fields()) {
    if (f.section != section) {
      out += (section.empty() ? "[" : "\n[") + f.section + "]\n";
      section = f.section;
    }
    out += f.key + " = " + f.get(config) + "\n";
  }
  return out;
}

void validate_config(const RunConfig& c, std::string_view command) {
  static const std::vector<std::string> tasks{"inpaint", "cs", "sr2x", "grayscale", "toy2d", "sat"};
  if (std::find(tasks.begin(), tasks.end(), c.task) == tasks.end()) field_error("run", "task", "unknown task '" + c.task + "'");
  if (c.output_dir.empty()) field_error("run", "output_dir", "must not be empty");

  if (command == "sat-demo") {
    if (c.dimacs.empty()) field_error("sat", "dimacs", "required for sat-demo");
    require_file("sat", "dimacs", c.dimacs);
    if (!(c.sat_eps > 0.0 && c.sat_eps < 1.0 / 3.0)) field_error("sat", "eps", "must lie in (0, 1/3)");
    if (c.sat_scale < 0.0) field_error("sat", "M", "must be positive, or 0 for the default");
    if (!(c.sat_tau > 0.0)) field_error("sat", "tau", "must be positive");
    return;
  }

  if (!c.data_path.empty()) {
    require_file("data", "path", c.data_path);
  } else {
    const auto& kinds = synth_dataset_kinds();
    if (std::find(kinds.begin(), kinds.end(), c.synthetic) == kinds.end()) {
      field_error("data", "synthetic", "unknown dataset '" + c.synthetic + "'");
    }
  }
  if (command == "train-base") {
    if (c.n_train == 0) field_error("data", "n_train", "must be at least 1");
    check_arch("base", c.base_arch);
    check_train("base", c.base_train, false);
    return;
  }
  if (command != "eval") require_file("base", "checkpoint", c.resolved_base_checkpoint());

  const std::string m = c.resolved_measurement();
  if (m != "mask" && m != "gaussian" && m != "downsample2x" && m != "grayscale") {
    field_error("measurement", "kind", "unknown measurement '" + m + "'");
  }
  if (m == "mask") {
    if (c.indices.empty() && c.mask_file.empty()) field_error("measurement", "indices", "a mask needs indices or mask_file");
    if (!c.mask_file.empty()) require_file("measurement", "mask_file", c.mask_file);
  }
  if (m == "gaussian" && c.num_measurements == 0) field_error("measurement", "num_measurements", "must be at least 1");
  if (c.noise_sigma < 0.0) field_error("measurement", "noise_sigma", "must be non-negative");
  if (c.y.empty() && c.n_held_out == 0) field_error("data", "n_held_out", "needed to pick a ground truth when y is empty");
  if (c.y.empty() && c.observation_index >= c.n_held_out && c.data_path.empty()) {
    field_error("measurement", "observation_index", "must be below n_held_out");
  }

  if (command == "infer" || command == "sigma-sweep") {
    check_train("infer", c.infer, true);
    check_arch("infer", c.pregen_arch);
    if (c.num_samples == 0) field_error("infer", "num_samples", "must be at least 1");
  }
  if (command == "sigma-sweep") {
    if (c.sigmas.empty()) field_error("sweep", "sigmas", "must list at least one value");
    for (double s : c.sigmas) {
      if (!(s > 0.0)) field_error("sweep", "sigmas", "values must be positive");
    }
  }
  if (command == "lmc") {
    try {
      c.lmc.validate();
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("[lmc] ") + e.what());
    }
  }
  if (command == "ivom" && !(c.ivom_learning_rate > 0.0)) field_error("ivom", "learning_rate", "must be positive");
  if (command == "csgm") {
    if (!(c.csgm_learning_rate > 0.0)) field_error("csgm", "learning_rate", "must be positive");
    if (c.csgm_restarts == 0) field_error("csgm", "restarts", "must be at least 1");
    if (c.csgm_lambda < 0.0) field_error("csgm", "lambda", "must be non-negative");
  }
  if (command == "amortize" || command == "amortized-infer") {
    if (m != "mask") field_error("measurement", "kind", "amortization supports mask measurements only");
    check_train("amortize", c.amortize, true);
    check_arch("amortize", c.amortize_arch);
  }
  if (command == "amortized-infer") require_file("amortize", "checkpoint", c.resolved_amortized_checkpoint());
  if (command == "eval") {
    require_file("eval", "samples", c.resolved_samples());
    if (c.bins < 2) field_error("eval", "bins", "must be at least 2");
  }
}

}  // namespace cflow
