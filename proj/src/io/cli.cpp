#include "cflow/cli.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"

#include "binary.hpp"
#include "cflow/baselines.hpp"
#include "cflow/checkpoint.hpp"
#include "cflow/composed.hpp"
#include "cflow/error.hpp"
#include "cflow/estimators.hpp"
#include "cflow/rng.hpp"
#include "cflow/satgadget.hpp"
#include "cflow/training.hpp"

namespace cflow {

namespace fs = std::filesystem;

namespace {

using Metrics = std::vector<std::pair<std::string, double>>;

struct RunContext {
  std::string command;
  RunConfig config;
  std::vector<std::string> artifacts;  // relative to output_dir

  std::string path(const std::string& name) const { return config.output_dir + "/" + name; }
  std::string add(const std::string& name) {
    if (std::find(artifacts.begin(), artifacts.end(), name) == artifacts.end()) artifacts.push_back(name);
    return path(name);
  }
};

void write_text(const std::string& path, const std::string& text) { write_file_bytes(path, text); }

void write_metrics(RunContext& ctx, const std::string& name, const Metrics& metrics) {
  std::ostringstream out;
  out.precision(17);
  out << "metric,value\n";
  for (const auto& [key, value] : metrics) out << key << ',' << value << '\n';
  write_text(ctx.add(name), out.str());
}

void write_trace(RunContext& ctx, const TrainTrace& trace, const std::string& name = "trace.csv") {
  std::ostringstream out;
  trace.write_csv(out);
  write_text(ctx.add(name), out.str());
}

CheckpointFn periodic_checkpoint(RunContext& ctx, const std::string& stem, ModelKind kind) {
  return [&ctx, stem, kind](std::size_t step, const FlowModel& model) {
    save_checkpoint(model, kind, ctx.add(stem + "_step" + std::to_string(step) + ".ckpt"));
  };
}

double mean_residual(const Observation& obs, const Tensor& xs) {
  const Tensor ax = obs.op.apply(xs);
  const std::size_t m = obs.y_star.size();
  double acc = 0.0;
  for (std::size_t r = 0; r < ax.rows(); ++r) {
    for (std::size_t c = 0; c < m; ++c) acc += std::pow(ax.at(r, c) - obs.y_star[c], 2);
  }
  return acc / static_cast<double>(ax.rows());
}

TrainConfig seeded(TrainConfig t, std::uint64_t seed) {
  t.seed = seed;
  return t;
}

std::string fixed(double v, int digits = 4) {
  std::ostringstream out;
  out << std::setprecision(digits) << v;
  return out.str();
}

std::string cmd_train_base(RunContext& ctx) {
  const RunConfig& c = ctx.config;
  const auto [train, held] = load_run_data(c);
  Rng init = Rng::stream(c.seed, "base-init");
  FlowModel fresh = FlowModel::create(c.base_arch.spec(train.dim()), init);
  const double held_before = held.size() ? nll_per_dim(fresh, held.samples) : NAN;
  CheckpointFn cb;
  if (c.base_train.checkpoint_every > 0) cb = periodic_checkpoint(ctx, "base", ModelKind::kBase);
  TrainConfig tc = seeded(c.base_train, c.seed);
  SviResult result = train_base_mle(std::move(fresh), train.samples, tc, cb);
  const std::string ckpt = c.base_checkpoint.empty() ? ctx.add("base.ckpt") : c.base_checkpoint;
  save_checkpoint(result.pre_generator, ModelKind::kBase, ckpt);
  write_trace(ctx, result.trace);
  Metrics m{{"train_nll_per_dim", nll_per_dim(result.pre_generator, train.samples)}};
  if (held.size()) {
    m.emplace_back("held_out_nll_per_dim_initial", held_before);
    m.emplace_back("held_out_nll_per_dim", nll_per_dim(result.pre_generator, held.samples));
  }
  write_metrics(ctx, "metrics.csv", m);
  std::string line = "train-base: " + std::to_string(tc.num_steps) + " steps, train nll/dim " + fixed(m[0].second);
  if (held.size()) line += ", held-out nll/dim " + fixed(held_before) + " -> " + fixed(m.back().second);
  return line + ", wrote " + ckpt;
}

struct Problem {
  Dataset train;
  Dataset held;
  FlowModel base;
  Observation obs;
};

Problem load_problem(const RunConfig& c) {
  auto [train, held] = load_run_data(c);
  FlowModel base = load_checkpoint(c.resolved_base_checkpoint(), ModelKind::kBase);
  if (base.dim() != train.dim()) {
    throw ConfigError("[base] checkpoint: model dimension " + std::to_string(base.dim()) + " does not match data dimension " +
                      std::to_string(train.dim()));
  }
  const MeasurementOp op = build_measurement(c, train);
  Observation obs = build_observation(c, op, held);
  return {std::move(train), std::move(held), std::move(base), std::move(obs)};
}

Metrics sample_metrics(const Observation& obs, const SampleSet& set) {
  Metrics m{{"num_samples", static_cast<double>(set.size())}, {"mean_residual", mean_residual(obs, set.samples)}};
  if (set.size() >= 2) m.emplace_back("diversity", diversity(set));
  if (obs.ground_truth) {
    const MmseDecomposition dec = mmse_decomposition(set, *obs.ground_truth);
    m.emplace_back("mmse_mse", dec.mmse_mse);
    m.emplace_back("mean_sample_mse", dec.mean_sample_mse);
    m.emplace_back("mean_variance", dec.mean_variance);
    m.emplace_back("decomposition_residual", dec.residual());
    m.emplace_back("mmse_psnr", psnr(mmse_estimate(set), *obs.ground_truth));
  }
  return m;
}

std::string cmd_infer(RunContext& ctx) {
  const RunConfig& c = ctx.config;
  Problem p = load_problem(c);
  CheckpointFn cb;
  if (c.infer.checkpoint_every > 0) cb = periodic_checkpoint(ctx, "pregen", ModelKind::kPregen);
  const TrainConfig tc = seeded(c.infer, c.seed);
  SviResult result = train_svi(p.base, p.obs, tc, c.pregen_arch.spec(p.base.dim()), cb);
  save_checkpoint(result.pre_generator, ModelKind::kPregen, ctx.add("pregen.ckpt"));
  write_trace(ctx, result.trace);
  const ComposedSampler cs(result.pre_generator, p.base);
  Rng rng = Rng::stream(c.seed, "infer-samples");
  const SampleSet set(composed_sample(cs, c.num_samples, rng).x, Provenance::kSvi, c.seed);
  save_sample_set(set, ctx.add("samples.flws"));
  Metrics m = sample_metrics(p.obs, set);
  if (!result.trace.records.empty()) m.emplace_back("final_loss", result.trace.records.back().total);
  write_metrics(ctx, "metrics.csv", m);
  return "infer: " + std::to_string(tc.num_steps) + " steps, " + std::to_string(set.size()) +
         " samples, mean residual " + fixed(m[1].second) + ", wrote " + ctx.path("samples.flws");
}

std::string cmd_lmc(RunContext& ctx) {
  const RunConfig& c = ctx.config;
  Problem p = load_problem(c);
  LmcConfig lc = c.lmc;
  lc.seed = c.seed;
  const Chain chain = lmc_sample(p.base, &p.obs, lc);
  std::ostringstream out;
  chain.write(out);
  write_text(ctx.add("chain.csv"), out.str());
  const SampleSet set(chain_samples(p.base, chain), Provenance::kLmc, c.seed);
  save_sample_set(set, ctx.add("samples.flws"));
  write_metrics(ctx, "metrics.csv", sample_metrics(p.obs, set));
  return "lmc: " + std::to_string(lc.num_chains) + " chains x " + std::to_string(lc.chain_length) + " steps, " +
         std::to_string(set.size()) + " retained states, wrote " + ctx.path("samples.flws");
}

std::string write_estimate(RunContext& ctx, const std::string& name, const Observation& obs, const LatentFit& fit,
                           Metrics extra) {
  std::ostringstream out;
  out.precision(17);
  for (std::size_t i = 0; i < fit.x.size(); ++i) out << (i ? "," : "") << fit.x[i];
  out << '\n';
  write_text(ctx.add("estimate.csv"), out.str());
  Metrics m{{"objective", fit.objective}, {"residual", mean_residual(obs, fit.x.reshaped(Shape{1, fit.x.size()}))}};
  if (obs.ground_truth) {
    m.emplace_back("mse", mse(fit.x, *obs.ground_truth));
    m.emplace_back("psnr", psnr(fit.x, *obs.ground_truth));
  }
  m.insert(m.end(), extra.begin(), extra.end());
  write_metrics(ctx, "metrics.csv", m);
  return name + ": objective " + fixed(fit.objective) + ", wrote " + ctx.path("estimate.csv");
}

std::string cmd_ivom(RunContext& ctx) {
  const RunConfig& c = ctx.config;
  Problem p = load_problem(c);
  const LatentFit fit = ivom_estimate(p.base, p.obs, c.ivom_learning_rate, c.ivom_steps, c.seed);
  return write_estimate(ctx, "ivom", p.obs, fit, {});
}

std::string cmd_csgm(RunContext& ctx) {
  const RunConfig& c = ctx.config;
  Problem p = load_problem(c);
  const CsgmResult r = csgm_estimate(p.base, p.obs, c.csgm_learning_rate, c.csgm_steps, c.csgm_lambda,
                                     c.csgm_restarts, c.seed);
  Metrics extra;
  for (std::size_t i = 0; i < r.restart_objectives.size(); ++i) {
    extra.emplace_back("restart_" + std::to_string(i) + "_objective", r.restart_objectives[i]);
  }
  return write_estimate(ctx, "csgm", p.obs, r.best, extra);
}

std::string cmd_amortize(RunContext& ctx) {
  const RunConfig& c = ctx.config;
  Problem p = load_problem(c);
  const std::size_t d = p.base.dim();
  Rng init = Rng::stream(c.seed, "amortize-init");
  FlowModel cond = FlowModel::create(c.amortize_arch.spec(d, 2 * d), init);
  const MeasurementOp op = p.obs.op;
  const Tensor& pool = p.train.samples;
  const double noise = c.noise_sigma;
  ObservationSampler sampler = [&op, &pool, noise](Rng& rng) {
    const std::size_t row = rng.below(pool.rows());
    const Tensor x = Tensor::vector({pool.row(row).begin(), pool.row(row).end()});
    return observe(op, x, noise, &rng);
  };
  CheckpointFn cb;
  if (c.amortize.checkpoint_every > 0) cb = periodic_checkpoint(ctx, "amortized", ModelKind::kConditional);
  const TrainConfig tc = seeded(c.amortize, c.seed);
  SviResult result = train_amortized(p.base, std::move(cond), sampler, tc, cb);
  const std::string ckpt = c.amortized_checkpoint.empty() ? ctx.add("amortized.ckpt") : c.amortized_checkpoint;
  save_checkpoint(result.pre_generator, ModelKind::kConditional, ckpt);
  write_trace(ctx, result.trace);
  Rng eps_rng = Rng::stream(c.seed, "amortize-eval");
  const Tensor eps = eps_rng.normal_tensor(Shape{c.amortize.batch_size, d});
  const LossBreakdown loss = amortized_loss(p.base, result.pre_generator, p.obs, SmoothingSpec(c.amortize.sigma), eps);
  write_metrics(ctx, "metrics.csv", {{"observation_loss", loss.total}, {"observation_kl", loss.kl_term},
                                     {"observation_penalty", loss.penalty_term}});
  return "amortize: " + std::to_string(tc.num_steps) + " steps, loss on the configured observation " +
         fixed(loss.total) + ", wrote " + ckpt;
}

std::string cmd_amortized_infer(RunContext& ctx) {
  const RunConfig& c = ctx.config;
  Problem p = load_problem(c);
  const FlowModel cond = load_checkpoint(c.resolved_amortized_checkpoint(), ModelKind::kConditional);
  if (cond.dim() != p.base.dim() || cond.context_width() != 2 * p.base.dim()) {
    throw ConfigError("[amortize] checkpoint: conditional model does not match the base");
  }
  Rng rng = Rng::stream(c.seed, "amortized-samples");
  const auto start = std::chrono::steady_clock::now();
  const ComposedSamples samples = amortized_sample(p.base, cond, p.obs, c.num_samples, rng);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const SampleSet set(samples.x, Provenance::kAmortized, c.seed);
  save_sample_set(set, ctx.add("samples.flws"));
  write_metrics(ctx, "metrics.csv", sample_metrics(p.obs, set));
  return "amortized-infer: " + std::to_string(set.size()) + " samples in " + fixed(seconds, 3) + " s, wrote " +
         ctx.path("samples.flws");
}

std::string cmd_eval(RunContext& ctx) {
  const RunConfig& c = ctx.config;
  const auto [train, held] = load_run_data(c);
  const MeasurementOp op = build_measurement(c, train);
  const Observation obs = build_observation(c, op, held);
  const SampleSet set = load_sample_set(c.resolved_samples());
  if (set.dim() != train.dim()) throw ConfigError("[eval] samples: dimension does not match the data");
  if (c.coordinate >= set.dim()) throw ConfigError("[eval] coordinate: out of range");
  Metrics m = sample_metrics(obs, set);
  m.insert(m.begin(), {"provenance", static_cast<double>(set.provenance)});
  write_metrics(ctx, "eval.csv", m);
  std::ostringstream marginal;
  pixel_marginal(set, c.coordinate, c.bins).write(marginal);
  write_text(ctx.add("marginal.csv"), marginal.str());
  std::string line = "eval: " + std::to_string(set.size()) + " " + provenance_name(set.provenance) +
                     " samples, mean residual " + fixed(mean_residual(obs, set.samples));
  if (obs.ground_truth) line += ", mmse psnr " + fixed(psnr(mmse_estimate(set), *obs.ground_truth));
  return line;
}

std::string cmd_sigma_sweep(RunContext& ctx) {
  const RunConfig& c = ctx.config;
  Problem p = load_problem(c);
  std::ostringstream table;
  table.precision(17);
  table << "sigma,mean_residual,final_loss\n";
  std::map<double, double> residual;
  for (std::size_t i = 0; i < c.sigmas.size(); ++i) {
    TrainConfig tc = seeded(c.infer, c.seed);
    tc.sigma = c.sigmas[i];
    SviResult result = train_svi(p.base, p.obs, tc, c.pregen_arch.spec(p.base.dim()));
    const ComposedSampler cs(result.pre_generator, p.base);
    Rng rng = Rng::stream(c.seed, "sweep-samples", i);
    const Tensor xs = composed_sample(cs, c.num_samples, rng).x;
    const double r = mean_residual(p.obs, xs);
    residual[c.sigmas[i]] = r;
    table << c.sigmas[i] << ',' << r << ','
          << (result.trace.records.empty() ? NAN : result.trace.records.back().total) << '\n';
    write_trace(ctx, result.trace, "trace_sigma" + std::to_string(i) + ".csv");
  }
  write_text(ctx.add("sweep.csv"), table.str());
  std::string line = "sigma-sweep: " + std::to_string(c.sigmas.size()) + " values, wrote " + ctx.path("sweep.csv");
  if (residual.count(1.0) && residual.count(0.1) && residual.count(1e-3) && residual.count(1e-4)) {
    const double early = residual[1.0] - residual[0.1];
    const double late = residual[1e-3] - residual[1e-4];
    line += std::string(", plateau ") + (late < 0.1 * early ? "yes" : "no");
  }
  return line;
}

std::string cmd_sat_demo(RunContext& ctx) {
  const RunConfig& c = ctx.config;
  const CnfFormula formula = read_dimacs_file(c.dimacs);
  SatDemoConfig sc;
  sc.eps = c.sat_eps;
  sc.scale = c.sat_scale;
  sc.tau = c.sat_tau;
  sc.budget = c.sat_budget;
  Rng rng = Rng::stream(c.seed, "sat-demo");
  const SatDemoReport report = conditional_sat_demo(formula, sc, rng);
  std::ostringstream out;
  report.write(out);
  write_text(ctx.add("report.txt"), out.str());
  return "sat-demo: " + std::to_string(report.n_sat_corners) + " satisfying corners, accepted " +
         std::to_string(report.accepted) + ", success_fraction " + fixed(report.success_fraction) +
         (report.inconclusive ? " (inconclusive)" : "");
}

const std::map<std::string, std::pair<std::string, std::function<std::string(RunContext&)>>>& commands() {
  static const std::map<std::string, std::pair<std::string, std::function<std::string(RunContext&)>>> table{
      {"train-base", {"Fit a base flow by maximum likelihood", cmd_train_base}},
      {"infer", {"Fit a pre-generator to one observation and sample the posterior", cmd_infer}},
      {"lmc", {"Langevin sampling in the base latent space", cmd_lmc}},
      {"ivom", {"Point estimate by latent optimization", cmd_ivom}},
      {"csgm", {"Point estimate by regularised latent optimization with restarts", cmd_csgm}},
      {"amortize", {"Train a conditional pre-generator over an observation family", cmd_amortize}},
      {"amortized-infer", {"Zero-shot posterior samples from an amortized model", cmd_amortized_infer}},
      {"eval", {"Metrics and a pixel marginal for a sample set", cmd_eval}},
      {"sigma-sweep", {"Final measurement residual across smoothing levels", cmd_sigma_sweep}},
      {"sat-demo", {"Conditional sampling on the SAT gadget flow", cmd_sat_demo}},
  };
  return table;
}

}  // namespace

std::pair<Dataset, Dataset> load_run_data(const RunConfig& c) {
  if (!c.data_path.empty()) return split_held_out(load_image_dataset(c.data_path), c.n_held_out);
  return split_held_out(synth_dataset(c.synthetic, c.n_train + c.n_held_out, c.seed), c.n_held_out);
}

MeasurementOp build_measurement(const RunConfig& c, const Dataset& data) {
  const std::string kind = c.resolved_measurement();
  const std::size_t d = data.dim();
  try {
    if (kind == "mask") return MeasurementOp::mask(d, c.mask_file.empty() ? c.indices : read_mask_file(c.mask_file));
    if (kind == "gaussian") return MeasurementOp::gaussian(c.op_seed, c.num_measurements, d);
    if (!data.image) throw ConfigError(kind + " needs an image dataset");
    if (kind == "downsample2x") return MeasurementOp::downsample2x(*data.image);
    if (kind == "grayscale") return MeasurementOp::grayscale(*data.image);
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("[measurement] kind: ") + e.what());
  } catch (const Error& e) {
    throw ConfigError(std::string("[measurement] kind: ") + e.what());
  }
  throw ConfigError("[measurement] kind: unknown measurement '" + kind + "'");
}

Observation build_observation(const RunConfig& c, const MeasurementOp& op, const Dataset& held_out) {
  if (!c.y.empty()) {
    if (c.y.size() != op.output_dim()) {
      throw ConfigError("[measurement] y: has " + std::to_string(c.y.size()) + " values, the operator produces " +
                        std::to_string(op.output_dim()));
    }
    return Observation{Tensor::vector(c.y), op, std::nullopt, 0.0};
  }
  if (c.observation_index >= held_out.size()) {
    throw ConfigError("[measurement] observation_index: held-out set has " + std::to_string(held_out.size()) + " rows");
  }
  const auto row = held_out.samples.row(c.observation_index);
  Rng rng = Rng::stream(c.seed, "observation-noise", c.observation_index);
  return observe(op, Tensor::vector({row.begin(), row.end()}), c.noise_sigma, &rng);
}

OutputLock::OutputLock(std::string dir) : path_(std::move(dir) + "/.lock") {
  std::FILE* f = std::fopen(path_.c_str(), "wx");
  if (f == nullptr) {
    const std::string held = path_;
    path_.clear();
    throw Error("output directory is in use by another run (" + held + " exists)");
  }
  std::fclose(f);
}

OutputLock::~OutputLock() {
  if (!path_.empty()) std::remove(path_.c_str());
}

std::string render_manifest(const std::string& command, const RunConfig& config,
                            const std::vector<std::string>& artifacts) {
  const std::string ini = to_ini(config);
  std::ostringstream out;
  out << "command = " << command << '\n'
      << "config_hash = " << std::hex << std::setw(16) << std::setfill('0') << fnv1a64(ini) << std::dec << '\n'
      << "seed = " << config.seed << '\n'
      << "version = cflow " << kVersion << '\n'
      << "compiler = " << __VERSION__ << '\n'
#ifdef NDEBUG
      << "assertions = off\n"
#else
      << "assertions = on\n"
#endif
      << "\n[artifacts]\n";
  for (const std::string& name : artifacts) {
    const std::string bytes = read_file_bytes(config.output_dir + "/" + name);
    out << name << " = crc32:" << std::hex << std::setw(8) << std::setfill('0') << binary::crc32_of(bytes) << std::dec
        << " bytes:" << bytes.size() << '\n';
  }
  out << "\n# effective config\n" << ini;
  return out.str();
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Conditional sampling with composed normalizing flows", "cflow"};
  app.set_version_flag("--version", std::string("cflow ") + kVersion);
  app.require_subcommand(1);
  std::string config_path;
  std::vector<std::string> overrides;
  std::string output_dir;
  std::optional<std::uint64_t> seed;
  for (const auto& [name, entry] : commands()) {
    CLI::App* sub = app.add_subcommand(name, entry.first);
    sub->add_option("-c,--config", config_path, "INI run configuration")->required();
    sub->add_option("--set", overrides, "Override a config field, section.key=value");
    sub->add_option("-o,--output-dir", output_dir, "Overrides [run] output_dir");
    sub->add_option("--seed", seed, "Overrides [run] seed");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }
  const std::string command = app.get_subcommands().front()->get_name();

  RunContext ctx;
  ctx.command = command;
  try {
    ctx.config = load_config(config_path);
    apply_overrides(ctx.config, overrides);
    if (!output_dir.empty()) ctx.config.output_dir = output_dir;
    if (seed) ctx.config.seed = *seed;
    validate_config(ctx.config, command);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return 2;
  }

  try {
    fs::create_directories(ctx.config.output_dir);
    OutputLock lock(ctx.config.output_dir);
    std::string summary;
    try {
      summary = commands().at(command).second(ctx);
    } catch (const TrainingError& e) {
      std::ostringstream trace;
      e.trace().write_csv(trace);
      const std::string path = ctx.path("failed_trace.csv");
      write_text(path, trace.str());
      err << "error: " << e.what() << " (trace: " << path << ")\n";
      return 1;
    }
    write_text(ctx.path("manifest_" + command + ".txt"), render_manifest(command, ctx.config, ctx.artifacts));
    out << summary << '\n';
    return 0;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace cflow
