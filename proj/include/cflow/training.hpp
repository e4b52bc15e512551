#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <vector>

#include "cflow/error.hpp"
#include "cflow/flow.hpp"
#include "cflow/measurement.hpp"
#include "cflow/objective.hpp"

namespace cflow {

class Adam {
 public:
  explicit Adam(double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-8);

  /// One update. When clip_norm is set the gradients are rescaled so their
  /// global l2 norm is at most clip_norm. Returns the unclipped norm.
  double step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads,
              std::optional<double> clip_norm = std::nullopt);

  std::size_t step_count() const { return t_; }
  double learning_rate() const { return lr_; }

 private:
  double lr_, beta1_, beta2_, epsilon_;
  std::size_t t_ = 0;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
};

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t num_steps = 1000;
  std::size_t batch_size = 64;
  double sigma = 0.1;
  std::uint64_t seed = 0;
  std::optional<double> gradient_clip_norm = 100.0;
  std::size_t checkpoint_every = 0;  // 0 disables the callback

  void validate() const;
};

struct TraceRecord {
  std::size_t step = 0;
  double kl = 0.0;
  double penalty = 0.0;
  double total = 0.0;
  double grad_norm = 0.0;
};

struct TrainTrace {
  std::vector<TraceRecord> records;

  /// step,kl,penalty,total,grad_norm with a header line.
  void write_csv(std::ostream& out) const;
};

/// A step produced a non-finite loss. Carries the failing step and every
/// record completed before it.
class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, std::size_t step, TrainTrace trace)
      : Error(what), step_(step), trace_(std::move(trace)) {}
  std::size_t step() const { return step_; }
  const TrainTrace& trace() const { return trace_; }

 private:
  std::size_t step_;
  TrainTrace trace_;
};

/// Called every checkpoint_every steps (after the update) with the number of
/// completed steps and the current model.
using CheckpointFn = std::function<void(std::size_t, const FlowModel&)>;

struct SviResult {
  FlowModel pre_generator;
  TrainTrace trace;
};

/// Fits a fresh identity-start pre-generator to one observation by Adam on the
/// smoothed latent VI loss. eps batches come from the stream (seed, "svi-eps", step).
SviResult train_svi(const FlowModel& base, const Observation& obs, const TrainConfig& config,
                    const FlowSpec& pre_spec, const CheckpointFn& checkpoint = {});
SviResult train_svi(const FlowModel& base, const Observation& obs, const TrainConfig& config);

/// Same loop for Ambient VI: q starts as a copy of the base and is trained in
/// data space.
SviResult train_ambient_vi(const FlowModel& base, const Observation& obs, const TrainConfig& config);

/// Draws one observation per training step.
using ObservationSampler = std::function<Observation(Rng&)>;

/// Conditioning vector for a mask observation: y zero-filled to length d,
/// followed by the 0/1 mask (width 2d).
Tensor amortization_context(const Observation& obs);

/// Amortized training of a conditional pre-generator (context width 2d).
/// Each step samples a fresh observation from the stream
/// (seed, "amortized-obs", step) and an eps batch from (seed, "amortized-eps", step).
SviResult train_amortized(const FlowModel& base, FlowModel conditional_pre_generator,
                          const ObservationSampler& sampler, const TrainConfig& config,
                          const CheckpointFn& checkpoint = {});

/// Loss of an amortized model on one observation, same eps convention as svi_loss.
LossBreakdown amortized_loss(const FlowModel& base, const FlowModel& conditional_pre_generator,
                             const Observation& obs, const SmoothingSpec& smoothing, const Tensor& eps);

/// Zero-shot samples for a new observation.
ComposedSamples amortized_sample(const FlowModel& base, const FlowModel& conditional_pre_generator,
                                 const Observation& obs, std::size_t n, Rng& rng);

/// Maximum likelihood on a [N, d] dataset. Minibatches are drawn with
/// replacement from (seed, "mle-batch", step). The trace total is the
/// minibatch negative log-likelihood in nats per dimension.
SviResult train_base_mle(FlowModel flow, const Tensor& dataset, const TrainConfig& config,
                         const CheckpointFn& checkpoint = {});

/// Mean negative log-likelihood per dimension of a dataset.
double nll_per_dim(const FlowModel& flow, const Tensor& dataset);

}  // namespace cflow
