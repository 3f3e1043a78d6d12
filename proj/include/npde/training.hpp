#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "npde/conditioning.hpp"
#include "npde/datagen.hpp"
#include "npde/models.hpp"
#include "npde/rng.hpp"
#include "npde/tensor.hpp"

namespace npde {

struct TrainConfig {
  /// Peak learning rate; unset means default_lr_max(model family).
  std::optional<double> lr_max;
  double weight_decay = 1e-5;
  std::size_t epochs = 50;
  std::size_t batch = 32;
  /// Unset means 5% of the total optimizer steps.
  std::optional<std::size_t> warmup_steps;
  /// Optimizer steps per epoch; 0 sizes the epoch to cover the stride-1
  /// windows of the training split once.
  std::size_t steps_per_epoch = 0;
  /// Sampled time strides; dt = stride * dataset dt_save.
  std::vector<std::size_t> strides{1};
  /// Trailing fraction of trajectories held out for validation.
  double val_fraction = 0.1;
  std::size_t rollout_steps = 5;
  std::size_t eval_batch = 32;
  std::uint64_t seed = 0;

  /// Throws ConfigError naming the offending field.
  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

/// Per-family peak learning rate: attention variants train at 1e-4, the
/// rest at 2e-4.
double default_lr_max(Family family);

/// Linear warmup from 0 to lr_max, then cosine decay to 0 at total_steps.
double cosine_lr(std::size_t step, std::size_t warmup_steps, std::size_t total_steps,
                 double lr_max);

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// First and second moments per parameter plus the shared step counter.
struct AdamWState {
  std::vector<std::vector<double>> m, v;
  std::size_t step = 0;
};

/// theta -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta). Parameters
/// without a gradient buffer are treated as having a zero gradient.
template <typename T>
void adamw_step(std::vector<Tensor<T>>& params, AdamWState& state, double lr,
                const AdamWOptions& opts = {});

/// One training/evaluation window: history frames start..start+h-1 of a
/// trajectory and the target frame start+h-1+stride.
struct Window {
  std::size_t traj = 0;
  std::size_t start = 0;
  std::size_t stride = 1;
};

struct Batch {
  Tensor<float> inputs;   // [B, history*F, H, W], frames oldest first
  Tensor<float> targets;  // [B, F, H, W]
  ConditioningContext ctx;
  std::vector<Window> windows;
};

/// Valid (trajectory, start, stride) windows over a trajectory subset. Draws
/// weight each window by 1/(number of windows with its stride), so every
/// stride class is equally likely whatever its window count.
class WindowSampler {
 public:
  WindowSampler(const Dataset& ds, std::size_t history, const std::vector<std::size_t>& strides,
                std::vector<std::size_t> trajectories);

  std::size_t count(std::size_t stride) const;
  std::size_t total() const;
  Window draw(Rng& rng) const;

 private:
  std::vector<std::size_t> strides_;
  std::vector<std::vector<Window>> by_stride_;
};

/// Copies the windows' frames into a batch; the context carries
/// (stride * dt_save, forcing amplitude).
Batch assemble_batch(const Dataset& ds, std::size_t history, const std::vector<Window>& windows);

/// `batch` windows drawn from `sampler`.
Batch sample_batch(const Dataset& ds, const WindowSampler& sampler, std::size_t history,
                   std::size_t batch, Rng& rng);

/// Convenience form over every trajectory with cfg's strides and batch size.
Batch sample_batch(const Dataset& ds, const TrainConfig& cfg, std::size_t history, Rng& rng);

/// Splits trajectory indices into (train, validation): the last
/// floor(n * val_fraction) trajectories, at least one when n >= 2.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_trajectories(
    std::size_t n_traj, double val_fraction);

enum class EvalMode { onestep, rollout };

/// Maps a batch of history windows to the next frames. `rollout_step` counts
/// the predictions already appended to the window (0 for the first).
using Predictor = std::function<Tensor<float>(const Tensor<float>& inputs,
                                              const ConditioningContext& ctx,
                                              const std::vector<Window>& windows,
                                              std::size_t rollout_step)>;

struct EvalOptions {
  std::size_t history = 4;
  std::size_t rollout_steps = 5;
  std::size_t batch = 32;
};

/// Mean SMSE over every stride-1 window of the given trajectories. Rollout
/// mode feeds each prediction back (drop oldest frame, append prediction)
/// and sums the SMSE of all rollout_steps predictions.
double evaluate(const Predictor& predict, const Dataset& ds,
                const std::vector<std::size_t>& trajectories, EvalMode mode,
                const EvalOptions& opts);

double evaluate(const Model<float>& model, const Dataset& ds,
                const std::vector<std::size_t>& trajectories, EvalMode mode,
                std::size_t rollout_steps = 5, std::size_t batch = 32);

struct MetricsRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double lr = 0.0;
  double train_smse = 0.0;
  double val_onestep = 0.0;
  double val_rollout = 0.0;
};

struct TrainResult {
  std::vector<MetricsRecord> metrics;
  /// One-step SMSE over the training split before the first and after the
  /// last optimizer step.
  double initial_train_smse = 0.0;
  double final_train_smse = 0.0;
  std::size_t total_steps = 0;
  std::size_t warmup_steps = 0;
  double lr_max = 0.0;
  /// Parameters whose gradient stayed exactly zero for the whole first epoch.
  std::vector<std::string> dead_parameters;
};

/// Called after each epoch's metrics row is complete.
using EpochCallback = std::function<void(const MetricsRecord&)>;

/// Trains in place with SMSE, AdamW and the cosine schedule. Throws
/// NumericalError on a non-finite loss, naming the step, lr and gradient norm.
TrainResult train(Model<float>& model, const Dataset& ds, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

/// Header `epoch,step,lr,train_smse,val_onestep,val_rollout`, floats with 9
/// significant digits.
void write_metrics_csv(const std::vector<MetricsRecord>& rows, std::ostream& out);
std::string metrics_csv(const std::vector<MetricsRecord>& rows);

}  // namespace npde
