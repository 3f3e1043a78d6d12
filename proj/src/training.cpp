#include "npde/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <sstream>

#include "npde/error.hpp"
#include "npde/ops.hpp"

namespace npde {

void TrainConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ConfigError("train." + field + ": " + why);
  };
  if (lr_max && !(*lr_max >= 0.0 && std::isfinite(*lr_max))) fail("lr_max", "must be finite and >= 0");
  if (!(weight_decay >= 0.0)) fail("weight_decay", "must be >= 0");
  if (epochs == 0) fail("epochs", "must be at least 1");
  if (batch == 0) fail("batch", "must be at least 1");
  if (strides.empty()) fail("strides", "need at least one stride");
  for (std::size_t s : strides) {
    if (s == 0) fail("strides", "strides must be positive");
  }
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) fail("val_fraction", "must lie in [0, 1)");
  if (rollout_steps == 0) fail("rollout_steps", "must be at least 1");
  if (eval_batch == 0) fail("eval_batch", "must be at least 1");
}

double default_lr_max(Family family) {
  return family == Family::unet_att ? 1e-4 : 2e-4;
}

double cosine_lr(std::size_t step, std::size_t warmup_steps, std::size_t total_steps,
                 double lr_max) {
  if (step > total_steps) {
    throw UsageError("cosine_lr: step " + std::to_string(step) + " exceeds total_steps " +
                     std::to_string(total_steps));
  }
  if (warmup_steps >= total_steps) {
    throw UsageError("cosine_lr: warmup_steps must be smaller than total_steps");
  }
  if (step < warmup_steps) {
    return lr_max * static_cast<double>(step) / static_cast<double>(warmup_steps);
  }
  const double progress =
      static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps);
  return lr_max * 0.5 * (1.0 + std::cos(M_PI * progress));
}

template <typename T>
void adamw_step(std::vector<Tensor<T>>& params, AdamWState& state, double lr,
                const AdamWOptions& opts) {
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(params[i].numel(), 0.0);
      state.v[i].assign(params[i].numel(), 0.0);
    }
  }
  if (state.m.size() != params.size()) {
    throw UsageError("adamw_step: optimizer state tracks " + std::to_string(state.m.size()) +
                     " tensors, got " + std::to_string(params.size()));
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(opts.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(opts.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (m.size() != p.numel()) throw UsageError("adamw_step: parameter size changed");
    const bool has = p.has_grad();
    const auto g = p.grad();
    T* x = p.raw();
    for (std::size_t k = 0; k < m.size(); ++k) {
      const double gk = has ? static_cast<double>(g[k]) : 0.0;
      m[k] = opts.beta1 * m[k] + (1.0 - opts.beta1) * gk;
      v[k] = opts.beta2 * v[k] + (1.0 - opts.beta2) * gk * gk;
      const double mh = m[k] / bc1, vh = v[k] / bc2;
      const double xk = static_cast<double>(x[k]);
      x[k] = static_cast<T>(xk - lr * (mh / (std::sqrt(vh) + opts.eps) + opts.weight_decay * xk));
    }
  }
}

template void adamw_step<float>(std::vector<Tensor<float>>&, AdamWState&, double,
                                const AdamWOptions&);
template void adamw_step<double>(std::vector<Tensor<double>>&, AdamWState&, double,
                                 const AdamWOptions&);

// Sampling -------------------------------------------------------------------

WindowSampler::WindowSampler(const Dataset& ds, std::size_t history,
                             const std::vector<std::size_t>& strides,
                             std::vector<std::size_t> trajectories)
    : strides_(strides) {
  if (history == 0) throw ConfigError("model.history: must be at least 1");
  if (trajectories.empty()) throw ConfigError("train: no trajectories to sample from");
  by_stride_.resize(strides_.size());
  for (std::size_t k = 0; k < strides_.size(); ++k) {
    const std::size_t s = strides_[k];
    if (s == 0) throw ConfigError("train.strides: strides must be positive");
    if (history + s > ds.n_steps) {
      throw ConfigError("train.strides: stride " + std::to_string(s) + " with history " +
                        std::to_string(history) + " needs " + std::to_string(history + s) +
                        " snapshots per trajectory, dataset has " + std::to_string(ds.n_steps));
    }
    for (std::size_t t : trajectories) {
      if (t >= ds.n_traj) throw UsageError("trajectory index out of range");
      for (std::size_t start = 0; start + history + s <= ds.n_steps; ++start) {
        by_stride_[k].push_back({t, start, s});
      }
    }
  }
}

std::size_t WindowSampler::count(std::size_t stride) const {
  for (std::size_t k = 0; k < strides_.size(); ++k) {
    if (strides_[k] == stride) return by_stride_[k].size();
  }
  return 0;
}

std::size_t WindowSampler::total() const {
  std::size_t n = 0;
  for (const auto& w : by_stride_) n += w.size();
  return n;
}

Window WindowSampler::draw(Rng& rng) const {
  // Window weight 1/count(stride) makes each stride class equally likely;
  // drawing the class first and then a window within it is the same law.
  const auto& pool = by_stride_[rng.below(by_stride_.size())];
  return pool[rng.below(pool.size())];
}

Batch assemble_batch(const Dataset& ds, std::size_t history, const std::vector<Window>& windows) {
  const std::size_t B = windows.size(), F = ds.n_fields, H = ds.ny, W = ds.nx;
  const std::size_t frame = ds.frame_size();
  Batch b;
  b.inputs = Tensor<float>({B, history * F, H, W});
  b.targets = Tensor<float>({B, F, H, W});
  b.ctx.dt.resize(B);
  b.ctx.force.resize(B);
  b.windows = windows;
  for (std::size_t i = 0; i < B; ++i) {
    const Window& w = windows[i];
    const std::size_t target = w.start + history - 1 + w.stride;
    if (w.traj >= ds.n_traj || target >= ds.n_steps) throw UsageError("window outside the dataset");
    for (std::size_t h = 0; h < history; ++h) {
      const float* src = ds.frame(w.traj, w.start + h);
      std::copy(src, src + frame, b.inputs.raw() + (i * history + h) * frame);
    }
    const float* src = ds.frame(w.traj, target);
    std::copy(src, src + frame, b.targets.raw() + i * frame);
    b.ctx.dt[i] = static_cast<double>(w.stride) * ds.dt_save;
    b.ctx.force[i] = ds.param_dim > 0 ? ds.force(w.traj) : 0.0;
  }
  return b;
}

Batch sample_batch(const Dataset& ds, const WindowSampler& sampler, std::size_t history,
                   std::size_t batch, Rng& rng) {
  std::vector<Window> windows(batch);
  for (auto& w : windows) w = sampler.draw(rng);
  return assemble_batch(ds, history, windows);
}

Batch sample_batch(const Dataset& ds, const TrainConfig& cfg, std::size_t history, Rng& rng) {
  std::vector<std::size_t> all(ds.n_traj);
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  WindowSampler sampler(ds, history, cfg.strides, all);
  return sample_batch(ds, sampler, history, cfg.batch, rng);
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_trajectories(
    std::size_t n_traj, double val_fraction) {
  std::size_t n_val = static_cast<std::size_t>(std::floor(static_cast<double>(n_traj) * val_fraction));
  if (n_traj >= 2 && val_fraction > 0.0) n_val = std::max<std::size_t>(n_val, 1);
  n_val = std::min(n_val, n_traj > 0 ? n_traj - 1 : 0);
  std::vector<std::size_t> train, val;
  for (std::size_t i = 0; i < n_traj; ++i) (i < n_traj - n_val ? train : val).push_back(i);
  return {train, val};
}

// Evaluation -----------------------------------------------------------------

double evaluate(const Predictor& predict, const Dataset& ds,
                const std::vector<std::size_t>& trajectories, EvalMode mode,
                const EvalOptions& opts) {
  const std::size_t horizon = mode == EvalMode::rollout ? opts.rollout_steps : 1;
  if (horizon == 0) throw ConfigError("train.rollout_steps: must be at least 1");
  if (opts.history + horizon > ds.n_steps) {
    throw ConfigError("evaluation needs history + " + std::to_string(horizon) + " = " +
                      std::to_string(opts.history + horizon) +
                      " snapshots per trajectory, dataset has " + std::to_string(ds.n_steps));
  }
  std::vector<Window> all;
  for (std::size_t t : trajectories) {
    if (t >= ds.n_traj) throw UsageError("trajectory index out of range");
    for (std::size_t start = 0; start + opts.history + horizon <= ds.n_steps; ++start) {
      all.push_back({t, start, 1});
    }
  }
  if (all.empty()) return std::nan("");

  NoGradGuard guard;
  const std::size_t frame = ds.frame_size();
  const std::size_t F = ds.n_fields;
  double total = 0.0;
  for (std::size_t lo = 0; lo < all.size(); lo += opts.batch) {
    const std::size_t hi = std::min(all.size(), lo + opts.batch);
    std::vector<Window> windows(all.begin() + lo, all.begin() + hi);
    Batch b = assemble_batch(ds, opts.history, windows);
    const std::size_t B = windows.size();
    Tensor<float> x = b.inputs;
    for (std::size_t k = 0; k < horizon; ++k) {
      Tensor<float> pred = predict(x, b.ctx, windows, k);
      if (pred.shape() != Shape{B, F, ds.ny, ds.nx}) {
        throw DimensionError("predictor returned " + shape_str(pred.shape()));
      }
      Tensor<float> target({B, F, ds.ny, ds.nx});
      for (std::size_t i = 0; i < B; ++i) {
        const float* src = ds.frame(windows[i].traj, windows[i].start + opts.history + k);
        std::copy(src, src + frame, target.raw() + i * frame);
      }
      total += static_cast<double>(smse_loss(pred, target).item()) * static_cast<double>(B);
      if (k + 1 < horizon) {
        Tensor<float> next(x.shape());
        for (std::size_t i = 0; i < B; ++i) {
          float* dst = next.raw() + i * opts.history * frame;
          const float* old = x.raw() + i * opts.history * frame;
          std::copy(old + frame, old + opts.history * frame, dst);
          std::copy(pred.raw() + i * frame, pred.raw() + (i + 1) * frame,
                    dst + (opts.history - 1) * frame);
        }
        x = next;
      }
    }
  }
  return total / static_cast<double>(all.size());
}

double evaluate(const Model<float>& model, const Dataset& ds,
                const std::vector<std::size_t>& trajectories, EvalMode mode,
                std::size_t rollout_steps, std::size_t batch) {
  const bool conditioned = model.spec().conditioning != ConditioningMode::none;
  Predictor p = [&](const Tensor<float>& x, const ConditioningContext& ctx,
                    const std::vector<Window>&, std::size_t) {
    return model.forward(x, conditioned ? &ctx : nullptr);
  };
  EvalOptions opts;
  opts.history = model.spec().history;
  opts.rollout_steps = rollout_steps;
  opts.batch = batch;
  return evaluate(p, ds, trajectories, mode, opts);
}

// Training -------------------------------------------------------------------

namespace {

void check_compatible(const ModelSpec& spec, const Dataset& ds) {
  if (spec.in_fields != ds.n_fields || spec.out_fields != ds.n_fields) {
    throw ConfigError("model.in_fields/out_fields: model maps " + std::to_string(spec.in_fields) +
                      " -> " + std::to_string(spec.out_fields) + " fields, dataset has " +
                      std::to_string(ds.n_fields));
  }
  const std::size_t d = spec.extent_divisor();
  if (ds.ny % d != 0 || ds.nx % d != 0) {
    throw ConfigError("model: dataset grid " + std::to_string(ds.ny) + "x" +
                      std::to_string(ds.nx) + " is not divisible by " + std::to_string(d));
  }
}

double grad_norm(const std::vector<Tensor<float>>& params) {
  double s = 0.0;
  for (const auto& p : params) {
    if (!p.has_grad()) continue;
    for (float g : p.grad()) s += static_cast<double>(g) * g;
  }
  return std::sqrt(s);
}

}  // namespace

TrainResult train(Model<float>& model, const Dataset& ds, const TrainConfig& cfg,
                  const EpochCallback& on_epoch) {
  cfg.validate();
  const ModelSpec& spec = model.spec();
  check_compatible(spec, ds);
  const std::size_t history = spec.history;
  const bool conditioned = spec.conditioning != ConditioningMode::none;

  const auto [train_idx, val_idx] = split_trajectories(ds.n_traj, cfg.val_fraction);
  WindowSampler sampler(ds, history, cfg.strides, train_idx);
  const std::size_t min_stride = *std::min_element(cfg.strides.begin(), cfg.strides.end());
  const std::size_t epoch_windows = sampler.count(min_stride);
  const std::size_t steps_per_epoch =
      cfg.steps_per_epoch > 0 ? cfg.steps_per_epoch
                              : std::max<std::size_t>(1, (epoch_windows + cfg.batch - 1) / cfg.batch);

  TrainResult result;
  result.total_steps = cfg.epochs * steps_per_epoch;
  result.warmup_steps = cfg.warmup_steps ? *cfg.warmup_steps : result.total_steps / 20;
  if (result.warmup_steps >= result.total_steps) {
    throw ConfigError("train.warmup_steps: " + std::to_string(result.warmup_steps) +
                      " must be smaller than the total step count " +
                      std::to_string(result.total_steps));
  }
  result.lr_max = cfg.lr_max ? *cfg.lr_max : default_lr_max(spec.family);

  const bool can_rollout = history + cfg.rollout_steps <= ds.n_steps;
  auto validate_now = [&](MetricsRecord& row) {
    row.val_onestep = val_idx.empty()
                          ? std::nan("")
                          : evaluate(model, ds, val_idx, EvalMode::onestep, 1, cfg.eval_batch);
    row.val_rollout = val_idx.empty() || !can_rollout
                          ? std::nan("")
                          : evaluate(model, ds, val_idx, EvalMode::rollout, cfg.rollout_steps,
                                     cfg.eval_batch);
  };

  std::vector<Tensor<float>> params;
  for (auto& [name, t] : model.parameters()) params.push_back(t);
  model.set_requires_grad(true);
  std::vector<bool> touched(params.size(), false);

  result.initial_train_smse = evaluate(model, ds, train_idx, EvalMode::onestep, 1, cfg.eval_batch);

  AdamWState state;
  AdamWOptions opt;
  opt.weight_decay = cfg.weight_decay;
  Rng rng(Rng::derive(cfg.seed, 0x7261696eULL));
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    double loss_sum = 0.0;
    for (std::size_t k = 0; k < steps_per_epoch; ++k) {
      Batch b = sample_batch(ds, sampler, history, cfg.batch, rng);
      model.zero_grad();
      const double lr = cosine_lr(step + 1, result.warmup_steps, result.total_steps, result.lr_max);
      double loss_value;
      {
        Tensor<float> loss = smse_loss(model.forward(b.inputs, conditioned ? &b.ctx : nullptr),
                                       b.targets);
        loss_value = static_cast<double>(loss.item());
        if (std::isfinite(loss_value)) backward(loss);
      }
      if (!std::isfinite(loss_value)) {
        std::ostringstream os;
        os << "non-finite training loss at step " << step + 1 << " (epoch " << epoch << ", lr "
           << lr << ", previous gradient norm " << grad_norm(params) << ")";
        throw NumericalError(os.str());
      }
      const double gn = grad_norm(params);
      if (!std::isfinite(gn)) {
        std::ostringstream os;
        os << "non-finite gradient at step " << step + 1 << " (epoch " << epoch << ", lr " << lr
           << ", loss " << loss_value << ", gradient norm " << gn << ")";
        throw NumericalError(os.str());
      }
      if (epoch == 1) {
        for (std::size_t i = 0; i < params.size(); ++i) {
          if (touched[i] || !params[i].has_grad()) continue;
          for (float g : params[i].grad()) {
            if (g != 0.0f) {
              touched[i] = true;
              break;
            }
          }
        }
      }
      adamw_step(params, state, lr, opt);
      ++step;
      loss_sum += loss_value;
    }
    if (epoch == 1) {
      for (std::size_t i = 0; i < params.size(); ++i) {
        if (!touched[i]) result.dead_parameters.push_back(model.parameters()[i].first);
      }
    }
    MetricsRecord row;
    row.epoch = epoch;
    row.step = step;
    row.lr = cosine_lr(step, result.warmup_steps, result.total_steps, result.lr_max);
    row.train_smse = loss_sum / static_cast<double>(steps_per_epoch);
    validate_now(row);
    result.metrics.push_back(row);
    if (on_epoch) on_epoch(row);
  }
  model.zero_grad();
  model.set_requires_grad(false);
  result.final_train_smse = evaluate(model, ds, train_idx, EvalMode::onestep, 1, cfg.eval_batch);
  return result;
}

// Metrics CSV ----------------------------------------------------------------

namespace {
std::string fmt9(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}
}  // namespace

void write_metrics_csv(const std::vector<MetricsRecord>& rows, std::ostream& out) {
  out << "epoch,step,lr,train_smse,val_onestep,val_rollout\n";
  for (const auto& r : rows) {
    out << r.epoch << ',' << r.step << ',' << fmt9(r.lr) << ',' << fmt9(r.train_smse) << ','
        << fmt9(r.val_onestep) << ',' << fmt9(r.val_rollout) << '\n';
  }
}

std::string metrics_csv(const std::vector<MetricsRecord>& rows) {
  std::ostringstream os;
  write_metrics_csv(rows, os);
  return os.str();
}

}  // namespace npde
