#include <doctest.h>

#include <cmath>
#include <limits>

#include "npde/error.hpp"
#include "npde/ops.hpp"
#include "npde/training.hpp"
#include "test_util.hpp"

using namespace npde;
using npde::testing::random_tensor;

namespace {

Dataset synthetic_dataset(std::size_t n_traj, std::size_t n_steps, std::uint64_t seed,
                          std::size_t n = 8) {
  Dataset ds;
  ds.n_traj = static_cast<std::uint32_t>(n_traj);
  ds.n_steps = static_cast<std::uint32_t>(n_steps);
  ds.n_fields = 3;
  ds.ny = ds.nx = static_cast<std::uint32_t>(n);
  ds.dt_save = 0.25;
  ds.burn_in = 0;
  ds.param_dim = 1;
  ds.mean.assign(3, 0.0);
  ds.stddev.assign(3, 1.0);
  Rng rng(seed);
  for (std::size_t t = 0; t < n_traj; ++t) ds.params.push_back(0.2 + 0.1 * double(t));
  ds.data.resize(n_traj * n_steps * ds.frame_size());
  for (auto& v : ds.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  return ds;
}

ModelSpec tiny_fno() {
  ModelSpec s;
  s.family = Family::fno;
  s.hidden_channels = 4;
  s.fno_modes = {2, 2};
  s.fno_layers = 1;
  s.history = 2;
  s.seed = 11;
  return s;
}

TrainConfig tiny_train() {
  TrainConfig cfg;
  cfg.lr_max = 1e-2;
  cfg.epochs = 3;
  cfg.batch = 4;
  cfg.rollout_steps = 2;
  cfg.eval_batch = 5;
  cfg.val_fraction = 0.25;
  cfg.seed = 3;
  return cfg;
}

template <typename T>
std::vector<T> values(const Tensor<T>& t) {
  return {t.raw(), t.raw() + t.numel()};
}

std::vector<std::vector<float>> snapshot(const Model<float>& m) {
  std::vector<std::vector<float>> out;
  for (const auto& [name, t] : m.parameters()) out.emplace_back(t.raw(), t.raw() + t.numel());
  return out;
}

}  // namespace

TEST_SUITE("training") {

TEST_CASE("smse_loss worked examples") {
  Rng rng(1);
  auto a = random_tensor<double>({2, 3, 4, 5}, rng);
  CHECK(smse_loss(a, a).item() == 0.0);

  Tensor<double> shifted(a.shape(), std::vector<double>(a.raw(), a.raw() + a.numel()));
  for (std::size_t i = 0; i < shifted.numel(); ++i) shifted.raw()[i] += 1.0;
  CHECK(smse_loss(shifted, a).item() == doctest::Approx(3.0).epsilon(1e-14));
}

TEST_CASE("smse_loss matches the triple-loop oracle") {
  Rng rng(2);
  for (std::size_t n_t : {1u, 2u}) {
    const std::size_t B = 3, F = 3, H = 5, W = 7;
    auto p = random_tensor<double>({B, n_t * F, H, W}, rng);
    auto t = random_tensor<double>({B, n_t * F, H, W}, rng);
    double oracle = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
      double per_sample = 0.0;
      for (std::size_t c = 0; c < n_t * F; ++c) {
        double spatial = 0.0;
        for (std::size_t i = 0; i < H * W; ++i) {
          const std::size_t idx = (b * n_t * F + c) * H * W + i;
          const double d = p.raw()[idx] - t.raw()[idx];
          spatial += d * d;
        }
        per_sample += spatial / double(H * W);
      }
      oracle += per_sample;
    }
    oracle /= double(B);
    CHECK(std::abs(smse_loss(p, t, n_t).item() - oracle) < 1e-12);
  }
}

TEST_CASE("cosine schedule") {
  const double lr = 2.0;
  CHECK(cosine_lr(0, 10, 110, lr) == 0.0);
  CHECK(cosine_lr(5, 10, 110, lr) == doctest::Approx(1.0));
  CHECK(cosine_lr(10, 10, 110, lr) == doctest::Approx(2.0));
  CHECK(cosine_lr(60, 10, 110, lr) == doctest::Approx(1.0));
  CHECK(std::abs(cosine_lr(110, 10, 110, lr)) < 1e-15);
  CHECK(cosine_lr(35, 10, 110, lr) == doctest::Approx(1.0 + std::cos(M_PI / 4.0)));
  CHECK(cosine_lr(0, 0, 4, lr) == doctest::Approx(2.0));
  CHECK_THROWS_AS(cosine_lr(111, 10, 110, lr), UsageError);
  CHECK_THROWS_AS(cosine_lr(0, 10, 10, lr), UsageError);
}

TEST_CASE("AdamW") {
  SUBCASE("no gradient and no decay leaves parameters untouched") {
    Rng rng(3);
    std::vector<Tensor<double>> params{random_tensor<double>({4, 3}, rng)};
    const auto before = values(params[0]);
    AdamWState state;
    adamw_step(params, state, 0.1);
    CHECK(values(params[0]) == before);
    CHECK(state.step == 1);
  }
  SUBCASE("no gradient with decay shrinks by 1 - lr*wd") {
    Rng rng(4);
    std::vector<Tensor<double>> params{random_tensor<double>({5}, rng)};
    const auto before = values(params[0]);
    AdamWState state;
    AdamWOptions opts;
    opts.weight_decay = 0.1;
    adamw_step(params, state, 0.01, opts);
    for (std::size_t i = 0; i < before.size(); ++i) {
      CHECK(params[0].raw()[i] == doctest::Approx(before[i] * (1.0 - 0.01 * 0.1)).epsilon(1e-15));
    }
  }
  SUBCASE("scalar hand computation") {
    // theta = 1, g = 0.5, lr = 0.1: the bias-corrected moments are exactly
    // g and g^2 at every step for a constant gradient.
    std::vector<Tensor<double>> params{Tensor<double>({1}, std::vector<double>{1.0})};
    params[0].set_requires_grad(true);
    AdamWState state;
    double expected = 1.0;
    for (int step = 0; step < 3; ++step) {
      params[0].zero_grad();
      backward(scale(sum(params[0]), 0.5));
      adamw_step(params, state, 0.1);
      expected -= 0.1 * (0.5 / (0.5 + 1e-8));
      CHECK(params[0].raw()[0] == doctest::Approx(expected).epsilon(1e-14));
    }
    CHECK(state.m[0][0] == doctest::Approx(0.5 * (1.0 - 0.9 * 0.9 * 0.9)).epsilon(1e-14));
  }
  SUBCASE("state size mismatch") {
    std::vector<Tensor<double>> params{Tensor<double>({2})};
    AdamWState state;
    adamw_step(params, state, 0.1);
    params.push_back(Tensor<double>({2}));
    CHECK_THROWS_AS(adamw_step(params, state, 0.1), UsageError);
  }
}

TEST_CASE("trajectory split") {
  auto [train, val] = split_trajectories(32, 0.1);
  CHECK(train.size() == 29);
  CHECK(val == std::vector<std::size_t>{29, 30, 31});
  std::tie(train, val) = split_trajectories(2, 0.1);
  CHECK(val == std::vector<std::size_t>{1});
  std::tie(train, val) = split_trajectories(5, 0.0);
  CHECK(val.empty());
  CHECK(train.size() == 5);
  std::tie(train, val) = split_trajectories(1, 0.5);
  CHECK(val.empty());
}

TEST_CASE("window sampler") {
  const Dataset ds = synthetic_dataset(3, 14, 5);
  const std::vector<std::size_t> all{0, 1, 2};

  SUBCASE("counts and bounds") {
    WindowSampler s(ds, 4, {1}, all);
    CHECK(s.count(1) == 3 * 10);
    CHECK(s.count(2) == 0);
    Rng rng(1);
    for (int i = 0; i < 1000; ++i) {
      const Window w = s.draw(rng);
      CHECK(w.stride == 1);
      CHECK(w.start + 4 - 1 + w.stride < ds.n_steps);
    }
    CHECK_THROWS_AS(WindowSampler(ds, 4, {11}, all), ConfigError);
    CHECK_THROWS_AS(WindowSampler(ds, 4, {1}, {}), ConfigError);
  }

  SUBCASE("stride classes are equally likely") {
    WindowSampler s(ds, 4, {1, 8}, all);
    CHECK(s.count(1) == 30);
    CHECK(s.count(8) == 9);
    Rng rng(2);
    const int n = 100000;
    int ones = 0;
    for (int i = 0; i < n; ++i) ones += s.draw(rng).stride == 1;
    const double frac = double(ones) / n;
    CHECK(frac > 0.5 * 0.95);
    CHECK(frac < 0.5 * 1.05);
  }

  SUBCASE("batches are reproducible and carry the right frames") {
    WindowSampler s(ds, 3, {1, 2}, all);
    Rng r1(9), r2(9);
    const Batch a = sample_batch(ds, s, 3, 6, r1);
    const Batch b = sample_batch(ds, s, 3, 6, r2);
    CHECK(values(a.inputs) == values(b.inputs));
    CHECK(values(a.targets) == values(b.targets));
    const std::size_t frame = ds.frame_size();
    for (std::size_t i = 0; i < a.windows.size(); ++i) {
      const Window& w = a.windows[i];
      for (std::size_t h = 0; h < 3; ++h) {
        CHECK(std::equal(ds.frame(w.traj, w.start + h), ds.frame(w.traj, w.start + h) + frame,
                         a.inputs.raw() + (i * 3 + h) * frame));
      }
      const float* target = ds.frame(w.traj, w.start + 2 + w.stride);
      CHECK(std::equal(target, target + frame, a.targets.raw() + i * frame));
      CHECK(a.ctx.dt[i] == double(w.stride) * ds.dt_save);
      CHECK(a.ctx.force[i] == ds.force(w.traj));
    }
  }
}

TEST_CASE("evaluation mechanics") {
  const Dataset ds = synthetic_dataset(2, 9, 6);
  const std::vector<std::size_t> trajs{0, 1};
  const std::size_t frame = ds.frame_size();
  EvalOptions opts;
  opts.history = 3;
  opts.rollout_steps = 5;
  opts.batch = 3;

  // Ground truth for the window's next frame, whatever the model input is.
  Predictor oracle = [&](const Tensor<float>& x, const ConditioningContext&,
                         const std::vector<Window>& windows, std::size_t k) {
    Tensor<float> out({x.size(0), ds.n_fields, ds.ny, ds.nx});
    for (std::size_t i = 0; i < windows.size(); ++i) {
      const float* src = ds.frame(windows[i].traj, windows[i].start + opts.history + k);
      std::copy(src, src + frame, out.raw() + i * frame);
    }
    return out;
  };
  CHECK(evaluate(oracle, ds, trajs, EvalMode::onestep, opts) == 0.0);
  CHECK(evaluate(oracle, ds, trajs, EvalMode::rollout, opts) == 0.0);

  SUBCASE("identity on a frozen trajectory") {
    Dataset frozen = ds;
    for (std::size_t t = 0; t < frozen.n_traj; ++t) {
      for (std::size_t s = 1; s < frozen.n_steps; ++s) {
        std::copy(frozen.frame(t, 0), frozen.frame(t, 0) + frame,
                  frozen.data.data() + (t * frozen.n_steps + s) * frame);
      }
    }
    Predictor last = [&](const Tensor<float>& x, const ConditioningContext&,
                         const std::vector<Window>&, std::size_t) {
      Tensor<float> out({x.size(0), ds.n_fields, ds.ny, ds.nx});
      for (std::size_t i = 0; i < x.size(0); ++i) {
        const float* src = x.raw() + (i * opts.history + opts.history - 1) * frame;
        std::copy(src, src + frame, out.raw() + i * frame);
      }
      return out;
    };
    CHECK(evaluate(last, frozen, trajs, EvalMode::rollout, opts) == 0.0);
    CHECK(evaluate(last, ds, trajs, EvalMode::onestep, opts) > 0.0);
  }

  SUBCASE("linear map rollout matches a hand-unrolled oracle") {
    const float a = 0.5f;
    std::size_t calls = 0;
    Predictor scaled = [&](const Tensor<float>& x, const ConditioningContext&,
                           const std::vector<Window>&, std::size_t) {
      ++calls;
      Tensor<float> out({x.size(0), ds.n_fields, ds.ny, ds.nx});
      for (std::size_t i = 0; i < x.size(0); ++i) {
        const float* src = x.raw() + (i * opts.history + opts.history - 1) * frame;
        for (std::size_t j = 0; j < frame; ++j) out.raw()[i * frame + j] = a * src[j];
      }
      return out;
    };
    const double got = evaluate(scaled, ds, trajs, EvalMode::rollout, opts);

    const std::size_t hw = std::size_t{ds.ny} * ds.nx;
    double total = 0.0;
    std::size_t windows = 0;
    for (std::size_t t : trajs) {
      for (std::size_t s = 0; s + opts.history + opts.rollout_steps <= ds.n_steps; ++s) {
        ++windows;
        const float* base = ds.frame(t, s + opts.history - 1);
        for (std::size_t k = 1; k <= opts.rollout_steps; ++k) {
          const float* truth = ds.frame(t, s + opts.history - 1 + k);
          double err = 0.0;
          for (std::size_t j = 0; j < frame; ++j) {
            const double d = std::pow(double(a), double(k)) * base[j] - truth[j];
            err += d * d;
          }
          total += err / double(hw);
        }
      }
    }
    CHECK(windows == 2 * 2);
    CHECK(calls == 2 * opts.rollout_steps);
    // The evaluator runs in single precision.
    CHECK(got == doctest::Approx(total / double(windows)).epsilon(1e-6));

    const double one = evaluate(scaled, ds, trajs, EvalMode::onestep, opts);
    CHECK(got >= one);
  }

  SUBCASE("too few snapshots") {
    EvalOptions long_roll = opts;
    long_roll.rollout_steps = 7;
    CHECK_THROWS_AS(evaluate(oracle, ds, trajs, EvalMode::rollout, long_roll), ConfigError);
  }
}

TEST_CASE("training loop") {
  const Dataset ds = synthetic_dataset(4, 6, 7);

  SUBCASE("zero learning rate leaves the weights bit-identical") {
    Model<float> m(tiny_fno());
    const auto before = snapshot(m);
    TrainConfig cfg = tiny_train();
    cfg.lr_max = 0.0;
    const auto r = train(m, ds, cfg);
    CHECK(snapshot(m) == before);
    CHECK(r.final_train_smse == r.initial_train_smse);
  }

  SUBCASE("metrics rows, schedule and warmup") {
    Model<float> m(tiny_fno());
    TrainConfig cfg = tiny_train();
    cfg.epochs = 4;
    std::size_t callbacks = 0;
    const auto r = train(m, ds, cfg, [&](const MetricsRecord&) { ++callbacks; });
    // 3 training trajectories x (6 - 2) stride-1 windows over batch 4.
    const std::size_t per_epoch = 3;
    CHECK(r.total_steps == 4 * per_epoch);
    CHECK(r.warmup_steps == r.total_steps / 20);
    CHECK(callbacks == 4);
    REQUIRE(r.metrics.size() == 4);
    for (std::size_t e = 0; e < 4; ++e) {
      const auto& row = r.metrics[e];
      CHECK(row.epoch == e + 1);
      CHECK(row.step == (e + 1) * per_epoch);
      CHECK(row.lr == cosine_lr(row.step, r.warmup_steps, r.total_steps, 1e-2));
      CHECK(std::isfinite(row.train_smse));
      CHECK(std::isfinite(row.val_onestep));
      CHECK(std::isfinite(row.val_rollout));
    }
    CHECK(std::abs(r.metrics.back().lr) < 1e-15);
    CHECK(r.dead_parameters.empty());
    for (const auto& [name, t] : m.parameters()) {
      CHECK_FALSE(t.requires_grad());
      for (float g : t.grad()) CHECK(g == 0.0f);
    }
  }

  SUBCASE("default learning rate follows the family") {
    Model<float> m(tiny_fno());
    TrainConfig cfg = tiny_train();
    cfg.lr_max.reset();
    cfg.epochs = 1;
    CHECK(train(m, ds, cfg).lr_max == 2e-4);
    CHECK(default_lr_max(Family::unet_att) == 1e-4);
    CHECK(default_lr_max(Family::unet_mod) == 2e-4);
  }

  SUBCASE("identical seeds give identical runs") {
    Model<float> a(tiny_fno()), b(tiny_fno());
    const auto ra = train(a, ds, tiny_train());
    const auto rb = train(b, ds, tiny_train());
    CHECK(snapshot(a) == snapshot(b));
    CHECK(metrics_csv(ra.metrics) == metrics_csv(rb.metrics));
    Model<float> c(tiny_fno());
    TrainConfig other = tiny_train();
    other.seed = 4;
    train(c, ds, other);
    CHECK(snapshot(c) != snapshot(a));
  }

  SUBCASE("training lowers the loss on a learnable map") {
    // Next frame = 0.5 * current frame.
    Dataset lin = ds;
    const std::size_t frame = lin.frame_size();
    for (std::size_t t = 0; t < lin.n_traj; ++t) {
      for (std::size_t s = 1; s < lin.n_steps; ++s) {
        const float* prev = lin.frame(t, s - 1);
        float* cur = lin.data.data() + (t * lin.n_steps + s) * frame;
        for (std::size_t j = 0; j < frame; ++j) cur[j] = 0.5f * prev[j];
      }
    }
    Model<float> m(tiny_fno());
    TrainConfig cfg = tiny_train();
    cfg.epochs = 30;
    const auto r = train(m, lin, cfg);
    CHECK(r.final_train_smse < 0.5 * r.initial_train_smse);
  }

  SUBCASE("non-finite loss aborts with context") {
    Dataset bad = ds;
    bad.data[5] = std::numeric_limits<float>::quiet_NaN();
    Model<float> m(tiny_fno());
    TrainConfig cfg = tiny_train();
    cfg.val_fraction = 0.0;
    cfg.strides = {1};
    bool thrown = false;
    try {
      train(m, bad, cfg);
    } catch (const NumericalError& e) {
      thrown = true;
      const std::string what = e.what();
      CHECK(what.find("step") != std::string::npos);
      CHECK(what.find("lr") != std::string::npos);
      CHECK(what.find("gradient norm") != std::string::npos);
    }
    CHECK(thrown);
  }

  SUBCASE("configuration errors") {
    Model<float> m(tiny_fno());
    TrainConfig cfg = tiny_train();
    cfg.strides = {5};
    CHECK_THROWS_AS(train(m, ds, cfg), ConfigError);
    cfg = tiny_train();
    cfg.batch = 0;
    CHECK_THROWS_WITH_AS(train(m, ds, cfg), doctest::Contains("train.batch"), ConfigError);
    cfg = tiny_train();
    cfg.warmup_steps = 1000;
    CHECK_THROWS_AS(train(m, ds, cfg), ConfigError);
    ModelSpec two = tiny_fno();
    two.in_fields = two.out_fields = 2;
    Model<float> wrong(two);
    CHECK_THROWS_AS(train(wrong, ds, tiny_train()), ConfigError);
  }
}

TEST_CASE("metrics CSV layout") {
  MetricsRecord r;
  r.epoch = 2;
  r.step = 20;
  r.lr = 1.0 / 3.0;
  r.train_smse = 0.125;
  r.val_onestep = std::nan("");
  r.val_rollout = 2.5e-7;
  CHECK(metrics_csv({r}) ==
        "epoch,step,lr,train_smse,val_onestep,val_rollout\n"
        "2,20,0.333333333,0.125,nan,2.5e-07\n");
}

}  // TEST_SUITE
