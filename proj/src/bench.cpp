#include "npde/bench.hpp"

#include <chrono>
#include <cstdio>
#include <ostream>

#include "npde/error.hpp"
#include "npde/ops.hpp"
#include "npde/rng.hpp"

namespace npde {

std::string bench_label(const ModelSpec& spec) {
  std::string label = to_string(spec.family) + std::to_string(spec.hidden_channels);
  if (spec.family == Family::fno || spec.family == Family::ufnet) {
    label += "-m" + std::to_string(spec.fno_modes[0]) + "x" + std::to_string(spec.fno_modes[1]);
  }
  if (spec.conditioning != ConditioningMode::none) label += "-" + to_string(spec.conditioning);
  return label;
}

BenchRecord bench_model(const ModelSpec& spec, const BenchOptions& opts) {
  if (opts.iters == 0) throw ConfigError("bench.iters: must be at least 1");
  if (opts.batch == 0) throw ConfigError("bench.batch: must be at least 1");
  Model<float> model(spec);
  const std::size_t d = spec.extent_divisor();
  if (opts.height % d != 0 || opts.width % d != 0) {
    throw ConfigError("bench: grid " + std::to_string(opts.height) + "x" +
                      std::to_string(opts.width) + " is not divisible by " + std::to_string(d));
  }
  Rng rng(Rng::derive(spec.seed, 0xbe7c));
  Tensor<float> x({opts.batch, spec.input_channels(), opts.height, opts.width});
  for (auto& v : x.data()) v = static_cast<float>(rng.normal());
  const Tensor<float> target({opts.batch, spec.out_fields, opts.height, opts.width});
  ConditioningContext ctx;
  ctx.dt.assign(opts.batch, 0.25);
  ctx.force.assign(opts.batch, 0.35);
  const ConditioningContext* c = spec.conditioning != ConditioningMode::none ? &ctx : nullptr;

  using clock = std::chrono::steady_clock;
  auto forward_only = [&] {
    NoGradGuard guard;
    (void)model.forward(x, c);
  };
  auto forward_backward = [&] {
    model.zero_grad();
    backward(smse_loss(model.forward(x, c), target));
  };
  auto mean_us = [&](auto&& fn) {
    for (std::size_t i = 0; i < opts.warmup; ++i) fn();
    const auto t0 = clock::now();
    for (std::size_t i = 0; i < opts.iters; ++i) fn();
    const std::chrono::duration<double, std::micro> dt = clock::now() - t0;
    return dt.count() / static_cast<double>(opts.iters);
  };

  BenchRecord r;
  r.model = bench_label(spec);
  r.params = model.parameter_count();
  r.mem_mb = 4.0 * static_cast<double>(r.params) / 1e6;
  r.warmup = opts.warmup;
  r.iters = opts.iters;
  r.fwd_us = mean_us(forward_only);
  model.set_requires_grad(true);
  r.fwd_bwd_us = mean_us(forward_backward);
  model.set_requires_grad(false);
  return r;
}

void write_bench_csv(const std::vector<BenchRecord>& rows, std::ostream& out) {
  out << "model,params,fwd_us,fwd_bwd_us,mem_mb\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.1f,%.1f,%.3f", r.fwd_us, r.fwd_bwd_us, r.mem_mb);
    out << r.model << ',' << r.params << ',' << buf << '\n';
  }
}

}  // namespace npde
