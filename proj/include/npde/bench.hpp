#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

#include "npde/models.hpp"

namespace npde {

struct BenchOptions {
  std::size_t batch = 8;
  std::size_t iters = 100;
  std::size_t warmup = 10;
  std::size_t height = 64;
  std::size_t width = 64;
};

struct BenchRecord {
  std::string model;
  std::size_t params = 0;
  /// Mean wall time per iteration in microseconds.
  double fwd_us = 0.0;
  double fwd_bwd_us = 0.0;
  /// 4 bytes per parameter, in 10^6 bytes.
  double mem_mb = 0.0;
  std::size_t warmup = 0;
  std::size_t iters = 0;
};

/// Short label such as "fno128-m8x8" or "unet_mod64".
std::string bench_label(const ModelSpec& spec);

/// Builds the model, runs `warmup` untimed iterations, then times `iters`
/// forward passes (no graph) and `iters` forward+backward passes on random
/// input. Conditioned models get a fixed (dt, force) context.
BenchRecord bench_model(const ModelSpec& spec, const BenchOptions& opts = {});

/// Header `model,params,fwd_us,fwd_bwd_us,mem_mb`.
void write_bench_csv(const std::vector<BenchRecord>& rows, std::ostream& out);

}  // namespace npde
