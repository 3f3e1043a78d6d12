// Serial reference loops against the parallel kernels: mean time per call
// and the largest absolute difference between the two results.
#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <vector>

#include "npde/kernels.hpp"
#include "npde/rng.hpp"

namespace {

using namespace npde;
using clock_type = std::chrono::steady_clock;

template <typename F>
double mean_us(F&& fn, std::size_t iters) {
  fn();
  const auto t0 = clock_type::now();
  for (std::size_t i = 0; i < iters; ++i) fn();
  return std::chrono::duration<double, std::micro>(clock_type::now() - t0).count() / double(iters);
}

std::vector<float> random(std::size_t n, Rng& rng) {
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
  return v;
}

double max_diff(const std::vector<float>& a, const std::vector<float>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, double(std::abs(a[i] - b[i])));
  return m;
}

void row(const char* name, double ref, double fast, double diff) {
  std::printf("%-34s %12.1f %12.1f %8.2fx %10.2e\n", name, ref, fast, ref / fast, diff);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reference vs parallel kernel timings"};
  std::size_t iters = 5;
  int threads = 0;
  app.add_option("--iters", iters, "Timed calls per kernel")->check(CLI::PositiveNumber);
  app.add_option("--threads", threads, "Threads for the parallel kernels (0: all)");
  CLI11_PARSE(app, argc, argv);
  if (threads > 0) kernels::set_num_threads(threads);

  Rng rng(7);
  std::printf("threads=%d\n", kernels::max_threads());
  std::printf("%-34s %12s %12s %9s %10s\n", "kernel", "ref_us", "omp_us", "speedup", "max_diff");

  for (std::size_t n : {64u, 256u}) {
    const auto a = random(n * n, rng), b = random(n * n, rng);
    std::vector<float> c_ref(n * n), c_fast(n * n);
    const double ref = mean_us([&] { kernels::reference::gemm(n, n, n, a.data(), b.data(), c_ref.data()); }, iters);
    const double fast = mean_us([&] { kernels::gemm_nn(n, n, n, a.data(), b.data(), c_fast.data()); }, iters);
    char name[64];
    std::snprintf(name, sizeof name, "gemm %zux%zux%zu", n, n, n);
    row(name, ref, fast, max_diff(c_ref, c_fast));
  }

  struct Shape {
    std::size_t cin, cout, hw, k, stride;
  };
  for (const Shape s : {Shape{8, 8, 64, 3, 1}, Shape{16, 16, 32, 3, 1}, Shape{32, 32, 16, 3, 1},
                        Shape{64, 64, 16, 1, 1}, Shape{16, 32, 32, 3, 2}}) {
    kernels::ConvGeometry g;
    g.batch = 4;
    g.in_channels = s.cin;
    g.out_channels = s.cout;
    g.height = g.width = s.hw;
    g.kernel_h = g.kernel_w = s.k;
    g.stride = s.stride;
    const auto x = random(g.batch * s.cin * s.hw * s.hw, rng);
    const auto w = random(s.cout * g.patch(), rng);
    const auto bias = random(s.cout, rng);
    const std::size_t ny = g.batch * s.cout * g.out_height() * g.out_width();
    std::vector<float> y_ref(ny), y_fast(ny);
    const auto dy = random(ny, rng);
    std::vector<float> dx_ref(x.size()), dx_fast(x.size()), dw_ref(w.size()), dw_fast(w.size());

    char name[64];
    std::snprintf(name, sizeof name, "conv fwd %zu->%zu %zux%zu k%zu s%zu", s.cin, s.cout, s.hw,
                  s.hw, s.k, s.stride);
    double ref = mean_us([&] { kernels::reference::conv2d_forward(g, x.data(), w.data(), bias.data(), y_ref.data()); }, iters);
    double fast = mean_us([&] { kernels::conv2d_forward(g, x.data(), w.data(), bias.data(), y_fast.data()); }, iters);
    row(name, ref, fast, max_diff(y_ref, y_fast));

    std::snprintf(name, sizeof name, "conv bwd %zu->%zu %zux%zu k%zu s%zu", s.cin, s.cout, s.hw,
                  s.hw, s.k, s.stride);
    // Gradients accumulate, so each timed call starts from zero.
    ref = mean_us([&] {
      std::fill(dx_ref.begin(), dx_ref.end(), 0.0f);
      std::fill(dw_ref.begin(), dw_ref.end(), 0.0f);
      kernels::reference::conv2d_backward(g, x.data(), w.data(), dy.data(), dx_ref.data(), dw_ref.data(), static_cast<float*>(nullptr));
    }, iters);
    fast = mean_us([&] {
      std::fill(dx_fast.begin(), dx_fast.end(), 0.0f);
      std::fill(dw_fast.begin(), dw_fast.end(), 0.0f);
      kernels::conv2d_backward(g, x.data(), w.data(), dy.data(), dx_fast.data(), dw_fast.data(), static_cast<float*>(nullptr));
    }, iters);
    row(name, ref, fast, std::max(max_diff(dx_ref, dx_fast), max_diff(dw_ref, dw_fast)));
  }
  return 0;
}
