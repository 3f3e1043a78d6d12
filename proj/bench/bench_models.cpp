// Forward and forward+backward timings per model family, one CSV row each.
#include <CLI11.hpp>

#include <fstream>
#include <iostream>

#include "npde/bench.hpp"
#include "npde/error.hpp"
#include "npde/kernels.hpp"

int main(int argc, char** argv) {
  using namespace npde;
  CLI::App app{"Model runtime and parameter-memory table"};
  std::vector<std::string> families{"resnet", "fno", "unet_base", "unet_mod", "unet_att", "ufnet"};
  std::size_t channels = 16;
  std::size_t modes = 8;
  std::vector<std::size_t> grid{64, 64};
  BenchOptions opts;
  std::string out;
  app.add_option("--families", families, "Model families to time");
  app.add_option("--channels", channels, "Hidden channels")->check(CLI::PositiveNumber);
  app.add_option("--modes", modes, "Fourier modes per axis (fno, ufnet)")->check(CLI::PositiveNumber);
  app.add_option("--batch", opts.batch, "Batch size")->check(CLI::PositiveNumber);
  app.add_option("--iters", opts.iters, "Timed iterations")->check(CLI::PositiveNumber);
  app.add_option("--warmup", opts.warmup, "Untimed warmup iterations");
  app.add_option("--grid", grid, "HEIGHT WIDTH")->expected(2);
  app.add_option("--out", out, "CSV path (stdout when omitted)");
  CLI11_PARSE(app, argc, argv);
  opts.height = grid[0];
  opts.width = grid[1];
  kernels::set_num_threads(1);

  std::vector<BenchRecord> rows;
  try {
    for (const auto& name : families) {
      ModelSpec spec;
      spec.family = parse_family(name);
      spec.hidden_channels = channels;
      spec.fno_modes = {modes, modes};
      std::cerr << "timing " << bench_label(spec) << "...\n";
      rows.push_back(bench_model(spec, opts));
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  if (out.empty()) {
    write_bench_csv(rows, std::cout);
  } else {
    std::ofstream f(out);
    write_bench_csv(rows, f);
    if (!f) {
      std::cerr << "error: cannot write " << out << '\n';
      return 3;
    }
  }
  return 0;
}
