#include "cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <optional>
#include <ostream>
#include <sstream>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "experiment.hpp"
#include "npde/analysis.hpp"
#include "npde/bench.hpp"
#include "npde/binio.hpp"
#include "npde/error.hpp"
#include "npde/rng.hpp"

namespace npde::app {

namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  int workers = 0;
};

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void ensure_parent(const std::string& path) {
  const fs::path parent = fs::path(path).parent_path();
  if (parent.empty()) return;
  std::error_code ec;
  fs::create_directories(parent, ec);
  if (ec) throw IoError(parent.string() + ": cannot create directory: " + ec.message());
}

void write_output(const std::string& path, const std::string& bytes) {
  ensure_parent(path);
  binio::write_file(path, bytes);
}

ExperimentConfig load(const Common& c, bool required) {
  if (c.config.empty()) {
    if (required) throw ConfigError("--config: a config file is required");
    ExperimentConfig cfg;
    if (c.seed) cfg.override_seed(*c.seed);
    return cfg;
  }
  ExperimentConfig cfg = load_experiment(c.config);
  if (c.seed) cfg.override_seed(*c.seed);
  return cfg;
}

void apply_workers(int workers) {
#ifdef _OPENMP
  if (workers > 0) omp_set_num_threads(workers);
#else
  (void)workers;
#endif
}

int cmd_generate(const Common& c, std::ostream& out) {
  const ExperimentConfig cfg = load(c, true);
  DatasetOptions opts;
  opts.normalize = cfg.data.normalize;
  opts.workers = c.workers;
  const Dataset ds =
      generate_dataset(cfg.data.n_traj, cfg.data.f_lo, cfg.data.f_hi, cfg.data.solver, opts);
  write_output(cfg.paths.dataset, encode_dataset(ds));
  write_output(cfg.paths.dataset + ".config.json", dump_config(cfg));

  out << "dataset=" << cfg.paths.dataset << '\n';
  out << "trajectories=" << ds.n_traj << '\n';
  out << "snapshots=" << ds.n_steps << '\n';
  out << "grid=" << ds.ny << 'x' << ds.nx << '\n';
  out << "dt_save=" << fmt(ds.dt_save) << '\n';
  out << "f_range=" << fmt(cfg.data.f_lo) << ',' << fmt(cfg.data.f_hi) << '\n';
  out << "normalized=" << (cfg.data.normalize ? "true" : "false") << '\n';
  for (std::size_t f = 0; f < ds.n_fields; ++f) {
    out << "field" << f << ".mean=" << fmt(ds.mean[f]) << " field" << f
        << ".std=" << fmt(ds.stddev[f]) << '\n';
  }
  return 0;
}

int cmd_train(const Common& c, std::ostream& out) {
  ExperimentConfig cfg = load(c, true);
  const Dataset ds = read_dataset(cfg.paths.dataset);
  Model<float> model(cfg.model);
  const TrainResult r = train(model, ds, cfg.train, [&](const MetricsRecord& row) {
    out << "epoch=" << row.epoch << " step=" << row.step << " lr=" << fmt(row.lr)
        << " train_smse=" << fmt(row.train_smse) << " val_onestep=" << fmt(row.val_onestep)
        << '\n';
  });
  ensure_parent(cfg.paths.checkpoint);
  write_checkpoint(model, cfg.paths.checkpoint);
  write_output(cfg.paths.metrics, metrics_csv(r.metrics));
  cfg.train.lr_max = r.lr_max;
  cfg.train.warmup_steps = r.warmup_steps;
  write_output(cfg.paths.checkpoint + ".config.json", dump_config(cfg));

  out << "parameters=" << model.parameter_count() << '\n';
  out << "initial_train_smse=" << fmt(r.initial_train_smse) << '\n';
  out << "final_train_smse=" << fmt(r.final_train_smse) << '\n';
  out << "val_onestep=" << fmt(r.metrics.back().val_onestep) << '\n';
  for (const auto& name : r.dead_parameters) out << "warning: no gradient reached " << name << '\n';
  return 0;
}

struct EvalArgs {
  std::string checkpoint, dataset, split = "val";
  bool rollout = false;
};

int cmd_eval(const Common& c, const EvalArgs& a, std::ostream& out) {
  const ExperimentConfig cfg = load(c, false);
  const bool from_config = !c.config.empty();
  const std::string ckpt = !a.checkpoint.empty() ? a.checkpoint : from_config ? cfg.paths.checkpoint : "";
  const std::string data = !a.dataset.empty() ? a.dataset : from_config ? cfg.paths.dataset : "";
  if (ckpt.empty()) throw ConfigError("--checkpoint: required without --config");
  if (data.empty()) throw ConfigError("--dataset: required without --config");

  const Model<float> model = read_checkpoint<float>(ckpt);
  const Dataset ds = read_dataset(data);
  if (ds.n_fields != model.spec().in_fields) {
    throw ConfigError("model.in_fields: checkpoint expects " +
                      std::to_string(model.spec().in_fields) + " fields, dataset has " +
                      std::to_string(ds.n_fields));
  }
  const std::size_t d = model.spec().extent_divisor();
  if (ds.ny % d != 0 || ds.nx % d != 0) {
    throw ConfigError("dataset grid " + std::to_string(ds.ny) + "x" + std::to_string(ds.nx) +
                      " is not divisible by " + std::to_string(d) + " as the model requires");
  }
  auto [train_idx, val_idx] = split_trajectories(ds.n_traj, cfg.train.val_fraction);
  std::vector<std::size_t> trajs;
  if (a.split == "val") {
    trajs = val_idx;
  } else if (a.split == "train") {
    trajs = train_idx;
  } else {
    for (std::size_t t = 0; t < ds.n_traj; ++t) trajs.push_back(t);
  }
  if (trajs.empty()) throw ConfigError("--split: split '" + a.split + "' holds no trajectories");

  const std::size_t batch = cfg.train.eval_batch;
  out << "onestep=" << fmt(evaluate(model, ds, trajs, EvalMode::onestep, 1, batch)) << '\n';
  if (a.rollout) {
    const std::size_t steps = cfg.train.rollout_steps;
    out << "rollout=" << fmt(evaluate(model, ds, trajs, EvalMode::rollout, steps, batch)) << '\n';
  }
  return 0;
}

struct AnalyzeArgs {
  std::string checkpoint, out;
  std::vector<std::size_t> grid;
};

double conv_theorem_suite(std::uint64_t seed) {
  Rng rng(seed);
  double dev = 0.0;
  for (std::size_t n : {8u, 16u, 32u}) {
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<double> w(n), f(n);
      for (auto& v : w) v = rng.uniform(-1.0, 1.0);
      for (auto& v : f) v = rng.uniform(-1.0, 1.0);
      dev = std::max(dev, analysis::conv_theorem_check(w, f));
    }
  }
  return dev;
}

int cmd_analyze(const Common& c, const AnalyzeArgs& a, std::ostream& out) {
  const ExperimentConfig cfg = load(c, false);
  const bool from_config = !c.config.empty();
  const std::string ckpt = !a.checkpoint.empty() ? a.checkpoint : from_config ? cfg.paths.checkpoint : "";
  if (ckpt.empty()) throw ConfigError("--checkpoint: required without --config");
  const std::string dir = !a.out.empty() ? a.out : from_config ? cfg.paths.analysis : "analysis";
  std::size_t height = from_config ? cfg.data.solver.ny : 64;
  std::size_t width = from_config ? cfg.data.solver.nx : 64;
  if (!a.grid.empty()) {
    if (a.grid.size() != 2) throw ConfigError("--grid: expected HEIGHT WIDTH");
    height = a.grid[0];
    width = a.grid[1];
  }

  const Model<float> model = read_checkpoint<float>(ckpt);
  if (!model.spec().is_unet()) {
    throw ConfigError("analyze: filter spectra need a U-Net family checkpoint, got '" +
                      to_string(model.spec().family) + "'");
  }
  const auto spectra = analysis::filter_spectrum(model, height, width);

  std::ostringstream report;
  report << "checkpoint=" << ckpt << '\n';
  report << "family=" << to_string(model.spec().family) << '\n';
  report << "grid=" << height << 'x' << width << '\n';
  double dev2 = 0.0;
  bool have2 = false;
  Rng rng(Rng::derive(model.spec().seed, 0xa11));
  for (const auto& s : spectra) {
    const std::string stem = dir + "/spectrum_level" + std::to_string(s.level);
    ensure_parent(stem + ".csv");
    analysis::write_spectrum_csv(s, stem + ".csv");
    analysis::write_spectrum_pgm(s, stem + ".pgm");
    report << "level" << s.level << ".layer=" << s.layer << '\n';
    report << "level" << s.level << ".extent=" << s.height << 'x' << s.width << '\n';

    // The first filter of the block, applied to a random field on its grid.
    const Tensor<float>& w = model.param(s.layer);
    const std::size_t k = w.size(2);
    if (k == w.size(3) && k % 2 == 1 && is_power_of_two(s.height) && is_power_of_two(s.width) &&
        k <= s.height && k <= s.width) {
      std::vector<double> kernel(w.raw(), w.raw() + k * k);
      std::vector<double> f(s.height * s.width);
      for (auto& v : f) v = rng.uniform(-1.0, 1.0);
      dev2 = std::max(dev2, analysis::conv2d_theorem_check(kernel, k, f, s.height, s.width));
      have2 = true;
    }
  }
  const double dev1 = conv_theorem_suite(model.spec().seed);
  report << "conv_theorem_1d_max_dev=" << fmt(dev1) << '\n';
  if (have2) report << "conv_theorem_2d_max_dev=" << fmt(dev2) << '\n';
  const double dev = have2 ? std::max(dev1, dev2) : dev1;
  report << "conv_theorem_max_dev=" << fmt(dev) << '\n';
  write_output(dir + "/report.txt", report.str());
  if (from_config) write_output(dir + "/config.json", dump_config(cfg));

  out << "spectra=" << spectra.size() << '\n';
  for (const auto& s : spectra) {
    out << "level" << s.level << '=' << s.height << 'x' << s.width << ' ' << s.layer << '\n';
  }
  out << "conv_theorem_max_dev=" << fmt(dev) << '\n';
  return 0;
}

struct BenchArgs {
  BenchOptions opts;
  std::vector<std::size_t> grid;
  std::string out;
};

int cmd_bench(const Common& c, bool workers_given, const BenchArgs& a, std::ostream& out) {
  if (workers_given && c.workers > 1) {
    throw ConfigError("--workers: benchmarks run serially, got " + std::to_string(c.workers));
  }
  apply_workers(1);
  const ExperimentConfig cfg = load(c, false);
  BenchOptions opts = a.opts;
  if (!a.grid.empty()) {
    if (a.grid.size() != 2) throw ConfigError("--grid: expected HEIGHT WIDTH");
    opts.height = a.grid[0];
    opts.width = a.grid[1];
  }
  const BenchRecord r = bench_model(cfg.model, opts);
  std::ostringstream csv;
  write_bench_csv({r}, csv);
  const std::string path = !a.out.empty() ? a.out : c.config.empty() ? "" : cfg.paths.bench;
  if (!path.empty()) {
    write_output(path, csv.str());
    write_output(path + ".config.json", dump_config(cfg));
  }
  out << csv.str();
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Neural PDE surrogate experiments"};
  app.name("npde");
  app.require_subcommand(1);

  Common common;
  std::uint64_t seed = 0;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config, "Experiment config (JSON)");
    sub->add_option("--seed", seed, "Overrides the data, model and train seeds");
    return sub->add_option("--workers", common.workers, "Worker threads (default: all cores)")
        ->check(CLI::NonNegativeNumber);
  };

  auto* gen = app.add_subcommand("generate", "Simulate trajectories and write a dataset");
  add_common(gen);
  auto* trn = app.add_subcommand("train", "Train the configured model on its dataset");
  add_common(trn);

  EvalArgs eval_args;
  auto* evl = app.add_subcommand("eval", "One-step (and rollout) SMSE of a checkpoint");
  add_common(evl);
  evl->add_option("--checkpoint", eval_args.checkpoint, "Checkpoint file");
  evl->add_option("--dataset", eval_args.dataset, "Dataset file");
  evl->add_option("--split", eval_args.split, "Trajectories to score")
      ->check(CLI::IsMember({"val", "train", "all"}));
  evl->add_flag("--rollout", eval_args.rollout, "Also report the autoregressive rollout SMSE");

  AnalyzeArgs analyze_args;
  auto* ana = app.add_subcommand("analyze", "Filter spectra and convolution-theorem report");
  add_common(ana);
  ana->add_option("--checkpoint", analyze_args.checkpoint, "Checkpoint file");
  ana->add_option("--out", analyze_args.out, "Output directory");
  ana->add_option("--grid", analyze_args.grid, "Input grid HEIGHT WIDTH")->expected(2);

  BenchArgs bench_args;
  auto* bch = app.add_subcommand("bench", "Time forward and forward+backward passes");
  CLI::Option* workers_opt = add_common(bch);
  bch->add_option("--batch", bench_args.opts.batch, "Batch size")->check(CLI::PositiveNumber);
  bch->add_option("--iters", bench_args.opts.iters, "Timed iterations")->check(CLI::PositiveNumber);
  bch->add_option("--warmup", bench_args.opts.warmup, "Untimed warmup iterations");
  bch->add_option("--grid", bench_args.grid, "Input grid HEIGHT WIDTH")->expected(2);
  bch->add_option("--out", bench_args.out, "CSV output path");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }

  for (auto* sub : app.get_subcommands()) {
    if (sub->count("--seed")) common.seed = seed;
  }
  apply_workers(common.workers);

  try {
    if (gen->parsed()) return cmd_generate(common, out);
    if (trn->parsed()) return cmd_train(common, out);
    if (evl->parsed()) return cmd_eval(common, eval_args, out);
    if (ana->parsed()) return cmd_analyze(common, analyze_args, out);
    return cmd_bench(common, workers_opt->count() > 0, bench_args, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const DimensionError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return 3;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << '\n';
    return 3;
  } catch (const NumericalError& e) {
    err << "error: " << e.what() << '\n';
    return 4;
  }
}

}  // namespace npde::app
