#include "experiment.hpp"

#include <filesystem>

#include "npde/binio.hpp"

namespace npde::app {

namespace fs = std::filesystem;

namespace {

std::string resolve(const std::string& p, const std::string& base) {
  if (p.empty()) return p;
  fs::path path(p);
  if (path.is_relative() && !base.empty()) path = fs::path(base) / path;
  return path.lexically_normal().string();
}

DataConfig data_from(JsonSection d) {
  DataConfig c;
  SolverConfig& s = c.solver;
  s.nx = d.get("nx", s.nx);
  s.ny = d.get("ny", s.ny);
  s.length = d.get("length", s.length);
  s.viscosity = d.get("viscosity", s.viscosity);
  s.forcing_wavenumber = d.get("forcing_wavenumber", s.forcing_wavenumber);
  s.dt = d.get("dt", s.dt);
  s.save_stride = d.get("save_stride", s.save_stride);
  s.n_steps = d.get("n_steps", s.n_steps);
  s.burn_in = d.get("burn_in", s.burn_in);
  s.max_courant = d.get("max_courant", s.max_courant);
  s.seed = d.get("seed", s.seed);
  c.n_traj = d.get("n_traj", c.n_traj);
  const auto range = d.get("f_range", std::array<double, 2>{c.f_lo, c.f_hi});
  c.f_lo = range[0];
  c.f_hi = range[1];
  c.normalize = d.get("normalize", c.normalize);
  d.finish();

  if (c.n_traj == 0) throw ConfigError(d.field("n_traj") + ": must be positive");
  if (!(c.f_lo <= c.f_hi)) {
    throw ConfigError(d.field("f_range") + ": lower bound " + std::to_string(c.f_lo) +
                      " exceeds upper bound " + std::to_string(c.f_hi));
  }
  try {
    s.validate();
  } catch (const ConfigError& e) {
    // Solver fields sit directly under `data` in the experiment file.
    std::string msg = e.what();
    const std::string nested = "data.solver.";
    if (msg.rfind(nested, 0) == 0) msg = d.path() + "." + msg.substr(nested.size());
    throw ConfigError(msg);
  }
  return c;
}

TrainConfig train_from(JsonSection t) {
  TrainConfig c;
  c.lr_max = t.get_optional<double>("lr_max");
  c.weight_decay = t.get("weight_decay", c.weight_decay);
  c.epochs = t.get("epochs", c.epochs);
  c.batch = t.get("batch", c.batch);
  c.warmup_steps = t.get_optional<std::size_t>("warmup_steps");
  c.steps_per_epoch = t.get("steps_per_epoch", c.steps_per_epoch);
  c.strides = t.get("strides", c.strides);
  c.val_fraction = t.get("val_fraction", c.val_fraction);
  c.rollout_steps = t.get("rollout_steps", c.rollout_steps);
  c.eval_batch = t.get("eval_batch", c.eval_batch);
  c.seed = t.get("seed", c.seed);
  t.finish();
  c.validate();
  return c;
}

PathConfig paths_from(JsonSection p, const std::string& base) {
  PathConfig c;
  c.dataset = resolve(p.get("dataset", c.dataset), base);
  c.checkpoint = resolve(p.get("checkpoint", c.checkpoint), base);
  c.metrics = resolve(p.get("metrics", c.metrics), base);
  c.analysis = resolve(p.get("analysis", c.analysis), base);
  c.bench = resolve(p.get("bench", c.bench), base);
  p.finish();
  return c;
}

}  // namespace

void ExperimentConfig::override_seed(std::uint64_t seed) {
  data.solver.seed = seed;
  model.seed = seed;
  train.seed = seed;
}

ExperimentConfig experiment_from_json(const Json& j, const std::string& base_dir) {
  JsonSection root(j, "");
  ExperimentConfig cfg;
  cfg.data = data_from(root.section("data"));
  root.section("model");
  cfg.model = model_spec_from_json(j.contains("model") ? j.at("model") : Json::object(), "model");
  cfg.train = train_from(root.section("train"));
  cfg.paths = paths_from(root.section("paths"), base_dir);
  root.finish();
  return cfg;
}

ExperimentConfig load_experiment(const std::string& path) {
  const std::string text = binio::read_file(path);
  const std::string base = fs::absolute(fs::path(path)).parent_path().string();
  return experiment_from_json(parse_json(text, path), base);
}

Json to_json(const ExperimentConfig& cfg) {
  const SolverConfig& s = cfg.data.solver;
  Json data;
  data["nx"] = s.nx;
  data["ny"] = s.ny;
  data["length"] = s.length;
  data["viscosity"] = s.viscosity;
  data["forcing_wavenumber"] = s.forcing_wavenumber;
  data["dt"] = s.dt;
  data["save_stride"] = s.save_stride;
  data["n_steps"] = s.n_steps;
  data["burn_in"] = s.burn_in;
  data["max_courant"] = s.max_courant;
  data["seed"] = s.seed;
  data["n_traj"] = cfg.data.n_traj;
  data["f_range"] = {cfg.data.f_lo, cfg.data.f_hi};
  data["normalize"] = cfg.data.normalize;

  const TrainConfig& t = cfg.train;
  Json train;
  train["lr_max"] = t.lr_max ? Json(*t.lr_max) : Json(default_lr_max(cfg.model.family));
  train["weight_decay"] = t.weight_decay;
  train["epochs"] = t.epochs;
  train["batch"] = t.batch;
  train["warmup_steps"] = t.warmup_steps ? Json(*t.warmup_steps) : Json(nullptr);
  train["steps_per_epoch"] = t.steps_per_epoch;
  train["strides"] = t.strides;
  train["val_fraction"] = t.val_fraction;
  train["rollout_steps"] = t.rollout_steps;
  train["eval_batch"] = t.eval_batch;
  train["seed"] = t.seed;

  Json paths;
  paths["dataset"] = cfg.paths.dataset;
  paths["checkpoint"] = cfg.paths.checkpoint;
  paths["metrics"] = cfg.paths.metrics;
  paths["analysis"] = cfg.paths.analysis;
  paths["bench"] = cfg.paths.bench;

  Json j;
  j["data"] = data;
  j["model"] = npde::to_json(cfg.model);
  j["train"] = train;
  j["paths"] = paths;
  return j;
}

std::string dump_config(const ExperimentConfig& cfg) { return to_json(cfg).dump(2) + "\n"; }

}  // namespace npde::app
