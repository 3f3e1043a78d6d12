#pragma once

#include <string>

#include "npde/config.hpp"
#include "npde/datagen.hpp"
#include "npde/models.hpp"
#include "npde/training.hpp"

namespace npde::app {

struct DataConfig {
  SolverConfig solver;
  std::size_t n_traj = 32;
  double f_lo = 0.2;
  double f_hi = 0.5;
  bool normalize = true;
};

/// Output locations. Relative entries are resolved against the directory of
/// the config file when it is loaded.
struct PathConfig {
  std::string dataset = "dataset.npde";
  std::string checkpoint = "model.npdm";
  std::string metrics = "metrics.csv";
  std::string analysis = "analysis";
  std::string bench = "bench.csv";
};

struct ExperimentConfig {
  DataConfig data;
  ModelSpec model;
  TrainConfig train;
  PathConfig paths;

  /// Sets the data, model and train seeds at once.
  void override_seed(std::uint64_t seed);
};

/// Sections `data`, `model`, `train`, `paths`; every field is optional and
/// unknown keys raise ConfigError with their dotted path.
ExperimentConfig experiment_from_json(const Json& j, const std::string& base_dir = "");

/// Loads and parses a config file (IoError if unreadable).
ExperimentConfig load_experiment(const std::string& path);

/// Fully resolved document, defaults included.
Json to_json(const ExperimentConfig& cfg);

/// Pretty-printed JSON with a trailing newline.
std::string dump_config(const ExperimentConfig& cfg);

}  // namespace npde::app
