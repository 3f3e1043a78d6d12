#include <doctest.h>

#include <filesystem>
#include <sstream>

#include "cli.hpp"
#include "experiment.hpp"
#include "npde/binio.hpp"
#include "npde/error.hpp"

using namespace npde;
using namespace npde::app;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  Run r;
  r.code = run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

/// Fresh directory per test case, removed on exit.
struct Scratch {
  fs::path dir;
  explicit Scratch(const std::string& name) : dir(fs::temp_directory_path() / ("npde_cli_" + name)) {
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Scratch() { fs::remove_all(dir); }
  std::string path(const std::string& rel) const { return (dir / rel).string(); }
  std::string write(const std::string& rel, const std::string& text) const {
    binio::write_file(path(rel), text);
    return path(rel);
  }
};

const char* kTinyConfig = R"({
  "data": {"nx": 32, "ny": 32, "n_traj": 2, "n_steps": 8, "burn_in": 2, "seed": 4},
  "model": {"family": "unet_mod", "hidden_channels": 4, "history": 2, "seed": 1},
  "train": {"epochs": 2, "batch": 4, "lr_max": 1e-3, "val_fraction": 0.5, "eval_batch": 8},
  "paths": {"dataset": "ds.npde", "checkpoint": "run/model.npdm",
            "metrics": "run/metrics.csv", "analysis": "run/analysis"}
})";

/// Value of a `key=value` line in command output.
std::string value_of(const std::string& text, const std::string& key) {
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind(key + "=", 0) == 0) return line.substr(key.size() + 1);
  }
  return "";
}

std::size_t count_lines(const std::string& text) {
  return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("experiment config parsing") {
  SUBCASE("defaults") {
    const ExperimentConfig c = experiment_from_json(Json::object());
    CHECK(c.data.n_traj == 32);
    CHECK(c.data.solver == SolverConfig{});
    CHECK(c.model == ModelSpec{});
    CHECK(c.train == TrainConfig{});
    CHECK(c.paths.dataset == "dataset.npde");
  }
  SUBCASE("fields and relative paths") {
    const Json j = parse_json(kTinyConfig, "cfg");
    const ExperimentConfig c = experiment_from_json(j, "/base/dir");
    CHECK(c.data.solver.nx == 32);
    CHECK(c.data.solver.burn_in == 2);
    CHECK(c.model.family == Family::unet_mod);
    CHECK(c.train.lr_max == 1e-3);
    CHECK_FALSE(c.train.warmup_steps.has_value());
    CHECK(c.paths.dataset == "/base/dir/ds.npde");
    CHECK(c.paths.checkpoint == "/base/dir/run/model.npdm");
    CHECK(c.paths.bench == "/base/dir/bench.csv");
  }
  SUBCASE("null selects the derived default") {
    const Json j = parse_json(R"({"train": {"lr_max": null, "warmup_steps": 7}})", "cfg");
    const ExperimentConfig c = experiment_from_json(j);
    CHECK_FALSE(c.train.lr_max.has_value());
    CHECK(c.train.warmup_steps == std::size_t{7});
  }
  SUBCASE("resolved document round-trips") {
    ExperimentConfig c = experiment_from_json(parse_json(kTinyConfig, "cfg"), "/x");
    c.train.lr_max.reset();
    const Json resolved = to_json(c);
    CHECK(resolved["train"]["lr_max"] == 2e-4);
    const ExperimentConfig back = experiment_from_json(resolved);
    CHECK(back.data.solver == c.data.solver);
    CHECK(back.model == c.model);
    CHECK(back.paths.metrics == c.paths.metrics);
    CHECK(back.train.lr_max == 2e-4);
  }
  SUBCASE("errors name the field") {
    auto fails_with = [](const char* text, const char* field) {
      CHECK_THROWS_WITH_AS(experiment_from_json(parse_json(text, "cfg")),
                           doctest::Contains(field), ConfigError);
    };
    fails_with(R"({"data": {"f_range": [0.5, 0.2]}})", "data.f_range");
    fails_with(R"({"data": {"nx": 30}})", "data.nx");
    fails_with(R"({"data": {"n_trajs": 3}})", "data.n_trajs");
    fails_with(R"({"model": {"hidden": 3}})", "model.hidden");
    fails_with(R"({"train": {"epochs": -1}})", "train.epochs");
    fails_with(R"({"train": {"batch": 0}})", "train.batch");
    fails_with(R"({"paths": {"output": "x"}})", "paths.output");
    fails_with(R"({"extra": {}})", "extra");
    fails_with(R"({"data": {"f_range": [0.2]}})", "data.f_range");
  }
  SUBCASE("seed override") {
    ExperimentConfig c;
    c.override_seed(99);
    CHECK(c.data.solver.seed == 99);
    CHECK(c.model.seed == 99);
    CHECK(c.train.seed == 99);
  }
}

TEST_CASE("command line errors") {
  CHECK(cli({}).code == 2);
  CHECK(cli({"frobnicate"}).code == 2);
  CHECK(cli({"generate", "--bogus"}).code == 2);
  const Run help = cli({"--help"});
  CHECK(help.code == 0);
  CHECK(help.out.find("generate") != std::string::npos);
  CHECK(cli({"generate"}).code == 2);
  CHECK(cli({"generate", "--config", "/nonexistent/cfg.json"}).code == 3);

  Scratch s("errors");
  const std::string bad = s.write("bad.json", "{ not json");
  CHECK(cli({"generate", "--config", bad}).code == 2);
  const std::string reversed = s.write("rev.json", R"({"data": {"f_range": [0.5, 0.2]}})");
  const Run r = cli({"generate", "--config", reversed});
  CHECK(r.code == 2);
  CHECK(r.err.find("data.f_range") != std::string::npos);
}

TEST_CASE("generate, train, eval and analyze") {
  Scratch s("pipeline");
  const std::string cfg = s.write("cfg.json", kTinyConfig);

  const Run gen = cli({"generate", "--config", cfg});
  REQUIRE(gen.code == 0);
  CHECK(value_of(gen.out, "trajectories") == "2");
  CHECK(value_of(gen.out, "grid") == "32x32");
  CHECK(!value_of(gen.out, "field0.mean").empty());
  const Dataset ds = read_dataset(s.path("ds.npde"));
  CHECK(ds.n_traj == 2);
  CHECK(ds.nx == 32);
  CHECK(ds.ny == 32);
  CHECK(ds.n_steps == 8);
  const std::string first = binio::read_file(s.path("ds.npde"));
  CHECK(fs::exists(s.path("ds.npde.config.json")));

  SUBCASE("generation is reproducible and seeded") {
    REQUIRE(cli({"generate", "--config", cfg}).code == 0);
    CHECK(binio::read_file(s.path("ds.npde")) == first);
    REQUIRE(cli({"generate", "--config", cfg, "--seed", "5", "--workers", "1"}).code == 0);
    CHECK(binio::read_file(s.path("ds.npde")) != first);
    const Json resolved = parse_json(binio::read_file(s.path("ds.npde.config.json")), "resolved");
    CHECK(resolved["data"]["seed"] == 5);
    CHECK(resolved["model"]["seed"] == 5);
    CHECK(resolved["train"]["seed"] == 5);
  }

  SUBCASE("train, then eval and analyze the checkpoint") {
    const Run tr = cli({"train", "--config", cfg});
    REQUIRE(tr.code == 0);
    const std::string csv = binio::read_file(s.path("run/metrics.csv"));
    CHECK(count_lines(csv) == 1 + 2);
    const std::string ckpt = binio::read_file(s.path("run/model.npdm"));
    const Json resolved =
        parse_json(binio::read_file(s.path("run/model.npdm.config.json")), "resolved");
    CHECK(resolved["train"]["lr_max"] == 1e-3);
    CHECK(resolved["train"]["warmup_steps"].is_number_integer());

    // Identical inputs give byte-identical outputs.
    REQUIRE(cli({"train", "--config", cfg}).code == 0);
    CHECK(binio::read_file(s.path("run/model.npdm")) == ckpt);
    CHECK(binio::read_file(s.path("run/metrics.csv")) == csv);

    const Run ev = cli({"eval", "--config", cfg});
    REQUIRE(ev.code == 0);
    const double trained = std::stod(value_of(tr.out, "val_onestep"));
    const double evaluated = std::stod(value_of(ev.out, "onestep"));
    CHECK(std::abs(evaluated - trained) <= 1e-9 * std::abs(trained));
    CHECK(value_of(ev.out, "rollout").empty());

    // n_steps 8 leaves no window for history 2 plus 7 rollout steps.
    std::string long_roll = kTinyConfig;
    long_roll.replace(long_roll.find("\"eval_batch\""), 0, "\"rollout_steps\": 7, ");
    CHECK(cli({"eval", "--config", s.write("long.json", long_roll), "--rollout"}).code == 2);
    const Run roll = cli({"eval", "--config", cfg, "--rollout", "--split", "all"});
    REQUIRE(roll.code == 0);
    CHECK(std::stod(value_of(roll.out, "rollout")) > 0.0);

    const Run an = cli({"analyze", "--config", cfg});
    REQUIRE(an.code == 0);
    CHECK(value_of(an.out, "spectra") == "4");
    for (std::size_t l = 0; l < 4; ++l) {
      const std::string stem = s.path("run/analysis/spectrum_level" + std::to_string(l));
      const std::string csv_l = binio::read_file(stem + ".csv");
      CHECK(count_lines(csv_l) == (32u >> l));
      const std::string pgm = binio::read_file(stem + ".pgm");
      const std::string side = std::to_string(32u >> l);
      CHECK(pgm.rfind("P5\n" + side + " " + side + "\n255\n", 0) == 0);
    }
    const std::string report = binio::read_file(s.path("run/analysis/report.txt"));
    CHECK(std::stod(value_of(report, "conv_theorem_max_dev")) < 1e-10);
    CHECK(!value_of(report, "conv_theorem_2d_max_dev").empty());
  }

  SUBCASE("train failures") {
    fs::remove(s.path("ds.npde"));
    CHECK(cli({"train", "--config", cfg}).code == 3);
    REQUIRE(cli({"generate", "--config", cfg}).code == 0);
    std::string two = kTinyConfig;
    two.replace(two.find("\"history\""), 0, "\"in_fields\": 2, \"out_fields\": 2, ");
    const Run r = cli({"train", "--config", s.write("two.json", two)});
    CHECK(r.code == 2);
    CHECK(r.err.find("field") != std::string::npos);
  }
}

TEST_CASE("eval and analyze edge cases") {
  Scratch s("edges");

  // All-zero dataset and an all-zero model: predictions match exactly.
  Dataset ds;
  ds.n_traj = 2;
  ds.n_steps = 7;
  ds.n_fields = 3;
  ds.ny = ds.nx = 16;
  ds.dt_save = 0.25;
  ds.param_dim = 1;
  ds.mean.assign(3, 0.0);
  ds.stddev.assign(3, 1.0);
  ds.params = {0.2, 0.3};
  ds.data.assign(std::size_t{2} * 7 * ds.frame_size(), 0.0f);
  write_dataset(ds, s.path("zero.npde"));

  ModelSpec spec;
  spec.family = Family::fno;
  spec.hidden_channels = 4;
  spec.fno_modes = {2, 2};
  spec.fno_layers = 1;
  spec.history = 2;
  Model<float> zero(spec);
  for (auto& [name, t] : zero.parameters()) {
    for (auto& v : t.data()) v = 0.0f;
  }
  write_checkpoint(zero, s.path("zero.npdm"));

  const Run r = cli({"eval", "--checkpoint", s.path("zero.npdm"), "--dataset", s.path("zero.npde"),
                     "--rollout"});
  REQUIRE(r.code == 0);
  CHECK(value_of(r.out, "onestep") == "0");
  CHECK(value_of(r.out, "rollout") == "0");

  CHECK(cli({"eval", "--checkpoint", s.path("zero.npdm")}).code == 2);
  CHECK(cli({"eval", "--checkpoint", s.path("missing.npdm"), "--dataset", s.path("zero.npde")})
            .code == 3);
  CHECK(cli({"eval", "--checkpoint", s.path("zero.npdm"), "--dataset", s.path("zero.npde"),
             "--split", "bogus"})
            .code == 2);

  // Dataset with two fields against a three-field checkpoint.
  Dataset two = ds;
  two.n_fields = 2;
  two.mean.resize(2);
  two.stddev.resize(2);
  two.data.resize(std::size_t{2} * 7 * two.frame_size());
  write_dataset(two, s.path("two.npde"));
  CHECK(cli({"eval", "--checkpoint", s.path("zero.npdm"), "--dataset", s.path("two.npde")}).code ==
        2);

  binio::write_file(s.path("garbage.npdm"), "NPDX garbage");
  CHECK(cli({"eval", "--checkpoint", s.path("garbage.npdm"), "--dataset", s.path("zero.npde")})
            .code == 3);

  const Run fno = cli({"analyze", "--checkpoint", s.path("zero.npdm"), "--out", s.path("an")});
  CHECK(fno.code == 2);
  CHECK(fno.err.find("U-Net") != std::string::npos);
  CHECK_FALSE(fs::exists(s.path("an/report.txt")));
}

TEST_CASE("bench command") {
  Scratch s("bench");
  const std::string cfg = s.write(
      "cfg.json", R"({"model": {"family": "resnet", "hidden_channels": 4, "history": 1},
                      "paths": {"bench": "out/bench.csv"}})");
  const Run refused = cli({"bench", "--config", cfg, "--workers", "2"});
  CHECK(refused.code == 2);
  CHECK(refused.err.find("serial") != std::string::npos);

  const Run r = cli({"bench", "--config", cfg, "--iters", "1", "--warmup", "0", "--batch", "1",
                     "--grid", "16", "16", "--workers", "1"});
  REQUIRE(r.code == 0);
  const std::string csv = binio::read_file(s.path("out/bench.csv"));
  CHECK(csv == r.out);
  CHECK(csv.rfind("model,params,fwd_us,fwd_bwd_us,mem_mb\nresnet4,", 0) == 0);
  CHECK(count_lines(csv) == 2);
}

}  // TEST_SUITE
