#include <doctest.h>

#include <sstream>

#include "npde/bench.hpp"
#include "npde/error.hpp"

using namespace npde;

TEST_SUITE("bench") {

TEST_CASE("FNO128 with 8 modes occupies about 134 MB of parameters") {
  ModelSpec s;
  s.family = Family::fno;
  s.hidden_channels = 128;
  s.fno_modes = {8, 8};
  s.fno_layers = 8;
  const double mb = 4.0 * static_cast<double>(count_parameters(s)) / 1e6;
  CHECK(mb == doctest::Approx(134.0).epsilon(0.02));
}

TEST_CASE("a single timed iteration gives a well-formed record") {
  ModelSpec s;
  s.family = Family::resnet;
  s.hidden_channels = 4;
  s.history = 1;
  BenchOptions o;
  o.batch = 2;
  o.iters = 1;
  o.warmup = 0;
  o.height = o.width = 16;
  const BenchRecord r = bench_model(s, o);
  CHECK(r.model == "resnet4");
  CHECK(r.params == count_parameters(s));
  CHECK(r.mem_mb == 4.0 * static_cast<double>(r.params) / 1e6);
  CHECK(r.iters == 1);
  CHECK(r.warmup == 0);
  CHECK(r.fwd_us > 0.0);
  CHECK(r.fwd_bwd_us > 0.0);

  std::ostringstream csv;
  write_bench_csv({r, r}, csv);
  std::istringstream in(csv.str());
  std::string line;
  std::getline(in, line);
  CHECK(line == "model,params,fwd_us,fwd_bwd_us,mem_mb");
  int rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    CHECK(std::count(line.begin(), line.end(), ',') == 4);
    CHECK(line.rfind("resnet4," + std::to_string(r.params) + ",", 0) == 0);
  }
  CHECK(rows == 2);
}

TEST_CASE("conditioned and spectral models benchmark too") {
  ModelSpec s;
  s.family = Family::unet_mod;
  s.hidden_channels = 4;
  s.history = 1;
  s.conditioning = ConditioningMode::adagn;
  BenchOptions o;
  o.batch = 1;
  o.iters = 1;
  o.warmup = 1;
  o.height = o.width = 16;
  const BenchRecord r = bench_model(s, o);
  CHECK(r.model == "unet_mod4-adagn");
  CHECK(r.fwd_bwd_us > 0.0);

  ModelSpec f;
  f.family = Family::fno;
  f.hidden_channels = 4;
  f.fno_modes = {2, 2};
  f.fno_layers = 1;
  CHECK(bench_label(f) == "fno4-m2x2");
}

TEST_CASE("doubling ResNet channels roughly quadruples the parameters") {
  ModelSpec s;
  s.family = Family::resnet;
  for (std::size_t c : {32u, 64u, 128u}) {
    s.hidden_channels = c;
    const double small = static_cast<double>(count_parameters(s));
    s.hidden_channels = 2 * c;
    const double ratio = static_cast<double>(count_parameters(s)) / small;
    CHECK(ratio >= 3.5);
    CHECK(ratio <= 4.5);
  }
}

TEST_CASE("invalid options") {
  ModelSpec s;
  s.family = Family::unet_mod;
  s.hidden_channels = 4;
  BenchOptions o;
  o.iters = 0;
  CHECK_THROWS_AS(bench_model(s, o), ConfigError);
  o.iters = 1;
  o.height = o.width = 20;
  CHECK_THROWS_AS(bench_model(s, o), ConfigError);
}

}  // TEST_SUITE
