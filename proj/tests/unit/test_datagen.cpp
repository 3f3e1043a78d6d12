#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>

#include "npde/binio.hpp"
#include "npde/datagen.hpp"
#include "npde/error.hpp"

using namespace npde;

namespace {

SolverConfig small_config(std::size_t n = 32) {
  SolverConfig cfg;
  cfg.nx = n;
  cfg.ny = n;
  return cfg;
}

std::vector<double> grid_field(const SolverConfig& cfg, const std::function<double(double, double)>& f) {
  std::vector<double> out(cfg.nx * cfg.ny);
  for (std::size_t r = 0; r < cfg.ny; ++r)
    for (std::size_t c = 0; c < cfg.nx; ++c) {
      const double x = cfg.length * double(c) / double(cfg.nx);
      const double y = cfg.length * double(r) / double(cfg.ny);
      out[r * cfg.nx + c] = f(x, y);
    }
  return out;
}

double l2(const std::vector<double>& a) {
  double s = 0;
  for (double v : a) s += v * v;
  return std::sqrt(s);
}

double l2_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

double mean(const double* p, std::size_t n) {
  double s = 0;
  for (std::size_t i = 0; i < n; ++i) s += p[i];
  return s / double(n);
}

std::vector<double> integrate(const SolverConfig& cfg, std::vector<double> omega, std::size_t steps) {
  VorticitySolver solver(cfg);
  auto w = solver.to_spectral(omega);
  solver.dealias(w);
  for (std::size_t i = 0; i < steps; ++i) w = solver.step(w);
  return solver.to_physical(w);
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("npde_datagen_" + name)).string();
}

}  // namespace

TEST_SUITE("datagen") {
  TEST_CASE("zero state stays exactly zero") {
    auto cfg = small_config();
    VorticitySolver solver(cfg);
    auto w = solver.empty();
    for (int i = 0; i < 10; ++i) w = solver.step(w);
    for (double v : w.data) CHECK(v == 0.0);
  }

  TEST_CASE("single Fourier mode decays at the viscous rate") {
    auto cfg = small_config();
    cfg.viscosity = 1e-2;
    const double A = 0.7, k = 3.0;
    auto w0 = grid_field(cfg, [&](double x, double) { return A * std::cos(k * x); });
    const std::size_t steps = 100;
    auto w = integrate(cfg, w0, steps);
    const double T = cfg.dt * double(steps);
    const double expected = A * std::exp(-cfg.viscosity * k * k * T);
    // Amplitude from the projection onto cos(kx).
    double proj = 0, norm = 0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      proj += w[i] * w0[i];
      norm += w0[i] * w0[i];
    }
    const double amp = A * proj / norm;
    CHECK(std::abs(amp - expected) / expected < 1e-5);
    std::vector<double> exact(w0);
    for (auto& v : exact) v *= expected / A;
    CHECK(l2_diff(w, exact) / l2(exact) < 1e-5);
  }

  TEST_CASE("Taylor-Green vortex matches the closed form") {
    auto cfg = small_config();
    cfg.viscosity = 5e-2;
    auto tg = [](double amp) {
      return [amp](double x, double y) { return 2.0 * amp * std::cos(x) * std::cos(y); };
    };
    const std::size_t steps = 50;
    auto w = integrate(cfg, grid_field(cfg, tg(1.0)), steps);
    const double T = cfg.dt * double(steps);
    auto exact = grid_field(cfg, tg(std::exp(-2.0 * cfg.viscosity * T)));
    CHECK(l2_diff(w, exact) / l2(exact) < 1e-4);
  }

  TEST_CASE("observed time-stepping order is at least 3.5") {
    auto cfg = small_config();
    cfg.force = 0.4;
    const auto w0 = initial_vorticity(cfg, 11);
    const double T = 1.6;
    std::vector<std::vector<double>> sol;
    for (double dt : {0.1, 0.05, 0.025}) {
      auto c = cfg;
      c.dt = dt;
      sol.push_back(integrate(c, w0, static_cast<std::size_t>(std::lround(T / dt))));
    }
    const double e1 = l2_diff(sol[0], sol[1]);
    const double e2 = l2_diff(sol[1], sol[2]);
    const double order = std::log2(e1 / e2);
    MESSAGE("observed order " << order << " (differences " << e1 << ", " << e2 << ")");
    CHECK(e2 > 1e-13 * l2(sol[2]));
    CHECK(order >= 3.5);
  }

  TEST_CASE("recovered velocity is divergence free") {
    auto cfg = small_config();
    cfg.force = 0.5;
    cfg.n_steps = 4;
    cfg.burn_in = 5;
    cfg.seed = 3;
    VorticitySolver solver(cfg);
    const auto t = generate_trajectory(cfg);
    const std::size_t plane = cfg.nx * cfg.ny;
    for (std::size_t s = 0; s < t.n_steps; ++s) {
      std::vector<double> u(t.field(s, 1), t.field(s, 1) + plane);
      std::vector<double> v(t.field(s, 2), t.field(s, 2) + plane);
      CHECK(solver.divergence(u, v) <= 1e-8);
    }
  }

  TEST_CASE("snapshots are mean free and the zero mode does not drift") {
    auto cfg = small_config();
    cfg.force = 0.5;
    cfg.n_steps = 20;
    cfg.burn_in = 10;
    cfg.seed = 5;
    const auto t = generate_trajectory(cfg);
    const std::size_t plane = cfg.nx * cfg.ny;
    const double m0 = mean(t.field(0, 0), plane);
    CHECK(std::abs(m0) <= 1e-10);
    for (std::size_t s = 0; s < t.n_steps; ++s) {
      const double m = mean(t.field(s, 0), plane);
      CHECK(std::abs(m) <= 1e-10);
      CHECK(std::abs(m - m0) <= 1e-12);
    }
    const auto f = grid_field(cfg, [&](double, double y) { return cfg.force * std::cos(4.0 * y); });
    CHECK(std::abs(mean(f.data(), f.size())) < 1e-12);
  }

  TEST_CASE("unforced enstrophy never increases") {
    auto cfg = small_config();
    cfg.force = 0.0;
    cfg.n_steps = 8;
    cfg.burn_in = 5;
    const std::size_t plane = cfg.nx * cfg.ny;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      cfg.seed = seed;
      const auto t = generate_trajectory(cfg);
      double prev = INFINITY;
      for (std::size_t s = 0; s < t.n_steps; ++s) {
        double z = 0;
        for (std::size_t i = 0; i < plane; ++i) z += t.field(s, 0)[i] * t.field(s, 0)[i];
        CHECK(z <= prev + 1e-8);
        prev = z;
      }
    }
  }

  TEST_CASE("CFL violation reports the Courant number") {
    auto cfg = small_config();
    cfg.dt = 2.0;
    VorticitySolver solver(cfg);
    auto w = solver.to_spectral(initial_vorticity(cfg, 1));
    solver.dealias(w);
    const double c = solver.courant(w);
    REQUIRE(c > cfg.max_courant);
    try {
      solver.step(w);
      FAIL("expected StepSizeError");
    } catch (const StepSizeError& e) {
      CHECK(e.courant() == doctest::Approx(c));
      CHECK(std::string(e.what()).find("Courant") != std::string::npos);
    }
  }

  TEST_CASE("solver config validation") {
    auto cfg = small_config();
    cfg.nx = 48;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = small_config();
    cfg.viscosity = 0.0;
    CHECK_THROWS_AS(VorticitySolver{cfg}, ConfigError);
    cfg = small_config();
    auto wrong = VorticitySolver(small_config(16)).empty();
    CHECK_THROWS_AS(ns_vorticity_step(wrong, cfg), DimensionError);
  }

  TEST_CASE("initial vorticity is band limited with unit RMS") {
    auto cfg = small_config();
    const auto w = initial_vorticity(cfg, 9);
    CHECK(l2(w) / std::sqrt(double(w.size())) == doctest::Approx(1.0).epsilon(1e-12));
    VorticitySolver solver(cfg);
    const auto s = solver.to_spectral(w);
    const std::size_t half = cfg.nx / 2 + 1;
    double outside = 0;
    for (std::size_t r = 0; r < cfg.ny; ++r) {
      const double ky = r <= cfg.ny / 2 ? double(r) : double(r) - double(cfg.ny);
      for (std::size_t c = 0; c < half; ++c) {
        if (std::hypot(double(c), ky) > kInitialMaxMode) outside += std::abs(s.plane(0, 0)[r * half + c]);
      }
    }
    CHECK(outside < 1e-9);
  }

  TEST_CASE("trajectories are deterministic per seed") {
    auto cfg = small_config(16);
    cfg.n_steps = 3;
    cfg.burn_in = 2;
    cfg.seed = 42;
    const auto a = generate_trajectory(cfg);
    const auto b = generate_trajectory(cfg);
    CHECK(std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(double)) == 0);
    cfg.seed = 43;
    CHECK(generate_trajectory(cfg).data != a.data);
  }

  TEST_CASE("dataset generation is independent of worker count") {
    auto cfg = small_config(16);
    cfg.n_steps = 2;
    cfg.burn_in = 2;
    DatasetOptions one{true, 1}, two{true, 2};
    const auto a = generate_dataset(4, 0.2, 0.5, cfg, one);
    const auto b = generate_dataset(4, 0.2, 0.5, cfg, two);
    CHECK(a == b);
    CHECK(encode_dataset(a) == encode_dataset(b));
  }

  TEST_CASE("degenerate forcing range stores the bound") {
    auto cfg = small_config(16);
    cfg.n_steps = 2;
    cfg.burn_in = 1;
    const auto ds = generate_dataset(1, 0.3, 0.3, cfg);
    REQUIRE(ds.params.size() == 1);
    CHECK(ds.force(0) == 0.3);
    CHECK_THROWS_AS(generate_dataset(1, 0.5, 0.2, cfg), ConfigError);
    CHECK_THROWS_AS(generate_dataset(0, 0.2, 0.5, cfg), ConfigError);
  }

  TEST_CASE("normalized fields have unit std and zero mean") {
    auto cfg = small_config(16);
    cfg.n_steps = 3;
    cfg.burn_in = 2;
    const auto ds = generate_dataset(3, 0.2, 0.5, cfg);
    CHECK(ds.n_fields == 3);
    const std::size_t plane = std::size_t{ds.ny} * ds.nx;
    for (std::size_t f = 0; f < ds.n_fields; ++f) {
      double s = 0, ss = 0, n = 0;
      for (std::size_t t = 0; t < ds.n_traj; ++t)
        for (std::size_t k = 0; k < ds.n_steps; ++k) {
          const float* p = ds.frame(t, k) + f * plane;
          for (std::size_t i = 0; i < plane; ++i) {
            s += p[i];
            ss += double(p[i]) * p[i];
            n += 1;
          }
        }
      const double m = s / n;
      const double sd = std::sqrt(ss / n - m * m);
      CHECK(std::abs(sd - 1.0) <= 1e-6);
      CHECK(std::abs(m) <= 1e-6);
      CHECK(ds.stddev[f] > 0.0);
    }
  }

  TEST_CASE("uniform forcing draws have the right mean") {
    const auto f = sample_forces(1000, 0.2, 0.5, 7);
    double s = 0;
    for (double v : f) {
      CHECK(v >= 0.2);
      CHECK(v <= 0.5);
      s += v;
    }
    CHECK(std::abs(s / 1000.0 - 0.35) <= 0.01);
  }

  TEST_CASE("dataset files round trip bit exactly") {
    auto cfg = small_config(16);
    cfg.n_steps = 2;
    cfg.burn_in = 1;
    const auto ds = generate_dataset(2, 0.2, 0.5, cfg);
    const auto path = temp_path("roundtrip.npde");
    write_dataset(ds, path);
    const auto back = read_dataset(path);
    CHECK(back == ds);
    CHECK(encode_dataset(back) == binio::read_file(path));
    std::filesystem::remove(path);
  }

  TEST_CASE("corrupted dataset files raise format errors with offsets") {
    auto cfg = small_config(16);
    cfg.n_steps = 1;
    cfg.burn_in = 1;
    const auto bytes = encode_dataset(generate_dataset(1, 0.2, 0.2, cfg));

    auto message = [](const std::string& b) -> std::string {
      try {
        decode_dataset(b);
      } catch (const FormatError& e) {
        return e.what();
      }
      return "";
    };
    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    CHECK(message(bad_magic).find("magic") != std::string::npos);
    CHECK(message(bad_magic).find("offset 0") != std::string::npos);

    auto bad_version = bytes;
    bad_version[4] = 2;
    CHECK(message(bad_version).find("offset 4") != std::string::npos);

    CHECK(message(bytes.substr(0, 30)).find("truncated") != std::string::npos);
    CHECK(message(bytes.substr(0, bytes.size() - 3)).find("data block") != std::string::npos);
    CHECK(message(bytes + "x").find("data block") != std::string::npos);
    CHECK_THROWS_AS(read_dataset(temp_path("missing.npde")), IoError);
  }

  TEST_CASE("golden fixture parses per the byte layout") {
    const std::string path = std::string(NPDE_FIXTURE_DIR) + "/tiny_dataset.npde";
    const auto bytes = binio::read_file(path);
    REQUIRE(bytes.size() == 492);
    // Spot-check raw offsets independently of the decoder.
    auto u32_at = [&](std::size_t off) {
      std::uint32_t v;
      std::memcpy(&v, bytes.data() + off, 4);
      return v;
    };
    auto f64_at = [&](std::size_t off) {
      double v;
      std::memcpy(&v, bytes.data() + off, 8);
      return v;
    };
    CHECK(bytes.substr(0, 4) == "NPDE");
    CHECK(u32_at(4) == 1);
    CHECK(u32_at(8) == 2);
    CHECK(u32_at(24) == 4);
    CHECK(f64_at(28) == 0.25);
    CHECK(u32_at(36) == 50);
    CHECK(u32_at(40) == 1);
    CHECK(f64_at(44) == 0.5);
    CHECK(f64_at(68) == 1.0);
    CHECK(f64_at(92) == 0.2);

    const auto ds = decode_dataset(bytes, path);
    CHECK(ds.n_traj == 2);
    CHECK(ds.n_steps == 2);
    CHECK(ds.n_fields == 3);
    CHECK(ds.ny == 2);
    CHECK(ds.nx == 4);
    CHECK(ds.dt_save == 0.25);
    CHECK(ds.burn_in == 50);
    CHECK(ds.param_dim == 1);
    CHECK(ds.mean == std::vector<double>{0.5, -1.0, 2.0});
    CHECK(ds.stddev == std::vector<double>{1.0, 2.0, 4.0});
    CHECK(ds.params == std::vector<double>{0.2, 0.5});
    REQUIRE(ds.data.size() == 96);
    for (std::size_t i = 0; i < ds.data.size(); ++i) CHECK(ds.data[i] == 0.5f * float(i) - 3.0f);
    CHECK(ds.frame(1, 1)[0] == 0.5f * 72 - 3.0f);
    CHECK(encode_dataset(ds) == bytes);
  }
}
