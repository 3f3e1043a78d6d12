#include <doctest.h>

#include <cmath>
#include <complex>
#include <filesystem>
#include <sstream>

#include "npde/analysis.hpp"
#include "npde/binio.hpp"
#include "npde/error.hpp"
#include "npde/fft.hpp"
#include "npde/rng.hpp"

using namespace npde;
using namespace npde::analysis;

namespace {

std::vector<double> random_vector(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

std::vector<double> delta(std::size_t n) {
  std::vector<double> v(n, 0.0);
  v[0] = 1.0;
  return v;
}

ModelSpec tiny_unet() {
  ModelSpec s;
  s.family = Family::unet_mod;
  s.hidden_channels = 4;
  s.final_norm_groups = 4;
  s.seed = 5;
  return s;
}

}  // namespace

TEST_SUITE("analysis") {

TEST_CASE("circulant matrix layout") {
  const auto id = circulant_matrix(delta(8));
  for (std::size_t i = 0; i < 8; ++i) {
    for (std::size_t j = 0; j < 8; ++j) CHECK(id(i, j) == (i == j ? 1.0 : 0.0));
  }
  const auto c = circulant_matrix({1.0, 2.0, 3.0});
  CHECK(c.data == std::vector<double>{1, 3, 2, 2, 1, 3, 3, 2, 1});
}

TEST_CASE("circulant product is circular convolution") {
  Rng rng(1);
  const auto w = random_vector(8, rng), f = random_vector(8, rng);
  const auto c = circulant_matrix(w);
  const auto g = circular_convolve(w, f);
  for (std::size_t i = 0; i < 8; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < 8; ++j) s += c(i, j) * f[j];
    CHECK(std::abs(s - g[i]) < 1e-12);
    // Written out with explicit cyclic indices.
    double t = 0.0;
    for (std::size_t m = 0; m < 8; ++m) t += w[m] * f[(i + 8 - m) % 8];
    CHECK(std::abs(t - g[i]) < 1e-12);
  }
}

TEST_CASE("DFT diagonalizes circulant matrices") {
  Rng rng(2);
  for (std::size_t n : {4u, 8u, 16u}) {
    const auto d = dft_diagonalization(random_vector(n, rng));
    CHECK(d.offdiag < 1e-9);
    CHECK(d.diag_error < 1e-9);
  }
}

TEST_CASE("convolution theorem") {
  Rng rng(3);
  double worst = 0.0;
  for (std::size_t n : {8u, 16u, 32u}) {
    for (int rep = 0; rep < 100; ++rep) {
      worst = std::max(worst, conv_theorem_check(random_vector(n, rng), random_vector(n, rng)));
    }
  }
  CHECK(worst < 1e-10);

  const auto f = random_vector(16, rng);
  CHECK(conv_theorem_check(delta(16), f) < 1e-15);
  const auto fft_side = convolve_fft(delta(16), f);
  for (std::size_t i = 0; i < 16; ++i) CHECK(std::abs(fft_side[i] - f[i]) < 1e-15);
  CHECK(conv_theorem_check(random_vector(16, rng), std::vector<double>(16, 0.0)) == 0.0);

  CHECK_THROWS_AS(conv_theorem_check(std::vector<double>(8), std::vector<double>(16)),
                  DimensionError);
  CHECK_THROWS_AS(conv_theorem_check(std::vector<double>(12), std::vector<double>(12)),
                  DimensionError);
}

TEST_CASE("2-D circular convolution against spectral evaluation") {
  Rng rng(4);
  for (std::size_t k : {1u, 3u, 5u}) {
    for (int rep = 0; rep < 5; ++rep) {
      const auto kernel = random_vector(k * k, rng);
      const auto field = random_vector(16 * 16, rng);
      CHECK(conv2d_theorem_check(kernel, k, field, 16, 16) < 1e-10);
    }
  }
  CHECK(conv2d_theorem_check(random_vector(9, rng), 3, random_vector(8 * 32, rng), 8, 32) < 1e-10);
  CHECK_THROWS_AS(conv2d_theorem_check(random_vector(4, rng), 2, random_vector(256, rng), 16, 16),
                  DimensionError);
}

TEST_CASE("filter spectra of simple kernels") {
  SUBCASE("delta kernels are flat") {
    std::vector<double> filters(4 * 9, 0.0);
    for (std::size_t f = 0; f < 4; ++f) filters[f * 9 + 4] = 1.0;
    const auto s = filter_spectrum(filters, 4, 3, 3, 8, 16);
    for (double m : s.magnitude) CHECK(m == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("zero layer") {
    const auto s = filter_spectrum(std::vector<double>(2 * 9, 0.0), 2, 3, 3, 8, 8);
    for (double m : s.magnitude) CHECK(m == 0.0);
  }
  SUBCASE("known kernel against an FFT of the embedded array") {
    const std::vector<double> k{0.1, -0.4, 0.25, 0.9, 0.3, -0.7, 0.05, 0.6, -0.2};
    const std::size_t H = 8, W = 16;
    const auto s = filter_spectrum(k, 1, 3, 3, H, W);
    std::vector<std::complex<double>> grid(H * W, 0.0);
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t c = 0; c < 3; ++c) grid[r * W + c] = k[r * 3 + c];
    for (std::size_t r = 0; r < H; ++r) fft::transform(grid.data() + r * W, W, false);
    std::vector<std::complex<double>> col(H);
    for (std::size_t c = 0; c < W; ++c) {
      for (std::size_t r = 0; r < H; ++r) col[r] = grid[r * W + c];
      fft::transform(col.data(), H, false);
      for (std::size_t r = 0; r < H; ++r) CHECK(std::abs(s.at(r, c) - std::abs(col[r])) < 1e-9);
    }
  }
  SUBCASE("sign flip invariance and averaging") {
    Rng rng(6);
    const auto a = random_vector(9, rng), b = random_vector(9, rng);
    std::vector<double> both(a);
    both.insert(both.end(), b.begin(), b.end());
    std::vector<double> flipped(both);
    for (auto& v : flipped) v = -v;
    const auto s = filter_spectrum(both, 2, 3, 3, 8, 8);
    const auto t = filter_spectrum(flipped, 2, 3, 3, 8, 8);
    CHECK(s.magnitude == t.magnitude);
    const auto sa = filter_spectrum(a, 1, 3, 3, 8, 8), sb = filter_spectrum(b, 1, 3, 3, 8, 8);
    for (std::size_t i = 0; i < s.magnitude.size(); ++i) {
      CHECK(s.magnitude[i] == doctest::Approx(0.5 * (sa.magnitude[i] + sb.magnitude[i])));
    }
  }
  CHECK_THROWS_AS(filter_spectrum(std::vector<double>(9), 2, 3, 3, 8, 8), DimensionError);
  CHECK_THROWS_AS(filter_spectrum(std::vector<double>(25), 1, 5, 5, 4, 4), DimensionError);
}

TEST_CASE("model filter spectra halve per block") {
  Model<double> m(tiny_unet());
  const auto spectra = filter_spectrum(m, 32, 64);
  REQUIRE(spectra.size() == m.down_block_first_convs().size());
  REQUIRE(spectra.size() == 4);
  for (std::size_t l = 0; l < spectra.size(); ++l) {
    CHECK(spectra[l].level == l);
    CHECK(spectra[l].height == (32u >> l));
    CHECK(spectra[l].width == (64u >> l));
    CHECK(spectra[l].layer == m.down_block_first_convs()[l]);
    for (double v : spectra[l].magnitude) CHECK(std::isfinite(v));
  }
  CHECK_THROWS_AS(filter_spectrum(m, 12, 64), DimensionError);

  ModelSpec fno;
  fno.family = Family::fno;
  fno.hidden_channels = 4;
  fno.fno_modes = {2, 2};
  fno.fno_layers = 1;
  CHECK_THROWS_AS(filter_spectrum(Model<double>(fno), 16, 16), UsageError);
}

TEST_CASE("spectrum export") {
  FilterSpectrum s;
  s.height = 2;
  s.width = 3;
  s.magnitude = {0.0, 0.5, 1.0, 2.0, 0.25, 1.0 / 3.0};
  std::ostringstream csv;
  write_spectrum_csv(s, csv);
  CHECK(csv.str() == "0,0.5,1\n2,0.25,0.333333333\n");

  const std::string pgm = spectrum_pgm(s);
  const std::string header = "P5\n3 2\n255\n";
  REQUIRE(pgm.size() == header.size() + 6);
  CHECK(pgm.substr(0, header.size()) == header);
  const auto px = [&](std::size_t i) { return static_cast<unsigned char>(pgm[header.size() + i]); };
  CHECK(px(0) == 0);
  CHECK(px(2) == 128);
  CHECK(px(3) == 255);
  CHECK(px(4) == 32);

  const auto dir = std::filesystem::temp_directory_path() / "npde_analysis_test";
  std::filesystem::create_directories(dir);
  write_spectrum_pgm(s, (dir / "s.pgm").string());
  write_spectrum_csv(s, (dir / "s.csv").string());
  CHECK(binio::read_file((dir / "s.pgm").string()) == pgm);
  CHECK(binio::read_file((dir / "s.csv").string()) == csv.str());
  std::filesystem::remove_all(dir);
  CHECK_THROWS_AS(write_spectrum_pgm(s, "/nonexistent_dir/x.pgm"), IoError);
}

}  // TEST_SUITE
