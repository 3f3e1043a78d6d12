#pragma once

#include <complex>
#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

#include "npde/models.hpp"

namespace npde::analysis {

/// Dense row-major n x n matrix.
struct Matrix {
  std::size_t n = 0;
  std::vector<double> data;

  double operator()(std::size_t i, std::size_t j) const { return data[i * n + j]; }
};

/// C[i][j] = w[(i - j) mod n], so C * f is the circular convolution w * f.
Matrix circulant_matrix(const std::vector<double>& w);

/// g[i] = sum_j w[(i - j) mod n] f[j], evaluated by the double loop.
std::vector<double> circular_convolve(const std::vector<double>& w, const std::vector<double>& f);

/// Fourier-side evaluation W^-1 diag(W w) W f of the same convolution.
std::vector<double> convolve_fft(const std::vector<double>& w, const std::vector<double>& f);

/// max_i |(C_w f)_i - (W^-1 D W f)_i|. Lengths must match and be powers of two.
double conv_theorem_check(const std::vector<double>& w, const std::vector<double>& f);

struct Diagonalization {
  /// Frobenius norm of the off-diagonal part of W C_w W^H / n.
  double offdiag = 0.0;
  /// max |diag - DFT(w)|.
  double diag_error = 0.0;
};

/// Checks that the DFT matrix diagonalizes C_w with the spectrum of w on
/// the diagonal (dense O(n^3) evaluation).
Diagonalization dft_diagonalization(const std::vector<double>& w);

/// max |conv2d(f, kernel) - spectral evaluation| for a circularly padded
/// k x k cross-correlation of an H x W plane (H, W powers of two).
double conv2d_theorem_check(const std::vector<double>& kernel, std::size_t k,
                            const std::vector<double>& f, std::size_t height, std::size_t width);

/// Mean absolute Fourier magnitude of one layer's k x k filters, each
/// zero-embedded in a height x width grid. Rows are y-modes, columns x-modes.
struct FilterSpectrum {
  std::string layer;
  std::size_t level = 0;
  std::size_t height = 0, width = 0;
  std::vector<double> magnitude;

  double at(std::size_t ky, std::size_t kx) const { return magnitude[ky * width + kx]; }
};

/// Spectrum of a stack of filters [cout, cin, kh, kw] on a height x width grid.
FilterSpectrum filter_spectrum(const std::vector<double>& filters, std::size_t count,
                               std::size_t kh, std::size_t kw, std::size_t height,
                               std::size_t width);

/// One spectrum per down-block first conv; level l uses the feature-map grid
/// (height >> l, width >> l). Throws UsageError for non-U-Net models.
template <typename T>
std::vector<FilterSpectrum> filter_spectrum(const Model<T>& model, std::size_t height,
                                            std::size_t width);

/// CSV grid: one line per y-mode, comma separated x-modes.
void write_spectrum_csv(const FilterSpectrum& s, std::ostream& out);
void write_spectrum_csv(const FilterSpectrum& s, const std::string& path);

/// Binary PGM (P5), linearly scaled so the largest magnitude is 255.
std::string spectrum_pgm(const FilterSpectrum& s);
void write_spectrum_pgm(const FilterSpectrum& s, const std::string& path);

}  // namespace npde::analysis
