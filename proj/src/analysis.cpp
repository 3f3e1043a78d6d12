#include "npde/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "npde/binio.hpp"
#include "npde/error.hpp"
#include "npde/fft.hpp"
#include "npde/kernels.hpp"

namespace npde::analysis {

namespace {

using cd = std::complex<double>;

void require_pair(const std::vector<double>& w, const std::vector<double>& f, const char* op) {
  if (w.size() != f.size()) {
    throw DimensionError(std::string(op) + ": filter has " + std::to_string(w.size()) +
                         " entries, signal " + std::to_string(f.size()));
  }
  if (!is_power_of_two(w.size())) {
    throw DimensionError(std::string(op) + ": length " + std::to_string(w.size()) +
                         " is not a power of two");
  }
}

std::vector<cd> forward(const std::vector<double>& x) {
  std::vector<cd> c(x.begin(), x.end());
  fft::transform(c.data(), c.size(), false);
  return c;
}

}  // namespace

Matrix circulant_matrix(const std::vector<double>& w) {
  const std::size_t n = w.size();
  Matrix c{n, std::vector<double>(n * n)};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) c.data[i * n + j] = w[(i + n - j) % n];
  }
  return c;
}

std::vector<double> circular_convolve(const std::vector<double>& w, const std::vector<double>& f) {
  if (w.size() != f.size()) throw DimensionError("circular_convolve: length mismatch");
  const std::size_t n = w.size();
  std::vector<double> g(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) g[i] += w[(i + n - j) % n] * f[j];
  }
  return g;
}

std::vector<double> convolve_fft(const std::vector<double>& w, const std::vector<double>& f) {
  require_pair(w, f, "convolve_fft");
  const std::size_t n = w.size();
  auto d = forward(w);
  auto c = forward(f);
  for (std::size_t k = 0; k < n; ++k) c[k] *= d[k];
  fft::transform(c.data(), n, true);
  std::vector<double> g(n);
  for (std::size_t i = 0; i < n; ++i) g[i] = c[i].real() / static_cast<double>(n);
  return g;
}

double conv_theorem_check(const std::vector<double>& w, const std::vector<double>& f) {
  require_pair(w, f, "conv_theorem_check");
  const Matrix c = circulant_matrix(w);
  const std::size_t n = w.size();
  const auto spectral = convolve_fft(w, f);
  double dev = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double direct = 0.0;
    for (std::size_t j = 0; j < n; ++j) direct += c(i, j) * f[j];
    dev = std::max(dev, std::abs(direct - spectral[i]));
  }
  return dev;
}

Diagonalization dft_diagonalization(const std::vector<double>& w) {
  const std::size_t n = w.size();
  if (n == 0) throw DimensionError("dft_diagonalization: empty filter");
  std::vector<cd> dft(n * n);
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t j = 0; j < n; ++j) {
      dft[k * n + j] = std::polar(1.0, -2.0 * M_PI * static_cast<double>((k * j) % n) / double(n));
    }
  }
  const Matrix c = circulant_matrix(w);
  // W C
  std::vector<cd> wc(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t l = 0; l < n; ++l) {
      for (std::size_t j = 0; j < n; ++j) wc[i * n + j] += dft[i * n + l] * c(l, j);
    }
  }
  // W C W^H / n
  Diagonalization out;
  double off2 = 0.0;
  const auto spectrum = forward(w);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      cd s = 0.0;
      for (std::size_t l = 0; l < n; ++l) s += wc[i * n + l] * std::conj(dft[j * n + l]);
      s /= static_cast<double>(n);
      if (i == j) {
        out.diag_error = std::max(out.diag_error, std::abs(s - spectrum[i]));
      } else {
        off2 += std::norm(s);
      }
    }
  }
  out.offdiag = std::sqrt(off2);
  return out;
}

double conv2d_theorem_check(const std::vector<double>& kernel, std::size_t k,
                            const std::vector<double>& f, std::size_t height, std::size_t width) {
  if (k % 2 == 0 || kernel.size() != k * k) {
    throw DimensionError("conv2d_theorem_check: need an odd k x k kernel");
  }
  if (f.size() != height * width) throw DimensionError("conv2d_theorem_check: field size mismatch");
  if (!is_power_of_two(height) || !is_power_of_two(width) || k > height || k > width) {
    throw DimensionError("conv2d_theorem_check: grid must be power-of-two and hold the kernel");
  }
  kernels::ConvGeometry g;
  g.height = height;
  g.width = width;
  g.kernel_h = g.kernel_w = k;
  g.padding = Padding::circular;
  std::vector<double> direct(height * width);
  kernels::conv2d_forward<double>(g, f.data(), kernel.data(), nullptr, direct.data());

  // Cross-correlation: y = IDFT(conj(DFT(e)) * DFT(f)) with the kernel
  // centred on the origin of the periodic grid.
  std::vector<double> embedded(height * width, 0.0);
  const std::size_t c = k / 2;
  for (std::size_t ty = 0; ty < k; ++ty) {
    for (std::size_t tx = 0; tx < k; ++tx) {
      embedded[((ty + height - c) % height) * width + (tx + width - c) % width] =
          kernel[ty * k + tx];
    }
  }
  const std::size_t half = width / 2 + 1;
  std::vector<cd> fe(height * half), ff(height * half);
  fft::rfft2_plane(embedded.data(), height, width, fe.data());
  fft::rfft2_plane(f.data(), height, width, ff.data());
  for (std::size_t i = 0; i < ff.size(); ++i) ff[i] *= std::conj(fe[i]);
  std::vector<double> spectral(height * width);
  fft::irfft2_plane(ff.data(), height, width, spectral.data());

  double dev = 0.0;
  for (std::size_t i = 0; i < direct.size(); ++i) {
    dev = std::max(dev, std::abs(direct[i] - spectral[i]));
  }
  return dev;
}

FilterSpectrum filter_spectrum(const std::vector<double>& filters, std::size_t count,
                               std::size_t kh, std::size_t kw, std::size_t height,
                               std::size_t width) {
  if (count == 0 || filters.size() != count * kh * kw) {
    throw DimensionError("filter_spectrum: expected " + std::to_string(count) + " filters of " +
                         std::to_string(kh) + "x" + std::to_string(kw));
  }
  if (kh > height || kw > width) {
    throw DimensionError("filter_spectrum: " + std::to_string(kh) + "x" + std::to_string(kw) +
                         " filters do not fit a " + std::to_string(height) + "x" +
                         std::to_string(width) + " grid");
  }
  // Separable DFT of the zero-embedded kernel: only the k x k taps are nonzero.
  std::vector<cd> ey(height * kh), ex(width * kw);
  for (std::size_t u = 0; u < height; ++u) {
    for (std::size_t t = 0; t < kh; ++t) {
      ey[u * kh + t] = std::polar(1.0, -2.0 * M_PI * double((u * t) % height) / double(height));
    }
  }
  for (std::size_t v = 0; v < width; ++v) {
    for (std::size_t t = 0; t < kw; ++t) {
      ex[v * kw + t] = std::polar(1.0, -2.0 * M_PI * double((v * t) % width) / double(width));
    }
  }
  FilterSpectrum s;
  s.height = height;
  s.width = width;
  s.magnitude.assign(height * width, 0.0);
  std::vector<cd> rows(kh * width);
  for (std::size_t f = 0; f < count; ++f) {
    const double* w = filters.data() + f * kh * kw;
    for (std::size_t ty = 0; ty < kh; ++ty) {
      for (std::size_t v = 0; v < width; ++v) {
        cd acc = 0.0;
        for (std::size_t tx = 0; tx < kw; ++tx) acc += w[ty * kw + tx] * ex[v * kw + tx];
        rows[ty * width + v] = acc;
      }
    }
    for (std::size_t u = 0; u < height; ++u) {
      for (std::size_t v = 0; v < width; ++v) {
        cd acc = 0.0;
        for (std::size_t ty = 0; ty < kh; ++ty) acc += ey[u * kh + ty] * rows[ty * width + v];
        s.magnitude[u * width + v] += std::abs(acc);
      }
    }
  }
  for (auto& m : s.magnitude) m /= static_cast<double>(count);
  return s;
}

template <typename T>
std::vector<FilterSpectrum> filter_spectrum(const Model<T>& model, std::size_t height,
                                            std::size_t width) {
  std::vector<FilterSpectrum> out;
  for (const std::string& name : model.down_block_first_convs()) {
    const std::size_t level = std::stoul(name.substr(name.find('.') + 1));
    const Tensor<T>& w = model.param(name);
    const std::size_t gh = height >> level, gw = width >> level;
    if (gh == 0 || gw == 0 || (gh << level) != height || (gw << level) != width) {
      throw DimensionError("filter_spectrum: grid " + std::to_string(height) + "x" +
                           std::to_string(width) + " does not halve down to level " +
                           std::to_string(level));
    }
    std::vector<double> filters(w.raw(), w.raw() + w.numel());
    FilterSpectrum s =
        filter_spectrum(filters, w.size(0) * w.size(1), w.size(2), w.size(3), gh, gw);
    s.layer = name;
    s.level = level;
    out.push_back(std::move(s));
  }
  return out;
}

template std::vector<FilterSpectrum> filter_spectrum(const Model<float>&, std::size_t,
                                                     std::size_t);
template std::vector<FilterSpectrum> filter_spectrum(const Model<double>&, std::size_t,
                                                     std::size_t);

void write_spectrum_csv(const FilterSpectrum& s, std::ostream& out) {
  char buf[32];
  for (std::size_t r = 0; r < s.height; ++r) {
    for (std::size_t c = 0; c < s.width; ++c) {
      std::snprintf(buf, sizeof buf, "%.9g", s.at(r, c));
      out << (c ? "," : "") << buf;
    }
    out << '\n';
  }
}

void write_spectrum_csv(const FilterSpectrum& s, const std::string& path) {
  std::ostringstream os;
  write_spectrum_csv(s, os);
  binio::write_file(path, os.str());
}

std::string spectrum_pgm(const FilterSpectrum& s) {
  std::string out = "P5\n" + std::to_string(s.width) + " " + std::to_string(s.height) + "\n255\n";
  const double peak = s.magnitude.empty()
                          ? 0.0
                          : *std::max_element(s.magnitude.begin(), s.magnitude.end());
  for (double m : s.magnitude) {
    const double v = peak > 0.0 ? std::round(255.0 * m / peak) : 0.0;
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::clamp(v, 0.0, 255.0))));
  }
  return out;
}

void write_spectrum_pgm(const FilterSpectrum& s, const std::string& path) {
  binio::write_file(path, spectrum_pgm(s));
}

}  // namespace npde::analysis
