#include "npde/fft.hpp"

#include <cmath>
#include <map>
#include <string>

namespace npde {

bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

namespace fft {

namespace {

/// Bit-reversal permutation and twiddles for one length, cached per thread.
template <typename T>
struct Plan {
  std::vector<std::size_t> reversed;
  std::vector<std::complex<T>> twiddle;  // e^{-2 pi i k / n}, k < n/2

  explicit Plan(std::size_t n) : reversed(n), twiddle(n / 2) {
    std::size_t bits = 0;
    while ((std::size_t{1} << bits) < n) ++bits;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t r = 0;
      for (std::size_t b = 0; b < bits; ++b) r |= ((i >> b) & 1) << (bits - 1 - b);
      reversed[i] = r;
    }
    for (std::size_t k = 0; k < n / 2; ++k) {
      const double a = -2.0 * M_PI * static_cast<double>(k) / static_cast<double>(n);
      twiddle[k] = {static_cast<T>(std::cos(a)), static_cast<T>(std::sin(a))};
    }
  }
};

template <typename T>
const Plan<T>& plan_for(std::size_t n) {
  thread_local std::map<std::size_t, Plan<T>> cache;
  auto it = cache.find(n);
  if (it == cache.end()) it = cache.emplace(n, Plan<T>(n)).first;
  return it->second;
}

void require_power_of_two(std::size_t n, const char* what) {
  if (!is_power_of_two(n)) {
    throw ConfigError(std::string(what) + ": extent " + std::to_string(n) +
                      " is not a power of two");
  }
}

}  // namespace

template <typename T>
void transform(std::complex<T>* data, std::size_t n, bool inverse) {
  require_power_of_two(n, "fft");
  if (n == 1) return;
  const auto& p = plan_for<T>(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (i < p.reversed[i]) std::swap(data[i], data[p.reversed[i]]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t half = len / 2;
    const std::size_t step = n / len;
    for (std::size_t start = 0; start < n; start += len) {
      for (std::size_t j = 0; j < half; ++j) {
        std::complex<T> w = p.twiddle[j * step];
        if (inverse) w = std::conj(w);
        const std::complex<T> u = data[start + j];
        const std::complex<T> v = data[start + j + half] * w;
        data[start + j] = u + v;
        data[start + j + half] = u - v;
      }
    }
  }
}

template <typename T>
void rfft2_plane(const T* x, std::size_t h, std::size_t w, std::complex<T>* out) {
  require_power_of_two(h, "rfft2");
  require_power_of_two(w, "rfft2");
  const std::size_t w2 = w / 2 + 1;
  std::vector<std::complex<T>> row(w);
  // Rows in pairs: z = a + i b, then A[k] = (Z[k] + conj Z[-k]) / 2 and
  // B[k] = (Z[k] - conj Z[-k]) / 2i.
  for (std::size_t r = 0; r < h; r += 2) {
    const T* a = x + r * w;
    const T* b = r + 1 < h ? x + (r + 1) * w : nullptr;
    for (std::size_t i = 0; i < w; ++i) row[i] = {a[i], b ? b[i] : T{0}};
    transform(row.data(), w, false);
    for (std::size_t k = 0; k < w2; ++k) {
      const std::complex<T> z = row[k];
      const std::complex<T> zc = std::conj(row[(w - k) % w]);
      out[r * w2 + k] = (z + zc) * T(0.5);
      if (b) out[(r + 1) * w2 + k] = (z - zc) * std::complex<T>(0, T(-0.5));
    }
  }
  std::vector<std::complex<T>> col(h);
  for (std::size_t k = 0; k < w2; ++k) {
    for (std::size_t r = 0; r < h; ++r) col[r] = out[r * w2 + k];
    transform(col.data(), h, false);
    for (std::size_t r = 0; r < h; ++r) out[r * w2 + k] = col[r];
  }
}

template <typename T>
void irfft2_plane(const std::complex<T>* in, std::size_t h, std::size_t w, T* out) {
  require_power_of_two(h, "irfft2");
  require_power_of_two(w, "irfft2");
  const std::size_t w2 = w / 2 + 1;
  std::vector<std::complex<T>> tmp(h * w2);
  std::vector<std::complex<T>> col(h);
  for (std::size_t k = 0; k < w2; ++k) {
    for (std::size_t r = 0; r < h; ++r) col[r] = in[r * w2 + k];
    transform(col.data(), h, true);
    for (std::size_t r = 0; r < h; ++r) tmp[r * w2 + k] = col[r];
  }
  const T norm = T(1) / static_cast<T>(h * w);
  std::vector<std::complex<T>> row(w);
  auto hermitian = [&](std::size_t r, std::size_t k) -> std::complex<T> {
    if (k == 0 || 2 * k == w) return {tmp[r * w2 + k].real(), T{0}};
    if (k < w2) return tmp[r * w2 + k];
    return std::conj(tmp[r * w2 + (w - k)]);
  };
  // Two Hermitian rows per complex inverse: z = a + i b with a, b real.
  for (std::size_t r = 0; r < h; r += 2) {
    const bool pair = r + 1 < h;
    for (std::size_t k = 0; k < w; ++k) {
      const std::complex<T> a = hermitian(r, k);
      const std::complex<T> b = pair ? hermitian(r + 1, k) : std::complex<T>{};
      row[k] = a + std::complex<T>(0, 1) * b;
    }
    transform(row.data(), w, true);
    for (std::size_t i = 0; i < w; ++i) {
      out[r * w + i] = row[i].real() * norm;
      if (pair) out[(r + 1) * w + i] = row[i].imag() * norm;
    }
  }
}

template void transform(std::complex<float>*, std::size_t, bool);
template void transform(std::complex<double>*, std::size_t, bool);
template void rfft2_plane(const float*, std::size_t, std::size_t, std::complex<float>*);
template void rfft2_plane(const double*, std::size_t, std::size_t, std::complex<double>*);
template void irfft2_plane(const std::complex<float>*, std::size_t, std::size_t, float*);
template void irfft2_plane(const std::complex<double>*, std::size_t, std::size_t, double*);

}  // namespace fft

template <typename T>
ComplexSpectrum<T> rfft2(const Tensor<T>& x) {
  if (x.dim() != 4) throw DimensionError("rfft2: expected [B,C,H,W], got " + shape_str(x.shape()));
  ComplexSpectrum<T> s;
  s.batch = x.size(0);
  s.channels = x.size(1);
  s.height = x.size(2);
  s.width = x.size(3);
  if (!is_power_of_two(s.height) || !is_power_of_two(s.width)) {
    throw ConfigError("rfft2: extents " + shape_str(x.shape()) + " must be powers of two");
  }
  s.data.resize(2 * s.batch * s.channels * s.plane_size());
  const std::size_t planes = s.batch * s.channels;
  const std::size_t hw = s.height * s.width;
#pragma omp parallel for schedule(static)
  for (std::size_t p = 0; p < planes; ++p) {
    fft::rfft2_plane(x.raw() + p * hw, s.height, s.width, s.plane(p / s.channels, p % s.channels));
  }
  return s;
}

template <typename T>
Tensor<T> irfft2(const ComplexSpectrum<T>& s, std::size_t height, std::size_t width) {
  if (height != s.height || width != s.width ||
      s.data.size() != 2 * s.batch * s.channels * s.plane_size()) {
    throw DimensionError("irfft2: spectrum " + shape_str(s.shape()) + " does not describe a " +
                         std::to_string(height) + "x" + std::to_string(width) + " grid");
  }
  Tensor<T> out(Shape{s.batch, s.channels, height, width});
  const std::size_t planes = s.batch * s.channels;
#pragma omp parallel for schedule(static)
  for (std::size_t p = 0; p < planes; ++p) {
    fft::irfft2_plane(s.plane(p / s.channels, p % s.channels), height, width,
                      out.raw() + p * height * width);
  }
  return out;
}

template ComplexSpectrum<float> rfft2(const Tensor<float>&);
template ComplexSpectrum<double> rfft2(const Tensor<double>&);
template Tensor<float> irfft2(const ComplexSpectrum<float>&, std::size_t, std::size_t);
template Tensor<double> irfft2(const ComplexSpectrum<double>&, std::size_t, std::size_t);

}  // namespace npde
