#pragma once

#include <complex>
#include <cstddef>
#include <vector>

#include "npde/tensor.hpp"

namespace npde {

bool is_power_of_two(std::size_t n);

namespace fft {

/// In-place iterative radix-2 transform of length n (power of two).
/// Forward uses e^{-2 pi i k n / N}; inverse uses the conjugate kernel and is
/// NOT normalized.
template <typename T>
void transform(std::complex<T>* data, std::size_t n, bool inverse);

/// Real 2-D transform of one h x w plane into h x (w/2+1) coefficients.
template <typename T>
void rfft2_plane(const T* x, std::size_t h, std::size_t w, std::complex<T>* out);

/// Normalized inverse of rfft2_plane. Imaginary parts of the columns k2 = 0
/// and k2 = w/2 are ignored after the first-axis inverse, matching the usual
/// c2r convention.
template <typename T>
void irfft2_plane(const std::complex<T>* in, std::size_t h, std::size_t w, T* out);

}  // namespace fft

/// Half spectrum of a batch of real planes: shape [B, C, H, W/2+1] complex,
/// stored interleaved (re, im).
template <typename T>
struct ComplexSpectrum {
  std::size_t batch = 0, channels = 0, height = 0, width = 0;
  std::vector<T> data;

  std::size_t half_width() const { return width / 2 + 1; }
  Shape shape() const { return {batch, channels, height, half_width()}; }
  std::size_t plane_size() const { return height * half_width(); }

  std::complex<T>* plane(std::size_t b, std::size_t c) {
    return reinterpret_cast<std::complex<T>*>(data.data()) + (b * channels + c) * plane_size();
  }
  const std::complex<T>* plane(std::size_t b, std::size_t c) const {
    return reinterpret_cast<const std::complex<T>*>(data.data()) + (b * channels + c) * plane_size();
  }
  std::complex<T> at(std::size_t b, std::size_t c, std::size_t k1, std::size_t k2) const {
    return plane(b, c)[k1 * half_width() + k2];
  }
};

/// Unnormalized forward transform of x[B,C,H,W]. H and W must be powers of two.
template <typename T>
ComplexSpectrum<T> rfft2(const Tensor<T>& x);

/// Normalized inverse; (H, W) must agree with the spectrum's geometry.
template <typename T>
Tensor<T> irfft2(const ComplexSpectrum<T>& s, std::size_t height, std::size_t width);

}  // namespace npde
