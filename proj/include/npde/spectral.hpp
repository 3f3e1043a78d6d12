#pragma once

#include <cstddef>

#include "npde/fft.hpp"
#include "npde/rng.hpp"
#include "npde/tensor.hpp"

namespace npde {

/// Complex mode-mixing weights of a spectral convolution. `pos` holds the
/// first-axis frequencies [0, m1) and `neg` the frequencies [H-m1, H); both
/// cover last-axis frequencies [0, m2). Layout [c_in, c_out, m1, m2, 2] with
/// (re, im) innermost.
template <typename T>
struct SpectralWeights {
  Tensor<T> pos;
  Tensor<T> neg;

  std::size_t in_channels() const { return pos.size(0); }
  std::size_t out_channels() const { return pos.size(1); }
  std::size_t modes1() const { return pos.size(2); }
  std::size_t modes2() const { return pos.size(3); }

  /// Uniform [0, 1) entries scaled by 1/(c_in c_out).
  static SpectralWeights init(std::size_t c_in, std::size_t c_out, std::size_t m1,
                              std::size_t m2, Rng& rng);
  static SpectralWeights zeros(std::size_t c_in, std::size_t c_out, std::size_t m1,
                               std::size_t m2);
};

/// rfft2 -> per-mode complex channel mixing on the retained modes -> irfft2.
/// Throws ConfigError when m1 > H/2 or m2 > W/2+1.
template <typename T>
Tensor<T> spectral_conv(const Tensor<T>& x, const SpectralWeights<T>& w);

/// GeLU(spectral_conv(x) + conv1x1(x) [+ cond]). `cond`, if defined, is a
/// per-channel vector ([C] or [B,C]) added before the activation.
template <typename T>
Tensor<T> fno_layer(const Tensor<T>& x, const SpectralWeights<T>& w, const Tensor<T>& w_res,
                    const Tensor<T>& b_res, const Tensor<T>& cond = Tensor<T>());

}  // namespace npde
