#include "npde/spectral.hpp"

#include <complex>
#include <string>
#include <vector>

#include "npde/ops.hpp"

namespace npde {

template <typename T>
SpectralWeights<T> SpectralWeights<T>::init(std::size_t c_in, std::size_t c_out, std::size_t m1,
                                            std::size_t m2, Rng& rng) {
  const double s = 1.0 / static_cast<double>(c_in * c_out);
  auto block = [&] {
    Tensor<T> t(Shape{c_in, c_out, m1, m2, 2});
    for (auto& v : t.data()) v = static_cast<T>(s * rng.uniform());
    return t;
  };
  SpectralWeights w;
  w.pos = block();
  w.neg = block();
  return w;
}

template <typename T>
SpectralWeights<T> SpectralWeights<T>::zeros(std::size_t c_in, std::size_t c_out, std::size_t m1,
                                             std::size_t m2) {
  return {Tensor<T>(Shape{c_in, c_out, m1, m2, 2}), Tensor<T>(Shape{c_in, c_out, m1, m2, 2})};
}

namespace {

/// Row k1 of the spectrum and the weight-block row it multiplies.
struct ModeRow {
  std::size_t k1;
  bool negative;
  std::size_t w_row;
};

std::vector<ModeRow> retained_rows(std::size_t h, std::size_t m1) {
  std::vector<ModeRow> rows;
  for (std::size_t k = 0; k < m1; ++k) rows.push_back({k, false, k});
  for (std::size_t k = 0; k < m1; ++k) rows.push_back({h - m1 + k, true, k});
  return rows;
}

}  // namespace

template <typename T>
Tensor<T> spectral_conv(const Tensor<T>& x, const SpectralWeights<T>& w) {
  if (x.dim() != 4) {
    throw DimensionError("spectral_conv: expected [B,C,H,W], got " + shape_str(x.shape()));
  }
  if (w.pos.dim() != 5 || w.pos.shape() != w.neg.shape() || w.pos.size(4) != 2) {
    throw DimensionError("spectral_conv: malformed weight blocks");
  }
  const std::size_t batch = x.size(0), ci = x.size(1), h = x.size(2), wd = x.size(3);
  const std::size_t co = w.out_channels(), m1 = w.modes1(), m2 = w.modes2();
  if (w.in_channels() != ci) {
    throw DimensionError("spectral_conv: weights expect " + std::to_string(w.in_channels()) +
                         " input channels, got " + std::to_string(ci));
  }
  const std::size_t w2 = wd / 2 + 1;
  if (m1 > h / 2 || m2 > w2 || m1 == 0 || m2 == 0) {
    throw ConfigError("spectral_conv: modes (" + std::to_string(m1) + "," + std::to_string(m2) +
                      ") exceed the " + std::to_string(h) + "x" + std::to_string(wd) +
                      " grid's Nyquist limits");
  }

  auto xs = std::make_shared<ComplexSpectrum<T>>(rfft2(x));
  const auto rows = retained_rows(h, m1);
  using C = std::complex<T>;
  auto weight = [&](const Tensor<T>& blk, std::size_t i, std::size_t o, std::size_t r,
                    std::size_t k2) {
    const T* p = blk.raw() + (((i * co + o) * m1 + r) * m2 + k2) * 2;
    return C(p[0], p[1]);
  };

  ComplexSpectrum<T> ys;
  ys.batch = batch;
  ys.channels = co;
  ys.height = h;
  ys.width = wd;
  ys.data.assign(2 * batch * co * ys.plane_size(), T{0});
#pragma omp parallel for collapse(2) schedule(static)
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t o = 0; o < co; ++o) {
      C* yp = ys.plane(b, o);
      for (std::size_t i = 0; i < ci; ++i) {
        const C* xp = xs->plane(b, i);
        for (const auto& row : rows) {
          const Tensor<T>& blk = row.negative ? w.neg : w.pos;
          for (std::size_t k2 = 0; k2 < m2; ++k2) {
            yp[row.k1 * w2 + k2] += xp[row.k1 * w2 + k2] * weight(blk, i, o, row.w_row, k2);
          }
        }
      }
    }
  }
  Tensor<T> y = irfft2(ys, h, wd);
  std::vector<T> out(y.data().begin(), y.data().end());

  return make_result<T>(
      Shape{batch, co, h, wd}, std::move(out), {&x, &w.pos, &w.neg}, "spectral_conv",
      [x, w, xs, rows, batch, ci, co, h, wd, w2, m1, m2](std::span<const T> g) {
        Tensor<T> gt(Shape{batch, co, h, wd}, std::vector<T>(g.begin(), g.end()));
        const ComplexSpectrum<T> gs = rfft2(gt);
        const T inv_hw = T(1) / static_cast<T>(h * wd);
        auto c_weight = [&](std::size_t k2) { return (k2 == 0 || 2 * k2 == wd) ? T(1) : T(2); };

        for (const Tensor<T>* blk_t : {&w.pos, &w.neg}) {
          if (!blk_t->requires_grad()) continue;
          auto gw = blk_t->node()->ensure_grad();
          const bool negative = blk_t == &w.neg;
#pragma omp parallel for collapse(2) schedule(static)
          for (std::size_t i = 0; i < ci; ++i) {
            for (std::size_t o = 0; o < co; ++o) {
              for (const auto& row : rows) {
                if (row.negative != negative) continue;
                for (std::size_t k2 = 0; k2 < m2; ++k2) {
                  std::complex<T> acc{};
                  for (std::size_t b = 0; b < batch; ++b) {
                    acc += std::conj(xs->at(b, i, row.k1, k2)) * gs.at(b, o, row.k1, k2);
                  }
                  acc *= c_weight(k2) * inv_hw;
                  T* p = gw.data() + (((i * co + o) * m1 + row.w_row) * m2 + k2) * 2;
                  p[0] += acc.real();
                  p[1] += acc.imag();
                }
              }
            }
          }
        }

        if (!x.requires_grad()) return;
        ComplexSpectrum<T> dxs;
        dxs.batch = batch;
        dxs.channels = ci;
        dxs.height = h;
        dxs.width = wd;
        dxs.data.assign(2 * batch * ci * dxs.plane_size(), T{0});
#pragma omp parallel for collapse(2) schedule(static)
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t i = 0; i < ci; ++i) {
            std::complex<T>* dp = dxs.plane(b, i);
            for (std::size_t o = 0; o < co; ++o) {
              const std::complex<T>* gp = gs.plane(b, o);
              for (const auto& row : rows) {
                const Tensor<T>& blk = row.negative ? w.neg : w.pos;
                for (std::size_t k2 = 0; k2 < m2; ++k2) {
                  const T* p = blk.raw() + (((i * co + o) * m1 + row.w_row) * m2 + k2) * 2;
                  dp[row.k1 * w2 + k2] += std::conj(std::complex<T>(p[0], p[1])) * gp[row.k1 * w2 + k2];
                }
              }
            }
          }
        }
        Tensor<T> dx = irfft2(dxs, h, wd);
        auto gx = x.node()->ensure_grad();
        for (std::size_t k = 0; k < gx.size(); ++k) gx[k] += dx.raw()[k];
      });
}

template <typename T>
Tensor<T> fno_layer(const Tensor<T>& x, const SpectralWeights<T>& w, const Tensor<T>& w_res,
                    const Tensor<T>& b_res, const Tensor<T>& cond) {
  if (w_res.dim() != 4 || w_res.size(2) != 1 || w_res.size(3) != 1) {
    throw DimensionError("fno_layer: residual path must be a 1x1 convolution");
  }
  Tensor<T> h = add(spectral_conv(x, w), conv2d(x, w_res, b_res));
  if (cond.defined()) h = add_channel_vector(h, cond);
  return gelu(h);
}

template struct SpectralWeights<float>;
template struct SpectralWeights<double>;
template Tensor<float> spectral_conv(const Tensor<float>&, const SpectralWeights<float>&);
template Tensor<double> spectral_conv(const Tensor<double>&, const SpectralWeights<double>&);
template Tensor<float> fno_layer(const Tensor<float>&, const SpectralWeights<float>&,
                                 const Tensor<float>&, const Tensor<float>&, const Tensor<float>&);
template Tensor<double> fno_layer(const Tensor<double>&, const SpectralWeights<double>&,
                                  const Tensor<double>&, const Tensor<double>&,
                                  const Tensor<double>&);

}  // namespace npde
