#include "npde/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace npde {

namespace {

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

template <typename T>
void require_rank(const Tensor<T>& a, std::size_t rank, const char* op) {
  if (a.dim() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         " tensor, got " + shape_str(a.shape()));
  }
}

/// Gradient buffer of `t` when it participates in the graph, else empty.
template <typename T>
std::span<T> grad_buffer(const Tensor<T>& t) {
  if (!t.defined() || !t.requires_grad()) return {};
  return t.node()->ensure_grad();
}

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

/// Per-channel vector accessor for [C] or [B,C] modulation tensors.
template <typename T>
struct ChannelVector {
  const Tensor<T>* t;
  std::size_t batch_stride;

  static ChannelVector make(const Tensor<T>& v, std::size_t batch, std::size_t channels,
                            const char* op) {
    if (v.dim() == 1 && v.size(0) == channels) return {&v, 0};
    if (v.dim() == 2 && v.size(0) == batch && v.size(1) == channels) return {&v, channels};
    throw DimensionError(std::string(op) + ": vector of shape " + shape_str(v.shape()) +
                         " does not match " + std::to_string(channels) + " channels");
  }
  std::size_t index(std::size_t b, std::size_t c) const { return b * batch_stride + c; }
};

}  // namespace

double gelu_value(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

// Elementwise ------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  std::vector<T> out(a.numel());
  const T* pa = a.raw();
  const T* pb = b.raw();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] + pb[i];
  return make_result<T>(a.shape(), std::move(out), {&a, &b}, "add",
                        [a, b](std::span<const T> g) {
                          for (auto buf : {grad_buffer(a), grad_buffer(b)}) {
                            for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[i];
                          }
                        });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sub");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.raw()[i] - b.raw()[i];
  return make_result<T>(a.shape(), std::move(out), {&a, &b}, "sub",
                        [a, b](std::span<const T> g) {
                          auto ga = grad_buffer(a);
                          for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
                          auto gb = grad_buffer(b);
                          for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= g[i];
                        });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.raw()[i] * b.raw()[i];
  return make_result<T>(a.shape(), std::move(out), {&a, &b}, "mul",
                        [a, b](std::span<const T> g) {
                          auto ga = grad_buffer(a);
                          for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * b.raw()[i];
                          auto gb = grad_buffer(b);
                          for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * a.raw()[i];
                        });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.raw()[i] + s;
  return make_result<T>(a.shape(), std::move(out), {&a}, "add_scalar",
                        [a](std::span<const T> g) {
                          auto ga = grad_buffer(a);
                          for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
                        });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.raw()[i] * s;
  return make_result<T>(a.shape(), std::move(out), {&a}, "scale",
                        [a, s](std::span<const T> g) {
                          auto ga = grad_buffer(a);
                          for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * s;
                        });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
  std::vector<T> out(a.numel());
  const T* pa = a.raw();
#pragma omp parallel for schedule(static) if (out.size() > 65536)
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T x = pa[i];
    out[i] = T(0.5) * x * (T(1) + std::erf(x * T(kInvSqrt2)));
  }
  return make_result<T>(a.shape(), std::move(out), {&a}, "gelu", [a](std::span<const T> g) {
    auto ga = grad_buffer(a);
    const T* pa = a.raw();
#pragma omp parallel for schedule(static) if (ga.size() > 65536)
    for (std::size_t i = 0; i < ga.size(); ++i) {
      const T x = pa[i];
      const T cdf = T(0.5) * (T(1) + std::erf(x * T(kInvSqrt2)));
      const T pdf = T(kInvSqrt2Pi) * std::exp(T(-0.5) * x * x);
      ga[i] += g[i] * (cdf + x * pdf);
    }
  });
}

// Reductions and reshapes --------------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T acc{0};
  for (T v : a.data()) acc += v;
  return make_result<T>(Shape{1}, {acc}, {&a}, "sum", [a](std::span<const T> g) {
    auto ga = grad_buffer(a);
    for (auto& v : ga) v += g[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  T acc{0};
  for (T v : a.data()) acc += v;
  const T inv = T{1} / static_cast<T>(a.numel());
  return make_result<T>(Shape{1}, {acc * inv}, {&a}, "mean", [a, inv](std::span<const T> g) {
    auto ga = grad_buffer(a);
    for (auto& v : ga) v += g[0] * inv;
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                         shape_str(shape));
  }
  std::vector<T> out(a.data().begin(), a.data().end());
  return make_result<T>(std::move(shape), std::move(out), {&a}, "reshape",
                        [a](std::span<const T> g) {
                          auto ga = grad_buffer(a);
                          for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
                        });
}

template <typename T>
Tensor<T> narrow_cols(const Tensor<T>& a, std::size_t start, std::size_t len) {
  require_rank(a, 2, "narrow_cols");
  const std::size_t rows = a.size(0), cols = a.size(1);
  if (start + len > cols || len == 0) {
    throw DimensionError("narrow_cols: range out of bounds for " + shape_str(a.shape()));
  }
  std::vector<T> out(rows * len);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(a.raw() + r * cols + start, len, out.data() + r * len);
  }
  return make_result<T>(Shape{rows, len}, std::move(out), {&a}, "narrow_cols",
                        [a, rows, cols, start, len](std::span<const T> g) {
                          auto ga = grad_buffer(a);
                          for (std::size_t r = 0; r < rows; ++r) {
                            for (std::size_t c = 0; c < len; ++c) {
                              ga[r * cols + start + c] += g[r * len + c];
                            }
                          }
                        });
}

// Dense layers -------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.size(0), k = a.size(1), n = b.size(1);
  if (b.size(0) != k) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  std::vector<T> out(m * n);
  kernels::gemm_nn(m, n, k, a.raw(), b.raw(), out.data());
  return make_result<T>(Shape{m, n}, std::move(out), {&a, &b}, "matmul",
                        [a, b, m, k, n](std::span<const T> g) {
                          if (auto ga = grad_buffer(a); !ga.empty()) {
                            // dA = G * B^T
                            std::vector<T> bt(n * k);
                            kernels::transpose(k, n, b.raw(), bt.data());
                            kernels::gemm_nn(m, k, n, g.data(), bt.data(), ga.data(), true);
                          }
                          if (auto gb = grad_buffer(b); !gb.empty()) {
                            // dB = A^T * G
                            kernels::gemm_tn(k, n, m, a.raw(), g.data(), gb.data(), true);
                          }
                        });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
  require_rank(x, 2, "linear");
  require_rank(w, 2, "linear");
  const std::size_t batch = x.size(0), in = x.size(1), out_f = w.size(0);
  if (w.size(1) != in) {
    throw DimensionError("linear: input width " + std::to_string(in) + " vs weight " +
                         shape_str(w.shape()));
  }
  if (bias.defined() && (bias.dim() != 1 || bias.size(0) != out_f)) {
    throw DimensionError("linear: bias shape " + shape_str(bias.shape()));
  }
  std::vector<T> wt(in * out_f);
  kernels::transpose(out_f, in, w.raw(), wt.data());
  std::vector<T> out(batch * out_f);
  kernels::gemm_nn(batch, out_f, in, x.raw(), wt.data(), out.data());
  if (bias.defined()) {
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t o = 0; o < out_f; ++o) out[b * out_f + o] += bias.raw()[o];
    }
  }
  return make_result<T>(Shape{batch, out_f}, std::move(out), {&x, &w, &bias}, "linear",
                        [x, w, bias, batch, in, out_f](std::span<const T> g) {
                          if (auto gx = grad_buffer(x); !gx.empty()) {
                            kernels::gemm_nn(batch, in, out_f, g.data(), w.raw(), gx.data(), true);
                          }
                          if (auto gw = grad_buffer(w); !gw.empty()) {
                            kernels::gemm_tn(out_f, in, batch, g.data(), x.raw(), gw.data(), true);
                          }
                          if (auto gbias = grad_buffer(bias); !gbias.empty()) {
                            for (std::size_t b = 0; b < batch; ++b) {
                              for (std::size_t o = 0; o < out_f; ++o) gbias[o] += g[b * out_f + o];
                            }
                          }
                        });
}

// Convolutions and resampling ---------------------------------------------

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                 Conv2dOptions opts) {
  require_rank(x, 4, "conv2d");
  require_rank(w, 4, "conv2d");
  kernels::ConvGeometry geo;
  geo.batch = x.size(0);
  geo.in_channels = x.size(1);
  geo.height = x.size(2);
  geo.width = x.size(3);
  geo.out_channels = w.size(0);
  geo.kernel_h = w.size(2);
  geo.kernel_w = w.size(3);
  geo.stride = opts.stride;
  geo.padding = opts.padding;
  if (w.size(1) != geo.in_channels) {
    throw DimensionError("conv2d: weight " + shape_str(w.shape()) + " does not accept input " +
                         shape_str(x.shape()));
  }
  if (bias.defined() && (bias.dim() != 1 || bias.size(0) != geo.out_channels)) {
    throw DimensionError("conv2d: bias shape " + shape_str(bias.shape()));
  }
  kernels::validate(geo);
  Shape out_shape{geo.batch, geo.out_channels, geo.out_height(), geo.out_width()};
  std::vector<T> out(shape_numel(out_shape));
  kernels::conv2d_forward(geo, x.raw(), w.raw(), bias.defined() ? bias.raw() : nullptr,
                          out.data());
  return make_result<T>(std::move(out_shape), std::move(out), {&x, &w, &bias}, "conv2d",
                        [x, w, bias, geo](std::span<const T> g) {
                          auto gx = grad_buffer(x);
                          auto gw = grad_buffer(w);
                          auto gb = grad_buffer(bias);
                          kernels::conv2d_backward(geo, x.raw(), w.raw(), g.data(),
                                                   gx.empty() ? nullptr : gx.data(),
                                                   gw.empty() ? nullptr : gw.data(),
                                                   gb.empty() ? nullptr : gb.data());
                        });
}

template <typename T>
Tensor<T> conv_transpose2x2(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
  require_rank(x, 4, "conv_transpose2x2");
  require_rank(w, 4, "conv_transpose2x2");
  const std::size_t batch = x.size(0), cin = x.size(1), h = x.size(2), wd = x.size(3);
  if (w.size(0) != cin || w.size(2) != 2 || w.size(3) != 2) {
    throw DimensionError("conv_transpose2x2: weight " + shape_str(w.shape()) +
                         " incompatible with input " + shape_str(x.shape()));
  }
  const std::size_t cout = w.size(1);
  const std::size_t oh = 2 * h, ow = 2 * wd;
  std::vector<T> out(batch * cout * oh * ow, T{0});
#pragma omp parallel for collapse(2) schedule(static)
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t co = 0; co < cout; ++co) {
      T* dst = out.data() + (b * cout + co) * oh * ow;
      for (std::size_t ci = 0; ci < cin; ++ci) {
        const T* src = x.raw() + (b * cin + ci) * h * wd;
        const T* k = w.raw() + (ci * cout + co) * 4;
        for (std::size_t y = 0; y < h; ++y) {
          for (std::size_t xx = 0; xx < wd; ++xx) {
            const T v = src[y * wd + xx];
            T* o = dst + (2 * y) * ow + 2 * xx;
            o[0] += v * k[0];
            o[1] += v * k[1];
            o[ow] += v * k[2];
            o[ow + 1] += v * k[3];
          }
        }
      }
      if (bias.defined()) {
        for (std::size_t i = 0; i < oh * ow; ++i) dst[i] += bias.raw()[co];
      }
    }
  }
  return make_result<T>(
      Shape{batch, cout, oh, ow}, std::move(out), {&x, &w, &bias}, "conv_transpose2x2",
      [x, w, bias, batch, cin, cout, h, wd, oh, ow](std::span<const T> g) {
        auto gx = grad_buffer(x);
        auto gw = grad_buffer(w);
        auto gb = grad_buffer(bias);
        if (!gx.empty()) {
#pragma omp parallel for collapse(2) schedule(static)
          for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t ci = 0; ci < cin; ++ci) {
              T* dx = gx.data() + (b * cin + ci) * h * wd;
              for (std::size_t co = 0; co < cout; ++co) {
                const T* gy = g.data() + (b * cout + co) * oh * ow;
                const T* k = w.raw() + (ci * cout + co) * 4;
                for (std::size_t y = 0; y < h; ++y) {
                  for (std::size_t xx = 0; xx < wd; ++xx) {
                    const T* o = gy + (2 * y) * ow + 2 * xx;
                    dx[y * wd + xx] += o[0] * k[0] + o[1] * k[1] + o[ow] * k[2] + o[ow + 1] * k[3];
                  }
                }
              }
            }
          }
        }
        if (!gw.empty()) {
#pragma omp parallel for collapse(2) schedule(static)
          for (std::size_t ci = 0; ci < cin; ++ci) {
            for (std::size_t co = 0; co < cout; ++co) {
              T acc[4] = {0, 0, 0, 0};
              for (std::size_t b = 0; b < batch; ++b) {
                const T* src = x.raw() + (b * cin + ci) * h * wd;
                const T* gy = g.data() + (b * cout + co) * oh * ow;
                for (std::size_t y = 0; y < h; ++y) {
                  for (std::size_t xx = 0; xx < wd; ++xx) {
                    const T v = src[y * wd + xx];
                    const T* o = gy + (2 * y) * ow + 2 * xx;
                    acc[0] += v * o[0];
                    acc[1] += v * o[1];
                    acc[2] += v * o[ow];
                    acc[3] += v * o[ow + 1];
                  }
                }
              }
              T* k = gw.data() + (ci * cout + co) * 4;
              for (int i = 0; i < 4; ++i) k[i] += acc[i];
            }
          }
        }
        if (!gb.empty()) {
          for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t co = 0; co < cout; ++co) {
              const T* gy = g.data() + (b * cout + co) * oh * ow;
              T acc{0};
              for (std::size_t i = 0; i < oh * ow; ++i) acc += gy[i];
              gb[co] += acc;
            }
          }
        }
      });
}

template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& x, std::size_t window) {
  require_rank(x, 4, "max_pool2d");
  const std::size_t planes = x.size(0) * x.size(1), h = x.size(2), w = x.size(3);
  if (window == 0 || h % window != 0 || w % window != 0) {
    throw DimensionError("max_pool2d: extent " + std::to_string(h) + "x" + std::to_string(w) +
                         " not divisible by window " + std::to_string(window));
  }
  const std::size_t oh = h / window, ow = w / window;
  std::vector<T> out(planes * oh * ow);
  std::vector<std::size_t> argmax(out.size());
#pragma omp parallel for schedule(static)
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = x.raw() + p * h * w;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = (oy * window) * w + ox * window;
        for (std::size_t dy = 0; dy < window; ++dy) {
          for (std::size_t dx = 0; dx < window; ++dx) {
            const std::size_t idx = (oy * window + dy) * w + ox * window + dx;
            if (src[idx] > src[best]) best = idx;  // strict: first maximum wins
          }
        }
        const std::size_t o = (p * oh + oy) * ow + ox;
        out[o] = src[best];
        argmax[o] = p * h * w + best;
      }
    }
  }
  return make_result<T>(Shape{x.size(0), x.size(1), oh, ow}, std::move(out), {&x}, "max_pool2d",
                        [x, argmax = std::move(argmax)](std::span<const T> g) {
                          auto gx = grad_buffer(x);
                          for (std::size_t o = 0; o < argmax.size(); ++o) gx[argmax[o]] += g[o];
                        });
}

template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& x, std::size_t factor) {
  require_rank(x, 4, "upsample_nearest");
  if (factor == 0) throw ConfigError("upsample_nearest: factor must be positive");
  const std::size_t planes = x.size(0) * x.size(1), h = x.size(2), w = x.size(3);
  const std::size_t oh = h * factor, ow = w * factor;
  std::vector<T> out(planes * oh * ow);
#pragma omp parallel for schedule(static)
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = x.raw() + p * h * w;
    T* dst = out.data() + p * oh * ow;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) dst[oy * ow + ox] = src[(oy / factor) * w + ox / factor];
    }
  }
  return make_result<T>(Shape{x.size(0), x.size(1), oh, ow}, std::move(out), {&x},
                        "upsample_nearest",
                        [x, planes, h, w, oh, ow, factor](std::span<const T> g) {
                          auto gx = grad_buffer(x);
#pragma omp parallel for schedule(static)
                          for (std::size_t p = 0; p < planes; ++p) {
                            const T* src = g.data() + p * oh * ow;
                            T* dst = gx.data() + p * h * w;
                            for (std::size_t oy = 0; oy < oh; ++oy) {
                              for (std::size_t ox = 0; ox < ow; ++ox) {
                                dst[(oy / factor) * w + ox / factor] += src[oy * ow + ox];
                              }
                            }
                          }
                        });
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank(a, 4, "concat_channels");
  require_rank(b, 4, "concat_channels");
  if (a.size(0) != b.size(0) || a.size(2) != b.size(2) || a.size(3) != b.size(3)) {
    throw DimensionError("concat_channels: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  const std::size_t batch = a.size(0), ca = a.size(1), cb = b.size(1);
  const std::size_t hw = a.size(2) * a.size(3);
  std::vector<T> out(batch * (ca + cb) * hw);
  for (std::size_t n = 0; n < batch; ++n) {
    std::copy_n(a.raw() + n * ca * hw, ca * hw, out.data() + n * (ca + cb) * hw);
    std::copy_n(b.raw() + n * cb * hw, cb * hw, out.data() + (n * (ca + cb) + ca) * hw);
  }
  return make_result<T>(Shape{batch, ca + cb, a.size(2), a.size(3)}, std::move(out), {&a, &b},
                        "concat_channels", [a, b, batch, ca, cb, hw](std::span<const T> g) {
                          auto ga = grad_buffer(a);
                          auto gb = grad_buffer(b);
                          for (std::size_t n = 0; n < batch; ++n) {
                            const T* src = g.data() + n * (ca + cb) * hw;
                            if (!ga.empty()) {
                              T* dst = ga.data() + n * ca * hw;
                              for (std::size_t i = 0; i < ca * hw; ++i) dst[i] += src[i];
                            }
                            if (!gb.empty()) {
                              T* dst = gb.data() + n * cb * hw;
                              for (std::size_t i = 0; i < cb * hw; ++i) dst[i] += src[ca * hw + i];
                            }
                          }
                        });
}

// Normalization and channel modulation --------------------------------------

template <typename T>
Tensor<T> group_norm(const Tensor<T>& x, std::size_t groups, const Tensor<T>& gamma,
                     const Tensor<T>& beta, T eps) {
  require_rank(x, 4, "group_norm");
  const std::size_t batch = x.size(0), c = x.size(1), hw = x.size(2) * x.size(3);
  if (groups == 0 || c % groups != 0) {
    throw ConfigError("group_norm: " + std::to_string(c) + " channels not divisible into " +
                      std::to_string(groups) + " groups");
  }
  if (gamma.numel() != c || beta.numel() != c) {
    throw DimensionError("group_norm: affine parameters must have " + std::to_string(c) +
                         " entries");
  }
  const std::size_t cpg = c / groups;
  const std::size_t m = cpg * hw;
  std::vector<T> out(x.numel());
  std::vector<T> xhat(x.numel());
  std::vector<T> inv_std(batch * groups);
#pragma omp parallel for collapse(2) schedule(static)
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t gi = 0; gi < groups; ++gi) {
      const std::size_t off = (b * c + gi * cpg) * hw;
      const T* src = x.raw() + off;
      double mu = 0.0;
#pragma omp simd reduction(+ : mu)
      for (std::size_t i = 0; i < m; ++i) mu += src[i];
      mu /= static_cast<double>(m);
      double var = 0.0;
#pragma omp simd reduction(+ : var)
      for (std::size_t i = 0; i < m; ++i) {
        const double d = src[i] - mu;
        var += d * d;
      }
      var /= static_cast<double>(m);
      const double is = 1.0 / std::sqrt(var + static_cast<double>(eps));
      inv_std[b * groups + gi] = static_cast<T>(is);
      for (std::size_t cc = 0; cc < cpg; ++cc) {
        const std::size_t ch = gi * cpg + cc;
        const T gm = gamma.raw()[ch], bt = beta.raw()[ch];
        for (std::size_t i = 0; i < hw; ++i) {
          const std::size_t idx = off + cc * hw + i;
          const T xh = static_cast<T>((x.raw()[idx] - mu) * is);
          xhat[idx] = xh;
          out[idx] = gm * xh + bt;
        }
      }
    }
  }
  return make_result<T>(
      x.shape(), std::move(out), {&x, &gamma, &beta}, "group_norm",
      [x, gamma, beta, groups, batch, c, hw, cpg, m, xhat = std::move(xhat),
       inv_std = std::move(inv_std)](std::span<const T> g) {
        auto gx = grad_buffer(x);
        auto gg = grad_buffer(gamma);
        auto gbt = grad_buffer(beta);
        if (!gg.empty() || !gbt.empty()) {
#pragma omp parallel for schedule(static)
          for (std::size_t ch = 0; ch < c; ++ch) {
            T sg{0}, sgx{0};
            for (std::size_t b = 0; b < batch; ++b) {
              const std::size_t off = (b * c + ch) * hw;
#pragma omp simd reduction(+ : sg, sgx)
              for (std::size_t i = 0; i < hw; ++i) {
                sg += g[off + i];
                sgx += g[off + i] * xhat[off + i];
              }
            }
            if (!gg.empty()) gg[ch] += sgx;
            if (!gbt.empty()) gbt[ch] += sg;
          }
        }
        if (gx.empty()) return;
#pragma omp parallel for collapse(2) schedule(static)
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t gi = 0; gi < groups; ++gi) {
            const std::size_t off = (b * c + gi * cpg) * hw;
            double mean_d = 0.0, mean_dx = 0.0;
            for (std::size_t cc = 0; cc < cpg; ++cc) {
              const T gm = gamma.raw()[gi * cpg + cc];
#pragma omp simd reduction(+ : mean_d, mean_dx)
              for (std::size_t i = 0; i < hw; ++i) {
                const std::size_t idx = off + cc * hw + i;
                const double d = static_cast<double>(g[idx]) * gm;
                mean_d += d;
                mean_dx += d * xhat[idx];
              }
            }
            mean_d /= static_cast<double>(m);
            mean_dx /= static_cast<double>(m);
            const double is = inv_std[b * groups + gi];
            for (std::size_t cc = 0; cc < cpg; ++cc) {
              const T gm = gamma.raw()[gi * cpg + cc];
              for (std::size_t i = 0; i < hw; ++i) {
                const std::size_t idx = off + cc * hw + i;
                const double d = static_cast<double>(g[idx]) * gm;
                gx[idx] += static_cast<T>(is * (d - mean_d - xhat[idx] * mean_dx));
              }
            }
          }
        }
      });
}

template <typename T>
Tensor<T> add_channel_vector(const Tensor<T>& h, const Tensor<T>& v) {
  require_rank(h, 4, "add_channel_vector");
  const std::size_t batch = h.size(0), c = h.size(1), hw = h.size(2) * h.size(3);
  const auto cv = ChannelVector<T>::make(v, batch, c, "add_channel_vector");
  std::vector<T> out(h.numel());
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T add = v.raw()[cv.index(b, ch)];
      const std::size_t off = (b * c + ch) * hw;
      for (std::size_t i = 0; i < hw; ++i) out[off + i] = h.raw()[off + i] + add;
    }
  }
  return make_result<T>(h.shape(), std::move(out), {&h, &v}, "add_channel_vector",
                        [h, v, cv, batch, c, hw](std::span<const T> g) {
                          auto gh = grad_buffer(h);
                          for (std::size_t i = 0; i < gh.size(); ++i) gh[i] += g[i];
                          auto gv = grad_buffer(v);
                          if (gv.empty()) return;
                          for (std::size_t b = 0; b < batch; ++b) {
                            for (std::size_t ch = 0; ch < c; ++ch) {
                              const std::size_t off = (b * c + ch) * hw;
                              T acc{0};
                              for (std::size_t i = 0; i < hw; ++i) acc += g[off + i];
                              gv[cv.index(b, ch)] += acc;
                            }
                          }
                        });
}

template <typename T>
Tensor<T> channel_affine(const Tensor<T>& h, const Tensor<T>& scale_v, const Tensor<T>& shift_v) {
  require_rank(h, 4, "channel_affine");
  const std::size_t batch = h.size(0), c = h.size(1), hw = h.size(2) * h.size(3);
  const auto cs = ChannelVector<T>::make(scale_v, batch, c, "channel_affine");
  const auto cb = ChannelVector<T>::make(shift_v, batch, c, "channel_affine");
  std::vector<T> out(h.numel());
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T s = scale_v.raw()[cs.index(b, ch)];
      const T t = shift_v.raw()[cb.index(b, ch)];
      const std::size_t off = (b * c + ch) * hw;
      for (std::size_t i = 0; i < hw; ++i) out[off + i] = s * h.raw()[off + i] + t;
    }
  }
  return make_result<T>(h.shape(), std::move(out), {&h, &scale_v, &shift_v}, "channel_affine",
                        [h, scale_v, shift_v, cs, cb, batch, c, hw](std::span<const T> g) {
                          auto gh = grad_buffer(h);
                          auto gs = grad_buffer(scale_v);
                          auto gt = grad_buffer(shift_v);
                          for (std::size_t b = 0; b < batch; ++b) {
                            for (std::size_t ch = 0; ch < c; ++ch) {
                              const std::size_t off = (b * c + ch) * hw;
                              const T s = scale_v.raw()[cs.index(b, ch)];
                              T acc_s{0}, acc_t{0};
                              for (std::size_t i = 0; i < hw; ++i) {
                                if (!gh.empty()) gh[off + i] += g[off + i] * s;
                                acc_s += g[off + i] * h.raw()[off + i];
                                acc_t += g[off + i];
                              }
                              if (!gs.empty()) gs[cs.index(b, ch)] += acc_s;
                              if (!gt.empty()) gt[cb.index(b, ch)] += acc_t;
                            }
                          }
                        });
}

// Attention ---------------------------------------------------------------

template <typename T>
Tensor<T> spatial_attention(const Tensor<T>& x, const Tensor<T>& wq, const Tensor<T>& bq,
                            const Tensor<T>& wk, const Tensor<T>& wv, const Tensor<T>& bv,
                            const Tensor<T>& wo, const Tensor<T>& bo) {
  require_rank(x, 4, "spatial_attention");
  const std::size_t batch = x.size(0), c = x.size(1), n = x.size(2) * x.size(3);
  for (const auto* w : {&wq, &wk, &wv, &wo}) {
    if (w->dim() != 2 || w->size(0) != c || w->size(1) != c) {
      throw DimensionError("spatial_attention: projection must be [C,C], got " +
                           shape_str(w->shape()));
    }
  }
  for (const auto* b : {&bq, &bv, &bo}) {
    if (b->numel() != c) throw DimensionError("spatial_attention: bias must have C entries");
  }
  const T inv_sqrt_d = static_cast<T>(1.0 / std::sqrt(static_cast<double>(c)));

  // Per-sample intermediates saved for backward: Xt, Q, K, V, P, O.
  struct Saved {
    std::vector<T> xt, q, k, v, p, o;
  };
  auto saved = std::make_shared<std::vector<Saved>>(batch);

  auto project = [&](const std::vector<T>& xt, const Tensor<T>& w, const Tensor<T>* b) {
    std::vector<T> wt(c * c);
    kernels::transpose(c, c, w.raw(), wt.data());
    std::vector<T> r(n * c);
    kernels::gemm_nn(n, c, c, xt.data(), wt.data(), r.data());
    if (b) {
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < c; ++j) r[i * c + j] += b->raw()[j];
      }
    }
    return r;
  };

  std::vector<T> out(x.numel());
  for (std::size_t b = 0; b < batch; ++b) {
    Saved& s = (*saved)[b];
    s.xt.resize(n * c);
    kernels::transpose(c, n, x.raw() + b * c * n, s.xt.data());
    s.q = project(s.xt, wq, &bq);
    s.k = project(s.xt, wk, nullptr);
    s.v = project(s.xt, wv, &bv);
    std::vector<T> kt(c * n);
    kernels::transpose(n, c, s.k.data(), kt.data());
    s.p.resize(n * n);
    kernels::gemm_nn(n, n, c, s.q.data(), kt.data(), s.p.data());
    for (std::size_t i = 0; i < n; ++i) {
      T* row = s.p.data() + i * n;
      T mx = row[0] * inv_sqrt_d;
      for (std::size_t j = 0; j < n; ++j) {
        row[j] *= inv_sqrt_d;
        mx = std::max(mx, row[j]);
      }
      T z{0};
      for (std::size_t j = 0; j < n; ++j) {
        row[j] = std::exp(row[j] - mx);
        z += row[j];
      }
      for (std::size_t j = 0; j < n; ++j) row[j] /= z;
    }
    s.o.resize(n * c);
    kernels::gemm_nn(n, c, n, s.p.data(), s.v.data(), s.o.data());
    std::vector<T> yt = project(s.o, wo, &bo);
    kernels::transpose(n, c, yt.data(), out.data() + b * c * n);
  }

  return make_result<T>(
      x.shape(), std::move(out), {&x, &wq, &bq, &wk, &wv, &bv, &wo, &bo}, "spatial_attention",
      [x, wq, bq, wk, wv, bv, wo, bo, saved, batch, c, n, inv_sqrt_d](std::span<const T> g) {
        auto gx = grad_buffer(x);
        auto accumulate_weight = [&](const Tensor<T>& w, const Tensor<T>* bias,
                                     const std::vector<T>& dout, const std::vector<T>& in) {
          // out = in * W^T + b  =>  dW += dout^T * in, db += colsum(dout)
          if (auto gw = grad_buffer(w); !gw.empty()) {
            kernels::gemm_tn(c, c, n, dout.data(), in.data(), gw.data(), true);
          }
          if (!bias) return;
          if (auto gb = grad_buffer(*bias); !gb.empty()) {
            for (std::size_t i = 0; i < n; ++i) {
              for (std::size_t j = 0; j < c; ++j) gb[j] += dout[i * c + j];
            }
          }
        };
        for (std::size_t b = 0; b < batch; ++b) {
          const Saved& s = (*saved)[b];
          std::vector<T> dyt(n * c);
          kernels::transpose(c, n, g.data() + b * c * n, dyt.data());
          accumulate_weight(wo, &bo, dyt, s.o);
          std::vector<T> d_o(n * c);
          kernels::gemm_nn(n, c, c, dyt.data(), wo.raw(), d_o.data());
          // dP = dO * V^T
          std::vector<T> vt(c * n);
          kernels::transpose(n, c, s.v.data(), vt.data());
          std::vector<T> dp(n * n);
          kernels::gemm_nn(n, n, c, d_o.data(), vt.data(), dp.data());
          // dV = P^T * dO
          std::vector<T> dv(n * c);
          kernels::gemm_tn(n, c, n, s.p.data(), d_o.data(), dv.data());
          // softmax backward, then the 1/sqrt(d) scale
          for (std::size_t i = 0; i < n; ++i) {
            const T* pr = s.p.data() + i * n;
            T* dr = dp.data() + i * n;
            T dot{0};
            for (std::size_t j = 0; j < n; ++j) dot += dr[j] * pr[j];
            for (std::size_t j = 0; j < n; ++j) dr[j] = pr[j] * (dr[j] - dot) * inv_sqrt_d;
          }
          std::vector<T> dq(n * c), dk(n * c);
          kernels::gemm_nn(n, c, n, dp.data(), s.k.data(), dq.data());
          kernels::gemm_tn(n, c, n, dp.data(), s.q.data(), dk.data());
          accumulate_weight(wq, &bq, dq, s.xt);
          accumulate_weight(wk, nullptr, dk, s.xt);
          accumulate_weight(wv, &bv, dv, s.xt);
          if (!gx.empty()) {
            std::vector<T> dxt(n * c);
            kernels::gemm_nn(n, c, c, dq.data(), wq.raw(), dxt.data());
            kernels::gemm_nn(n, c, c, dk.data(), wk.raw(), dxt.data(), true);
            kernels::gemm_nn(n, c, c, dv.data(), wv.raw(), dxt.data(), true);
            std::vector<T> dx(c * n);
            kernels::transpose(n, c, dxt.data(), dx.data());
            T* dst = gx.data() + b * c * n;
            for (std::size_t i = 0; i < c * n; ++i) dst[i] += dx[i];
          }
        }
      });
}

// Loss ----------------------------------------------------------------------

template <typename T>
Tensor<T> smse_loss(const Tensor<T>& pred, const Tensor<T>& target, std::size_t n_t) {
  require_same_shape(pred, target, "smse_loss");
  if (pred.dim() != 4 && pred.dim() != 5) {
    throw DimensionError("smse_loss: expected [B,C,H,W] or [B,T,F,H,W], got " +
                         shape_str(pred.shape()));
  }
  if (n_t == 0) throw ConfigError("smse_loss: n_t must be positive");
  if (pred.dim() == 5 ? pred.size(1) != n_t : pred.size(1) % n_t != 0) {
    throw DimensionError("smse_loss: shape " + shape_str(pred.shape()) +
                         " inconsistent with n_t=" + std::to_string(n_t));
  }
  const std::size_t batch = pred.size(0);
  const std::size_t spatial = pred.size(pred.dim() - 2) * pred.size(pred.dim() - 1);
  const double norm = 1.0 / static_cast<double>(batch * spatial);
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    const double d = static_cast<double>(pred.raw()[i]) - target.raw()[i];
    acc += d * d;
  }
  return make_result<T>(Shape{1}, {static_cast<T>(acc * norm)}, {&pred, &target}, "smse_loss",
                        [pred, target, norm](std::span<const T> g) {
                          const T k = static_cast<T>(2.0 * norm) * g[0];
                          auto gp = grad_buffer(pred);
                          for (std::size_t i = 0; i < gp.size(); ++i) {
                            gp[i] += k * (pred.raw()[i] - target.raw()[i]);
                          }
                          auto gt = grad_buffer(target);
                          for (std::size_t i = 0; i < gt.size(); ++i) {
                            gt[i] -= k * (pred.raw()[i] - target.raw()[i]);
                          }
                        });
}

#define NPDE_INSTANTIATE_OPS(T)                                                                 \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                           \
  template Tensor<T> scale(const Tensor<T>&, T);                                                \
  template Tensor<T> gelu(const Tensor<T>&);                                                    \
  template Tensor<T> sum(const Tensor<T>&);                                                     \
  template Tensor<T> mean(const Tensor<T>&);                                                    \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                          \
  template Tensor<T> narrow_cols(const Tensor<T>&, std::size_t, std::size_t);                   \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);              \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,               \
                            Conv2dOptions);                                                     \
  template Tensor<T> conv_transpose2x2(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);   \
  template Tensor<T> max_pool2d(const Tensor<T>&, std::size_t);                                 \
  template Tensor<T> upsample_nearest(const Tensor<T>&, std::size_t);                           \
  template Tensor<T> concat_channels(const Tensor<T>&, const Tensor<T>&);                       \
  template Tensor<T> group_norm(const Tensor<T>&, std::size_t, const Tensor<T>&,                \
                                const Tensor<T>&, T);                                           \
  template Tensor<T> add_channel_vector(const Tensor<T>&, const Tensor<T>&);                    \
  template Tensor<T> channel_affine(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);      \
  template Tensor<T> spatial_attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,    \
                                       const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,    \
                                       const Tensor<T>&, const Tensor<T>&);                     \
  template Tensor<T> smse_loss(const Tensor<T>&, const Tensor<T>&, std::size_t);

NPDE_INSTANTIATE_OPS(float)
NPDE_INSTANTIATE_OPS(double)

}  // namespace npde
