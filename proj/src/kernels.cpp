#include "npde/kernels.hpp"

#include <algorithm>
#include <memory>
#include <string>
#include <vector>

#include "npde/error.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace npde::kernels {

namespace {

constexpr std::size_t kTileN = 512;
constexpr std::size_t kTileK = 256;

inline std::size_t wrap(std::ptrdiff_t i, std::size_t n) {
  const auto m = static_cast<std::ptrdiff_t>(n);
  i %= m;
  return static_cast<std::size_t>(i < 0 ? i + m : i);
}

/// Source index of input row/col for output position `o` and tap `t`;
/// returns false for zero padding outside the domain.
inline bool source_index(std::size_t o, std::size_t t, std::size_t stride, std::size_t k,
                         std::size_t n, Padding p, std::size_t& out) {
  const auto i = static_cast<std::ptrdiff_t>(o * stride + t) - static_cast<std::ptrdiff_t>(k / 2);
  if (p == Padding::circular) {
    out = wrap(i, n);
    return true;
  }
  if (i < 0 || i >= static_cast<std::ptrdiff_t>(n)) return false;
  out = static_cast<std::size_t>(i);
  return true;
}

/// Per tap and output position, the source index or -1 for zero padding.
std::vector<std::ptrdiff_t> tap_table(std::size_t outs, std::size_t k, std::size_t stride,
                                      std::size_t n, Padding p) {
  std::vector<std::ptrdiff_t> table(k * outs);
  for (std::size_t t = 0; t < k; ++t) {
    for (std::size_t o = 0; o < outs; ++o) {
      std::size_t i;
      table[t * outs + o] =
          source_index(o, t, stride, k, n, p, i) ? static_cast<std::ptrdiff_t>(i) : -1;
    }
  }
  return table;
}

// cols[(ci*kh+ky)*kw+kx][b*Ho*Wo + oy*Wo + ox]
template <typename T>
void im2col(const ConvGeometry& g, const T* x, T* cols) {
  const std::size_t ho = g.out_height(), wo = g.out_width();
  const std::size_t n = g.batch * ho * wo;
  const std::size_t rows = g.patch();
  const auto ys = tap_table(ho, g.kernel_h, g.stride, g.height, g.padding);
  const auto xs = tap_table(wo, g.kernel_w, g.stride, g.width, g.padding);
#pragma omp parallel for schedule(static)
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t kx = r % g.kernel_w;
    const std::size_t ky = (r / g.kernel_w) % g.kernel_h;
    const std::size_t ci = r / (g.kernel_w * g.kernel_h);
    const std::ptrdiff_t* xi = xs.data() + kx * wo;
    T* dst = cols + r * n;
    for (std::size_t b = 0; b < g.batch; ++b) {
      const T* plane = x + (b * g.in_channels + ci) * g.height * g.width;
      for (std::size_t oy = 0; oy < ho; ++oy) {
        T* row = dst + (b * ho + oy) * wo;
        const std::ptrdiff_t iy = ys[ky * ho + oy];
        if (iy < 0) {
          std::fill(row, row + wo, T{0});
          continue;
        }
        const T* src = plane + iy * static_cast<std::ptrdiff_t>(g.width);
        for (std::size_t ox = 0; ox < wo; ++ox) row[ox] = xi[ox] >= 0 ? src[xi[ox]] : T{0};
      }
    }
  }
}

// Scatter-add of column gradients; parallel over input channels so every
// dx element has a single writer.
template <typename T>
void col2im(const ConvGeometry& g, const T* cols, T* dx) {
  const std::size_t ho = g.out_height(), wo = g.out_width();
  const std::size_t n = g.batch * ho * wo;
  const auto ys = tap_table(ho, g.kernel_h, g.stride, g.height, g.padding);
  const auto xs = tap_table(wo, g.kernel_w, g.stride, g.width, g.padding);
#pragma omp parallel for schedule(static)
  for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
    for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
        const T* src = cols + ((ci * g.kernel_h + ky) * g.kernel_w + kx) * n;
        const std::ptrdiff_t* xi = xs.data() + kx * wo;
        for (std::size_t b = 0; b < g.batch; ++b) {
          T* plane = dx + (b * g.in_channels + ci) * g.height * g.width;
          for (std::size_t oy = 0; oy < ho; ++oy) {
            const std::ptrdiff_t iy = ys[ky * ho + oy];
            if (iy < 0) continue;
            const T* row = src + (b * ho + oy) * wo;
            T* dst = plane + iy * static_cast<std::ptrdiff_t>(g.width);
            for (std::size_t ox = 0; ox < wo; ++ox) {
              if (xi[ox] >= 0) dst[xi[ox]] += row[ox];
            }
          }
        }
      }
    }
  }
}

/// Per-thread staging buffers, grown on demand and reused across calls so
/// large convolutions do not pay for fresh pages every time. Each slot is in
/// use by at most one live buffer at a time.
template <typename T>
T* scratch(std::size_t slot, std::size_t n) {
  thread_local std::vector<T> pool[8];
  auto& buf = pool[slot];
  if (buf.size() < n) buf.resize(n);
  return buf.data();
}

bool is_pointwise(const ConvGeometry& g) {
  return g.kernel_h == 1 && g.kernel_w == 1 && g.stride == 1;
}

// Stride-1 convolutions with few channels are memory bound through im2col;
// they run as shifted multiply-adds over padded planes instead.
bool use_direct(const ConvGeometry& g) {
  return g.stride == 1 && !is_pointwise(g) && g.width >= 16 && g.out_channels <= 16 &&
         g.in_channels <= 64;
}

/// Padded plane layout shared by the direct kernels: row stride W + kw - 1,
/// kh - 1 halo rows plus one spare row so shifted reads of the discarded
/// columns stay in bounds.
struct PaddedLayout {
  std::size_t ph, pw, wp, hp, plane, len;
  explicit PaddedLayout(const ConvGeometry& g)
      : ph(g.kernel_h / 2),
        pw(g.kernel_w / 2),
        wp(g.width + 2 * pw),
        hp(g.height + 2 * ph + 1),
        plane(hp * wp),
        len(g.height * wp) {}
};

inline std::ptrdiff_t h_w(const ConvGeometry& g) { return static_cast<std::ptrdiff_t>(g.width); }

template <typename T>
void pad_plane(const ConvGeometry& g, const PaddedLayout& l, const T* src, T* dst) {
  const auto h = static_cast<std::ptrdiff_t>(g.height);
  for (std::size_t r = 0; r < l.hp; ++r) {
    T* row = dst + r * l.wp;
    const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(r) - static_cast<std::ptrdiff_t>(l.ph);
    const bool inside = sy >= 0 && sy < h;
    if (r + 1 == l.hp || (!inside && g.padding == Padding::zero)) {
      std::fill(row, row + l.wp, T{0});
      continue;
    }
    const T* s = src + wrap(sy, g.height) * g.width;
    std::copy_n(s, g.width, row + l.pw);
    const bool zero = g.padding == Padding::zero;
    const auto pw = static_cast<std::ptrdiff_t>(l.pw), wi = static_cast<std::ptrdiff_t>(g.width);
    for (std::ptrdiff_t c = 0; c < pw; ++c) {
      row[c] = zero ? T{0} : s[wrap(c - pw, g.width)];
      row[pw + wi + c] = zero ? T{0} : s[wrap(wi + c, g.width)];
    }
  }
}

// out[co][j] = sum_{ci,t} wt[(co*cin + ci)*taps + t] * in[ci*plane + off[t] + j], j < len.
template <typename T>
void direct_correlate(std::size_t cout, std::size_t cin, std::size_t taps,
                      const std::size_t* off, const T* wt, const T* in, std::size_t plane,
                      std::size_t len, T* out) {
  constexpr std::size_t CB = 8, J = 128 / sizeof(T);
  for (std::size_t co0 = 0; co0 < cout; co0 += CB) {
    const std::size_t cb = std::min(CB, cout - co0);
    for (std::size_t j0 = 0; j0 < len; j0 += J) {
      const std::size_t jn = std::min(J, len - j0);
      T acc[CB][J] = {};
      for (std::size_t ci = 0; ci < cin; ++ci) {
        const T* base = in + ci * plane + j0;
        for (std::size_t t = 0; t < taps; ++t) {
          const T* src = base + off[t];
          if (cb == CB && jn == J) {
            for (std::size_t r = 0; r < CB; ++r) {
              const T wv = wt[((co0 + r) * cin + ci) * taps + t];
#pragma omp simd
              for (std::size_t q = 0; q < J; ++q) acc[r][q] += wv * src[q];
            }
          } else if (jn == J) {
            for (std::size_t r = 0; r < cb; ++r) {
              const T wv = wt[((co0 + r) * cin + ci) * taps + t];
#pragma omp simd
              for (std::size_t q = 0; q < J; ++q) acc[r][q] += wv * src[q];
            }
          } else {
            for (std::size_t r = 0; r < cb; ++r) {
              const T wv = wt[((co0 + r) * cin + ci) * taps + t];
              for (std::size_t q = 0; q < jn; ++q) acc[r][q] += wv * src[q];
            }
          }
        }
      }
      for (std::size_t r = 0; r < cb; ++r) std::copy_n(acc[r], jn, out + (co0 + r) * len + j0);
    }
  }
}

template <typename T>
std::vector<std::size_t> tap_offsets(const ConvGeometry& g, const PaddedLayout& l) {
  std::vector<std::size_t> off(g.kernel_h * g.kernel_w);
  for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
    for (std::size_t kx = 0; kx < g.kernel_w; ++kx) off[ky * g.kernel_w + kx] = ky * l.wp + kx;
  }
  return off;
}

template <typename T>
void direct_forward(const ConvGeometry& g, const T* x, const T* w, T* y) {
  const PaddedLayout l(g);
  const std::size_t hw = g.height * g.width, taps = g.kernel_h * g.kernel_w;
  const auto off = tap_offsets<T>(g, l);
  T* xp = scratch<T>(5, g.batch * g.in_channels * l.plane);
#pragma omp parallel for collapse(2) schedule(static)
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
      const std::size_t p = b * g.in_channels + ci;
      pad_plane(g, l, x + p * hw, xp + p * l.plane);
    }
  }
#pragma omp parallel for schedule(static)
  for (std::size_t b = 0; b < g.batch; ++b) {
    T* out = scratch<T>(6, g.out_channels * l.len);
    direct_correlate(g.out_channels, g.in_channels, taps, off.data(), w,
                     xp + b * g.in_channels * l.plane, l.plane, l.len, out);
    for (std::size_t co = 0; co < g.out_channels; ++co) {
      for (std::size_t r = 0; r < g.height; ++r) {
        std::copy_n(out + co * l.len + r * l.wp, g.width,
                    y + (b * g.out_channels + co) * hw + r * g.width);
      }
    }
  }
}

template <typename T>
void direct_backward(const ConvGeometry& g, const T* x, const T* w, const T* dy, T* dx, T* dw) {
  const PaddedLayout l(g);
  const std::size_t hw = g.height * g.width, taps = g.kernel_h * g.kernel_w;
  const auto off = tap_offsets<T>(g, l);
  if (dx) {
    // The adjoint is a correlation of the padded output gradient with the
    // flipped, channel-transposed kernel.
    std::vector<T> wf(g.in_channels * g.out_channels * taps);
    for (std::size_t co = 0; co < g.out_channels; ++co) {
      for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
        for (std::size_t t = 0; t < taps; ++t) {
          wf[(ci * g.out_channels + co) * taps + (taps - 1 - t)] =
              w[(co * g.in_channels + ci) * taps + t];
        }
      }
    }
    T* dyp = scratch<T>(5, g.batch * g.out_channels * l.plane);
#pragma omp parallel for collapse(2) schedule(static)
    for (std::size_t b = 0; b < g.batch; ++b) {
      for (std::size_t co = 0; co < g.out_channels; ++co) {
        const std::size_t p = b * g.out_channels + co;
        pad_plane(g, l, dy + p * hw, dyp + p * l.plane);
      }
    }
#pragma omp parallel for schedule(static)
    for (std::size_t b = 0; b < g.batch; ++b) {
      T* out = scratch<T>(6, g.in_channels * l.len);
      direct_correlate(g.in_channels, g.out_channels, taps, off.data(), wf.data(),
                       dyp + b * g.out_channels * l.plane, l.plane, l.len, out);
      for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
        for (std::size_t r = 0; r < g.height; ++r) {
          const T* src = out + ci * l.len + r * l.wp;
          T* dst = dx + (b * g.in_channels + ci) * hw + r * g.width;
          for (std::size_t c = 0; c < g.width; ++c) dst[c] += src[c];
        }
      }
    }
  }
  if (dw) {
    // dW[co][ci][t] = sum_b sum_j dy_b[co][j] * xpad_b[ci][off[t] + j], with dy
    // laid out on the padded row stride and zero in the discarded columns.
    T* xp = scratch<T>(5, g.batch * g.in_channels * l.plane);
    T* dyz = scratch<T>(7, g.batch * g.out_channels * l.len);
#pragma omp parallel for collapse(2) schedule(static)
    for (std::size_t b = 0; b < g.batch; ++b) {
      for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
        const std::size_t p = b * g.in_channels + ci;
        pad_plane(g, l, x + p * hw, xp + p * l.plane);
      }
    }
#pragma omp parallel for collapse(2) schedule(static)
    for (std::size_t b = 0; b < g.batch; ++b) {
      for (std::size_t co = 0; co < g.out_channels; ++co) {
        const std::size_t p = b * g.out_channels + co;
        T* dst = dyz + p * l.len;
        for (std::size_t r = 0; r < g.height; ++r) {
          std::copy_n(dy + p * hw + r * g.width, g.width, dst + r * l.wp);
          std::fill(dst + r * l.wp + g.width, dst + (r + 1) * l.wp, T{0});
        }
      }
    }
    constexpr std::size_t V = 64 / sizeof(T), TB = 9;
    const std::size_t lv = l.len / V * V;
#pragma omp parallel for collapse(2) schedule(static)
    for (std::size_t co = 0; co < g.out_channels; ++co) {
      for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
        for (std::size_t t0 = 0; t0 < taps; t0 += TB) {
          const std::size_t tb = std::min(TB, taps - t0);
          T acc[TB][V] = {};
          T tail[TB] = {};
          for (std::size_t b = 0; b < g.batch; ++b) {
            const T* d = dyz + (b * g.out_channels + co) * l.len;
            const T* xs = xp + (b * g.in_channels + ci) * l.plane;
            for (std::size_t j = 0; j < lv; j += V) {
              for (std::size_t t = 0; t < tb; ++t) {
                const T* src = xs + off[t0 + t] + j;
#pragma omp simd
                for (std::size_t q = 0; q < V; ++q) acc[t][q] += d[j + q] * src[q];
              }
            }
            for (std::size_t j = lv; j < l.len; ++j) {
              for (std::size_t t = 0; t < tb; ++t) tail[t] += d[j] * xs[off[t0 + t] + j];
            }
          }
          for (std::size_t t = 0; t < tb; ++t) {
            T sum = tail[t];
            for (std::size_t q = 0; q < V; ++q) sum += acc[t][q];
            dw[(co * g.in_channels + ci) * taps + t0 + t] += sum;
          }
        }
      }
    }
  }
}

}  // namespace

void validate(const ConvGeometry& g) {
  if (g.kernel_h % 2 == 0 || g.kernel_w % 2 == 0) {
    throw ConfigError("same-padded convolution requires odd kernel extents, got " +
                      std::to_string(g.kernel_h) + "x" + std::to_string(g.kernel_w));
  }
  if (g.stride == 0) throw ConfigError("convolution stride must be positive");
  if (g.height % g.stride != 0 || g.width % g.stride != 0) {
    throw DimensionError("spatial extent " + std::to_string(g.height) + "x" +
                         std::to_string(g.width) + " not divisible by stride " +
                         std::to_string(g.stride));
  }
  if (g.padding == Padding::circular && (g.height < g.kernel_h / 2 || g.width < g.kernel_w / 2)) {
    throw DimensionError("input smaller than kernel halo");
  }
}

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void set_num_threads(int n) {
#ifdef _OPENMP
  omp_set_num_threads(std::max(1, n));
#else
  (void)n;
#endif
}

namespace {

// Register-blocked kernel: an MR x NR block of C accumulates over
// [k0, k1) in registers, then is added to C. a(r, kk) = a[r * ars + kk * aks].
template <typename T, std::size_t MR, std::size_t NR>
inline void micro_block(std::size_t k0, std::size_t k1, const T* a, std::size_t ars,
                        std::size_t aks, const T* b, std::size_t ldb, T* c, std::size_t ldc) {
  T acc[MR][NR] = {};
  for (std::size_t kk = k0; kk < k1; ++kk) {
    const T* br = b + kk * ldb;
    for (std::size_t r = 0; r < MR; ++r) {
      const T av = a[r * ars + kk * aks];
#pragma omp simd
      for (std::size_t j = 0; j < NR; ++j) acc[r][j] += av * br[j];
    }
  }
  for (std::size_t r = 0; r < MR; ++r) {
#pragma omp simd
    for (std::size_t j = 0; j < NR; ++j) c[r * ldc + j] += acc[r][j];
  }
}

template <typename T>
inline void edge_block(std::size_t rows, std::size_t cols, std::size_t k0, std::size_t k1,
                       const T* a, std::size_t ars, std::size_t aks, const T* b, std::size_t ldb,
                       T* c, std::size_t ldc) {
  for (std::size_t r = 0; r < rows; ++r) {
    T* cr = c + r * ldc;
    for (std::size_t kk = k0; kk < k1; ++kk) {
      const T av = a[r * ars + kk * aks];
      const T* br = b + kk * ldb;
#pragma omp simd
      for (std::size_t j = 0; j < cols; ++j) cr[j] += av * br[j];
    }
  }
}

// C[m,n] (+)= A * B[k,n] with A addressed through (ars, aks).
template <typename T>
void gemm_strided(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t ars,
                  std::size_t aks, const T* b, T* c, bool accumulate) {
  constexpr std::size_t MR = 4;
  constexpr std::size_t NR = 128 / sizeof(T);
  if (!accumulate) std::fill(c, c + m * n, T{0});
  // Packing each B panel contiguously pays off once enough rows of A reuse it:
  // B rows are often a power-of-two apart and would share a few cache sets.
  const bool pack = m >= 8 * MR && k >= 32;
  const std::size_t tiles = (n + kTileN - 1) / kTileN;
#pragma omp parallel
  {
    std::vector<T> packed(pack ? kTileK * NR : 0);
#pragma omp for schedule(static)
    for (std::size_t t = 0; t < tiles; ++t) {
      const std::size_t j0 = t * kTileN;
      const std::size_t j1 = std::min(n, j0 + kTileN);
      for (std::size_t k0 = 0; k0 < k; k0 += kTileK) {
        const std::size_t k1 = std::min(k, k0 + kTileK);
        std::size_t j = j0;
        if (pack) {
          for (; j + NR <= j1; j += NR) {
            for (std::size_t kk = k0; kk < k1; ++kk) {
              std::copy_n(b + kk * n + j, NR, packed.data() + (kk - k0) * NR);
            }
            // Shift so that row k0 of the panel is packed row 0.
            const T* bp = packed.data() - k0 * NR;
            std::size_t i = 0;
            for (; i + MR <= m; i += MR) {
              micro_block<T, MR, NR>(k0, k1, a + i * ars, ars, aks, bp, NR, c + i * n + j, n);
            }
            if (i < m) {
              edge_block(m - i, NR, k0, k1, a + i * ars, ars, aks, bp, NR, c + i * n + j, n);
            }
          }
        } else {
          std::size_t i = 0;
          for (; i + MR <= m; i += MR) {
            std::size_t jj = j0;
            for (; jj + NR <= j1; jj += NR) {
              micro_block<T, MR, NR>(k0, k1, a + i * ars, ars, aks, b + jj, n, c + i * n + jj, n);
            }
            if (jj < j1) {
              edge_block(MR, j1 - jj, k0, k1, a + i * ars, ars, aks, b + jj, n, c + i * n + jj, n);
            }
          }
          if (i < m) {
            edge_block(m - i, j1 - j0, k0, k1, a + i * ars, ars, aks, b + j0, n, c + i * n + j0,
                       n);
          }
          j = j1;
        }
        if (j < j1) {
          for (std::size_t i = 0; i < m; i += MR) {
            edge_block(std::min(MR, m - i), j1 - j, k0, k1, a + i * ars, ars, aks, b + j, n,
                       c + i * n + j, n);
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate) {
  gemm_strided(m, n, k, a, k, 1, b, c, accumulate);
}

template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate) {
  // Dot-product form: both operands are contiguous along k. k is processed in
  // chunks that stay cache resident; lane-wise partial sums are reduced in a
  // fixed order, so the result does not depend on the thread count.
  constexpr std::size_t MR = 4, NR = 4, W = 64 / sizeof(T), KC = 1024;
  if (!accumulate) std::fill(c, c + m * n, T{0});
  const std::size_t mb = (m + MR - 1) / MR, nb = (n + NR - 1) / NR;
  for (std::size_t k0 = 0; k0 < k; k0 += KC) {
    const std::size_t k1 = std::min(k, k0 + KC);
    const std::size_t kv = k0 + (k1 - k0) / W * W;
#pragma omp parallel for schedule(static)
    for (std::size_t bj = 0; bj < nb; ++bj) {
      const std::size_t j0 = bj * NR, rj = std::min(NR, n - j0);
      const T* br[NR];
      for (std::size_t q = 0; q < NR; ++q) br[q] = b + std::min(j0 + q, n - 1) * k;
      for (std::size_t bi = 0; bi < mb; ++bi) {
        const std::size_t i0 = bi * MR, ri = std::min(MR, m - i0);
        const T* ar[MR];
        for (std::size_t r = 0; r < MR; ++r) ar[r] = a + std::min(i0 + r, m - 1) * k;
        T acc[MR][NR][W] = {};
        for (std::size_t kk = k0; kk < kv; kk += W) {
          for (std::size_t r = 0; r < MR; ++r) {
            for (std::size_t q = 0; q < NR; ++q) {
#pragma omp simd
              for (std::size_t l = 0; l < W; ++l) acc[r][q][l] += ar[r][kk + l] * br[q][kk + l];
            }
          }
        }
        for (std::size_t r = 0; r < ri; ++r) {
          for (std::size_t q = 0; q < rj; ++q) {
            T sum{0};
            for (std::size_t l = 0; l < W; ++l) sum += acc[r][q][l];
            for (std::size_t kk = kv; kk < k1; ++kk) sum += ar[r][kk] * br[q][kk];
            c[(i0 + r) * n + j0 + q] += sum;
          }
        }
      }
    }
  }
}

template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate) {
  gemm_strided(m, n, k, a, 1, m, b, c, accumulate);
}

template <typename T>
void transpose(std::size_t rows, std::size_t cols, const T* in, T* out) {
  constexpr std::size_t kBlock = 32;
#pragma omp parallel for schedule(static)
  for (std::size_t r0 = 0; r0 < rows; r0 += kBlock) {
    const std::size_t r1 = std::min(rows, r0 + kBlock);
    for (std::size_t c0 = 0; c0 < cols; c0 += kBlock) {
      const std::size_t c1 = std::min(cols, c0 + kBlock);
      for (std::size_t r = r0; r < r1; ++r) {
        for (std::size_t c = c0; c < c1; ++c) out[c * rows + r] = in[r * cols + c];
      }
    }
  }
}

template <typename T>
void conv2d_forward(const ConvGeometry& g, const T* x, const T* w, const T* bias, T* y) {
  const std::size_t ho = g.out_height(), wo = g.out_width();
  const std::size_t hw = ho * wo;
  const std::size_t n = g.batch * hw;
  const std::size_t kc = g.patch();
  if (use_direct(g)) {
    direct_forward(g, x, w, y);
  } else if (is_pointwise(g)) {
    // [Cout, Cin] x [Cin, HW] per sample, no staging buffers needed.
    for (std::size_t b = 0; b < g.batch; ++b) {
      gemm_nn(g.out_channels, hw, g.in_channels, w, x + b * g.in_channels * hw,
              y + b * g.out_channels * hw);
    }
  } else {
    T* cols = scratch<T>(0, kc * n);
    im2col(g, x, cols);
    if (g.batch == 1) {
      gemm_nn(g.out_channels, n, kc, w, cols, y);
    } else {
      T* out = scratch<T>(1, g.out_channels * n);
      gemm_nn(g.out_channels, n, kc, w, cols, out);
#pragma omp parallel for collapse(2) schedule(static)
      for (std::size_t b = 0; b < g.batch; ++b) {
        for (std::size_t co = 0; co < g.out_channels; ++co) {
          std::copy_n(out + co * n + b * hw, hw, y + (b * g.out_channels + co) * hw);
        }
      }
    }
  }
  if (bias) {
#pragma omp parallel for collapse(2) schedule(static)
    for (std::size_t b = 0; b < g.batch; ++b) {
      for (std::size_t co = 0; co < g.out_channels; ++co) {
        T* dst = y + (b * g.out_channels + co) * hw;
        const T bv = bias[co];
        for (std::size_t i = 0; i < hw; ++i) dst[i] += bv;
      }
    }
  }
}

template <typename T>
void conv2d_backward(const ConvGeometry& g, const T* x, const T* w, const T* dy, T* dx, T* dw,
                     T* dbias) {
  const std::size_t ho = g.out_height(), wo = g.out_width();
  const std::size_t hw = ho * wo;
  const std::size_t n = g.batch * hw;
  const std::size_t kc = g.patch();

  if (dbias) {
#pragma omp parallel for schedule(static)
    for (std::size_t co = 0; co < g.out_channels; ++co) {
      T acc{0};
      for (std::size_t b = 0; b < g.batch; ++b) {
        const T* src = dy + (b * g.out_channels + co) * hw;
        for (std::size_t i = 0; i < hw; ++i) acc += src[i];
      }
      dbias[co] += acc;
    }
  }
  if (!dx && !dw) return;
  if (use_direct(g)) {
    direct_backward(g, x, w, dy, dx, dw);
    return;
  }

  // dY as [Cout, B*HW]
  const T* dyt = dy;
  if (g.batch > 1) {
    T* dyt_buf = scratch<T>(0, g.out_channels * n);
#pragma omp parallel for collapse(2) schedule(static)
    for (std::size_t b = 0; b < g.batch; ++b) {
      for (std::size_t co = 0; co < g.out_channels; ++co) {
        std::copy_n(dy + (b * g.out_channels + co) * hw, hw, dyt_buf + co * n + b * hw);
      }
    }
    dyt = dyt_buf;
  }

  if (dw) {
    // dW[Cout, Kc] += dY[Cout, N] * cols[Kc, N]^T
    T* cols = scratch<T>(1, kc * n);
    if (is_pointwise(g)) {
#pragma omp parallel for collapse(2) schedule(static)
      for (std::size_t b = 0; b < g.batch; ++b) {
        for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
          std::copy_n(x + (b * g.in_channels + ci) * hw, hw, cols + ci * n + b * hw);
        }
      }
    } else {
      im2col(g, x, cols);
    }
    if (g.out_channels >= 32) {
      // Wide outputs: dW^T = cols * dY^T as a plain GEMM beats the dot-product form.
      T* dyt_t = scratch<T>(3, n * g.out_channels);
      T* dwt = scratch<T>(4, kc * g.out_channels);
      transpose(g.out_channels, n, dyt, dyt_t);
      gemm_nn(kc, g.out_channels, n, cols, dyt_t, dwt);
#pragma omp parallel for schedule(static)
      for (std::size_t co = 0; co < g.out_channels; ++co) {
        for (std::size_t r = 0; r < kc; ++r) dw[co * kc + r] += dwt[r * g.out_channels + co];
      }
    } else {
      gemm_nt(g.out_channels, kc, n, dyt, cols, dw, /*accumulate=*/true);
    }
  }
  if (dx) {
    // dcols[Kc, N] = W^T * dY
    T* dcols = scratch<T>(2, kc * n);
    gemm_tn(kc, n, g.out_channels, w, dyt, dcols);
    if (is_pointwise(g)) {
#pragma omp parallel for collapse(2) schedule(static)
      for (std::size_t b = 0; b < g.batch; ++b) {
        for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
          T* dst = dx + (b * g.in_channels + ci) * hw;
          const T* src = dcols + ci * n + b * hw;
          for (std::size_t i = 0; i < hw; ++i) dst[i] += src[i];
        }
      }
    } else {
      col2im(g, dcols, dx);
    }
  }
}

namespace reference {

template <typename T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T acc{0};
      for (std::size_t kk = 0; kk < k; ++kk) acc += a[i * k + kk] * b[kk * n + j];
      c[i * n + j] = acc;
    }
  }
}

template <typename T>
void conv2d_forward(const ConvGeometry& g, const T* x, const T* w, const T* bias, T* y) {
  const std::size_t ho = g.out_height(), wo = g.out_width();
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t co = 0; co < g.out_channels; ++co) {
      for (std::size_t oy = 0; oy < ho; ++oy) {
        for (std::size_t ox = 0; ox < wo; ++ox) {
          T acc = bias ? bias[co] : T{0};
          for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
            for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
              std::size_t iy;
              if (!source_index(oy, ky, g.stride, g.kernel_h, g.height, g.padding, iy)) continue;
              for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
                std::size_t ix;
                if (!source_index(ox, kx, g.stride, g.kernel_w, g.width, g.padding, ix)) continue;
                acc += w[((co * g.in_channels + ci) * g.kernel_h + ky) * g.kernel_w + kx] *
                       x[((b * g.in_channels + ci) * g.height + iy) * g.width + ix];
              }
            }
          }
          y[((b * g.out_channels + co) * ho + oy) * wo + ox] = acc;
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward(const ConvGeometry& g, const T* x, const T* w, const T* dy, T* dx, T* dw,
                     T* dbias) {
  const std::size_t ho = g.out_height(), wo = g.out_width();
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t co = 0; co < g.out_channels; ++co) {
      for (std::size_t oy = 0; oy < ho; ++oy) {
        for (std::size_t ox = 0; ox < wo; ++ox) {
          const T gout = dy[((b * g.out_channels + co) * ho + oy) * wo + ox];
          if (dbias) dbias[co] += gout;
          for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
            for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
              std::size_t iy;
              if (!source_index(oy, ky, g.stride, g.kernel_h, g.height, g.padding, iy)) continue;
              for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
                std::size_t ix;
                if (!source_index(ox, kx, g.stride, g.kernel_w, g.width, g.padding, ix)) continue;
                const std::size_t wi = ((co * g.in_channels + ci) * g.kernel_h + ky) * g.kernel_w + kx;
                const std::size_t xi = ((b * g.in_channels + ci) * g.height + iy) * g.width + ix;
                if (dw) dw[wi] += gout * x[xi];
                if (dx) dx[xi] += gout * w[wi];
              }
            }
          }
        }
      }
    }
  }
}

}  // namespace reference

#define NPDE_INSTANTIATE_KERNELS(T)                                                              \
  template void gemm_nn<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*, bool); \
  template void gemm_tn<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*, bool); \
  template void gemm_nt<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*, bool); \
  template void transpose<T>(std::size_t, std::size_t, const T*, T*);                           \
  template void conv2d_forward<T>(const ConvGeometry&, const T*, const T*, const T*, T*);       \
  template void conv2d_backward<T>(const ConvGeometry&, const T*, const T*, const T*, T*, T*,   \
                                   T*);                                                         \
  template void reference::gemm<T>(std::size_t, std::size_t, std::size_t, const T*, const T*,   \
                                   T*);                                                         \
  template void reference::conv2d_forward<T>(const ConvGeometry&, const T*, const T*,          \
                                             const T*, T*);                                     \
  template void reference::conv2d_backward<T>(const ConvGeometry&, const T*, const T*,         \
                                              const T*, T*, T*, T*);

NPDE_INSTANTIATE_KERNELS(float)
NPDE_INSTANTIATE_KERNELS(double)

}  // namespace npde::kernels
