#pragma once

#include <cstddef>

namespace npde {

enum class Padding { circular, zero };

namespace kernels {

/// Geometry of a same-padded 2-D cross-correlation.
struct ConvGeometry {
  std::size_t batch = 1;
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t height = 1;
  std::size_t width = 1;
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  std::size_t stride = 1;
  Padding padding = Padding::circular;

  std::size_t out_height() const { return height / stride; }
  std::size_t out_width() const { return width / stride; }
  std::size_t patch() const { return in_channels * kernel_h * kernel_w; }
};

/// Throws ConfigError/DimensionError for even kernels or indivisible strides.
void validate(const ConvGeometry& g);

/// Threads used by the parallel kernels (1 when built without OpenMP).
int max_threads();
void set_num_threads(int n);

// Parallel kernels. Every output element is reduced by exactly one thread in
// a fixed order, so results do not depend on the thread count.

/// C[M,N] = A[M,K] * B[K,N]  (accumulate=true adds into C)
template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate = false);

/// C[M,N] = A[K,M]^T * B[K,N]
template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate = false);

/// C[M,N] = A[M,K] * B[N,K]^T
template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate = false);

/// out[cols, rows] = in[rows, cols]^T
template <typename T>
void transpose(std::size_t rows, std::size_t cols, const T* in, T* out);

/// y[B,Cout,Ho,Wo] = conv(x, w) + bias. `bias` may be null.
template <typename T>
void conv2d_forward(const ConvGeometry& g, const T* x, const T* w, const T* bias, T* y);

/// Accumulates input/weight/bias gradients; any output pointer may be null.
template <typename T>
void conv2d_backward(const ConvGeometry& g, const T* x, const T* w, const T* dy, T* dx, T* dw,
                     T* dbias);

namespace reference {

// Straight-line serial loops kept as oracles for the parallel kernels.

template <typename T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c);

template <typename T>
void conv2d_forward(const ConvGeometry& g, const T* x, const T* w, const T* bias, T* y);

template <typename T>
void conv2d_backward(const ConvGeometry& g, const T* x, const T* w, const T* dy, T* dx, T* dw,
                     T* dbias);

}  // namespace reference
}  // namespace kernels
}  // namespace npde
