#pragma once

#include <cstddef>

#include "npde/kernels.hpp"
#include "npde/tensor.hpp"

namespace npde {

// Elementwise ------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s);
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s);

/// Exact GeLU x * Phi(x) with Phi the standard normal CDF.
template <typename T>
Tensor<T> gelu(const Tensor<T>& a);

/// Scalar GeLU used by kernels and oracles.
double gelu_value(double x);

// Reductions and reshapes --------------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& a);
template <typename T>
Tensor<T> mean(const Tensor<T>& a);
template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape);

/// Columns [start, start+len) of a [rows, cols] tensor.
template <typename T>
Tensor<T> narrow_cols(const Tensor<T>& a, std::size_t start, std::size_t len);

// Dense layers -------------------------------------------------------------

/// [m,k] x [k,n] -> [m,n]
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// x[B,in] * w[out,in]^T + bias[out]
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias);

// Convolutions and resampling ---------------------------------------------

struct Conv2dOptions {
  std::size_t stride = 1;
  Padding padding = Padding::circular;
};

/// Same-padded cross-correlation x[B,Cin,H,W] with w[Cout,Cin,kh,kw].
/// `bias` may be an undefined tensor.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                 Conv2dOptions opts = {});

/// Transposed 2x2 stride-2 convolution, w[Cin,Cout,2,2]; doubles H and W.
template <typename T>
Tensor<T> conv_transpose2x2(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias);

/// Non-overlapping max pooling. Gradient goes to the first maximal element
/// in row-major window order.
template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& x, std::size_t window = 2);

template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& x, std::size_t factor = 2);

/// Concatenation along the channel axis of two [B,C,H,W] tensors.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);

// Normalization and channel modulation --------------------------------------

/// Per (sample, group) standardization over the group's channels and all
/// spatial positions, then per-channel affine gamma/beta.
template <typename T>
Tensor<T> group_norm(const Tensor<T>& x, std::size_t groups, const Tensor<T>& gamma,
                     const Tensor<T>& beta, T eps = T(1e-5));

/// h[B,C,H,W] + v broadcast over space; v is [C] or [B,C].
template <typename T>
Tensor<T> add_channel_vector(const Tensor<T>& h, const Tensor<T>& v);

/// h * scale + shift per channel; scale and shift are [C] or [B,C].
template <typename T>
Tensor<T> channel_affine(const Tensor<T>& h, const Tensor<T>& scale, const Tensor<T>& shift);

// Attention ---------------------------------------------------------------

/// Single-head scaled dot-product self-attention over the flattened spatial
/// grid. Weights are [C,C] projections. The key projection has no bias: a
/// key bias only shifts each softmax row and never receives a gradient.
/// No residual.
template <typename T>
Tensor<T> spatial_attention(const Tensor<T>& x, const Tensor<T>& wq, const Tensor<T>& bq,
                            const Tensor<T>& wk, const Tensor<T>& wv, const Tensor<T>& bv,
                            const Tensor<T>& wo, const Tensor<T>& bo);

// Loss ----------------------------------------------------------------------

/// Summed MSE: squared error summed over fields (and rollout steps), averaged
/// over spatial points and batch. pred/target are [B, n_t*F, H, W] or
/// [B, n_t, F, H, W]; n_t must divide the non-spatial extent.
template <typename T>
Tensor<T> smse_loss(const Tensor<T>& pred, const Tensor<T>& target, std::size_t n_t = 1);

}  // namespace npde
