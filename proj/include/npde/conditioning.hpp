#pragma once

#include <cstddef>
#include <vector>

#include "npde/tensor.hpp"

namespace npde {

/// Scalar conditioning inputs, one entry per batch sample.
struct ConditioningContext {
  std::vector<double> dt;
  std::vector<double> force;

  std::size_t size() const { return dt.size(); }
};

/// out[2i] = sin(x / 10000^(2i/d)), out[2i+1] = cos(x / 10000^(2i/d)).
std::vector<double> sinusoidal_embed(double x, std::size_t d);

/// Row-stacked embeddings [values.size(), d].
template <typename T>
Tensor<T> sinusoidal_embed_batch(const std::vector<double>& values, std::size_t d);

/// Weights of one two-layer projection MLP: d -> width -> width.
template <typename T>
struct ProjectionMlp {
  Tensor<T> w1, b1, w2, b2;
};

/// Each embedding through its own MLP (GeLU between the layers), then summed.
template <typename T>
Tensor<T> project(const Tensor<T>& emb_dt, const Tensor<T>& emb_force, const ProjectionMlp<T>& dt_mlp,
                  const ProjectionMlp<T>& force_mlp);

/// h + cond broadcast over space; cond is [C] or [B,C].
template <typename T>
Tensor<T> apply_addition(const Tensor<T>& h, const Tensor<T>& cond);

/// y_s * GroupNorm(h) + y_b, with the norm's own affine parameters inside.
template <typename T>
Tensor<T> apply_adagn(const Tensor<T>& h, std::size_t groups, const Tensor<T>& gamma,
                      const Tensor<T>& beta, const Tensor<T>& y_s, const Tensor<T>& y_b);

}  // namespace npde
