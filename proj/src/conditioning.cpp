#include "npde/conditioning.hpp"

#include <cmath>
#include <string>

#include "npde/ops.hpp"

namespace npde {

std::vector<double> sinusoidal_embed(double x, std::size_t d) {
  if (d < 2 || d % 2 != 0) {
    throw ConfigError("sinusoidal_embed: dimension must be even and >= 2, got " +
                      std::to_string(d));
  }
  std::vector<double> out(d);
  for (std::size_t i = 0; i < d / 2; ++i) {
    const double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(d));
    out[2 * i] = std::sin(x * freq);
    out[2 * i + 1] = std::cos(x * freq);
  }
  return out;
}

template <typename T>
Tensor<T> sinusoidal_embed_batch(const std::vector<double>& values, std::size_t d) {
  if (values.empty()) throw DimensionError("sinusoidal_embed_batch: no values");
  std::vector<T> data;
  data.reserve(values.size() * d);
  for (double v : values) {
    for (double e : sinusoidal_embed(v, d)) data.push_back(static_cast<T>(e));
  }
  return Tensor<T>(Shape{values.size(), d}, std::move(data));
}

template <typename T>
Tensor<T> project(const Tensor<T>& emb_dt, const Tensor<T>& emb_force,
                  const ProjectionMlp<T>& dt_mlp, const ProjectionMlp<T>& force_mlp) {
  if (emb_dt.shape() != emb_force.shape()) {
    throw DimensionError("project: embeddings differ in shape, " + shape_str(emb_dt.shape()) +
                         " vs " + shape_str(emb_force.shape()));
  }
  auto mlp = [](const Tensor<T>& e, const ProjectionMlp<T>& m) {
    return linear(gelu(linear(e, m.w1, m.b1)), m.w2, m.b2);
  };
  return add(mlp(emb_dt, dt_mlp), mlp(emb_force, force_mlp));
}

template <typename T>
Tensor<T> apply_addition(const Tensor<T>& h, const Tensor<T>& cond) {
  return add_channel_vector(h, cond);
}

template <typename T>
Tensor<T> apply_adagn(const Tensor<T>& h, std::size_t groups, const Tensor<T>& gamma,
                      const Tensor<T>& beta, const Tensor<T>& y_s, const Tensor<T>& y_b) {
  return channel_affine(group_norm(h, groups, gamma, beta), y_s, y_b);
}

#define NPDE_INSTANTIATE_COND(T)                                                             \
  template Tensor<T> sinusoidal_embed_batch<T>(const std::vector<double>&, std::size_t);     \
  template Tensor<T> project(const Tensor<T>&, const Tensor<T>&, const ProjectionMlp<T>&,    \
                             const ProjectionMlp<T>&);                                       \
  template Tensor<T> apply_addition(const Tensor<T>&, const Tensor<T>&);                     \
  template Tensor<T> apply_adagn(const Tensor<T>&, std::size_t, const Tensor<T>&,            \
                                 const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);

NPDE_INSTANTIATE_COND(float)
NPDE_INSTANTIATE_COND(double)

}  // namespace npde
