#pragma once

#include <cmath>
#include <vector>

#include "npde/rng.hpp"
#include "npde/tensor.hpp"

namespace npde::testing {

template <typename T>
Tensor<T> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<T> data(shape_numel(shape));
  for (auto& v : data) v = static_cast<T>(rng.uniform(lo, hi));
  return Tensor<T>(std::move(shape), std::move(data));
}

template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& t) {
  std::vector<To> data(t.numel());
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<To>(t.raw()[i]);
  return Tensor<To>(t.shape(), std::move(data));
}

template <typename A, typename B>
double max_abs_diff(const A& a, const B& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  }
  return m;
}

}  // namespace npde::testing
