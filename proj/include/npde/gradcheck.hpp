#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "npde/tensor.hpp"

namespace npde {

struct GradCheckOptions {
  double step = 1e-5;
  /// Absolute floor of the relative-error denominator.
  double floor = 1e-8;
  /// Coordinates sampled per input; 0 checks every coordinate.
  std::size_t max_coords = 0;
  std::uint64_t seed = 0;
};

struct GradCheckCoord {
  std::size_t input = 0;
  std::size_t index = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  /// Coordinates where the one-sided slopes disagree in a way that a smooth
  /// function cannot produce (max-pool ties, GeLU is smooth so never here).
  std::vector<GradCheckCoord> excluded;
  GradCheckCoord worst;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;

  std::string describe() const;
};

template <typename T>
using ScalarFn = std::function<Tensor<T>()>;

/// Compares reverse-mode gradients of `analytic_fn` w.r.t. `analytic_inputs`
/// against a fourth-order central difference of `numeric_fn`, perturbing
/// `numeric_inputs` in place (and restoring them). Both functions must close
/// over their inputs; the two input lists correspond element by element, so
/// a 32-bit graph can be checked against a 64-bit finite-difference oracle.
template <typename TA, typename TN>
GradCheckResult check_gradient(const ScalarFn<TA>& analytic_fn,
                               const std::vector<Tensor<TA>>& analytic_inputs,
                               const ScalarFn<TN>& numeric_fn,
                               const std::vector<Tensor<TN>>& numeric_inputs,
                               const GradCheckOptions& opts = {});

/// Same-precision convenience form.
template <typename T>
GradCheckResult check_gradient(const ScalarFn<T>& fn, const std::vector<Tensor<T>>& inputs,
                               const GradCheckOptions& opts = {}) {
  return check_gradient<T, T>(fn, inputs, fn, inputs, opts);
}

/// Single-input form: f maps x to a scalar tensor.
template <typename T>
GradCheckResult check_gradient(const std::function<Tensor<T>(const Tensor<T>&)>& f,
                               const Tensor<T>& x, double step = 1e-5) {
  GradCheckOptions opts;
  opts.step = step;
  ScalarFn<T> fn = [&] { return f(x); };
  return check_gradient<T>(fn, {x}, opts);
}

}  // namespace npde
