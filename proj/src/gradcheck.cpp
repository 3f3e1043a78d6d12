#include "npde/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "npde/rng.hpp"

namespace npde {

std::string GradCheckResult::describe() const {
  std::ostringstream os;
  os << "max_rel_error=" << max_rel_error << " checked=" << checked
     << " excluded=" << excluded.size() << " worst=(input " << worst.input << ", index "
     << worst.index << ", analytic " << worst_analytic << ", numeric " << worst_numeric << ")";
  return os.str();
}

namespace {

std::vector<std::size_t> pick_coords(std::size_t n, std::size_t max_coords, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  if (max_coords == 0 || max_coords >= n) return idx;
  for (std::size_t i = 0; i < max_coords; ++i) {
    std::swap(idx[i], idx[i + rng.below(n - i)]);
  }
  idx.resize(max_coords);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

template <typename TA, typename TN>
GradCheckResult check_gradient(const ScalarFn<TA>& analytic_fn,
                               const std::vector<Tensor<TA>>& analytic_inputs,
                               const ScalarFn<TN>& numeric_fn,
                               const std::vector<Tensor<TN>>& numeric_inputs,
                               const GradCheckOptions& opts) {
  if (analytic_inputs.size() != numeric_inputs.size()) {
    throw UsageError("check_gradient: input lists differ in length");
  }
  std::vector<bool> saved_flags;
  for (std::size_t i = 0; i < analytic_inputs.size(); ++i) {
    if (analytic_inputs[i].numel() != numeric_inputs[i].numel()) {
      throw UsageError("check_gradient: input " + std::to_string(i) + " differs in size");
    }
    auto t = analytic_inputs[i];
    saved_flags.push_back(t.requires_grad());
    t.set_requires_grad(true);
    t.node()->grad.clear();
  }

  {
    Tensor<TA> loss = analytic_fn();
    backward(loss);
  }

  GradCheckResult result;
  Rng rng(opts.seed);
  const double h = opts.step;
  auto eval = [&] {
    NoGradGuard guard;
    return static_cast<double>(numeric_fn().item());
  };
  const double f0 = eval();

  for (std::size_t i = 0; i < numeric_inputs.size(); ++i) {
    auto xa = analytic_inputs[i];
    auto xn = numeric_inputs[i];
    const auto coords = pick_coords(xn.numel(), opts.max_coords, rng);
    for (std::size_t c : coords) {
      TN* p = xn.raw() + c;
      const TN orig = *p;
      auto at = [&](double delta) {
        *p = static_cast<TN>(static_cast<double>(orig) + delta);
        const double v = eval();
        *p = orig;
        return v;
      };
      const double fp1 = at(h), fm1 = at(-h), fp2 = at(2 * h), fm2 = at(-2 * h);
      const double fph = at(0.5 * h), fmh = at(-0.5 * h);
      const double numeric = (8.0 * (fp1 - fm1) - (fp2 - fm2)) / (12.0 * h);
      const double numeric_half = (8.0 * (fph - fmh) - (fp1 - fm1)) / (6.0 * h);

      // A smooth function has one-sided slope gaps that scale linearly with
      // the step; a kink keeps a constant gap.
      const double d1 = (fp1 - f0) / h - (f0 - fm1) / h;
      const double d2 = (fp2 - f0) / (2 * h) - (f0 - fm2) / (2 * h);
      const double scale = std::max({std::abs(numeric), std::abs(f0), 1.0});
      const double noise = 1e3 * std::numeric_limits<TN>::epsilon() * scale / h;
      // Halving the step must not move a fourth-order estimate; if it does, a
      // kink lies between h/2 and 2h.
      const bool unstable =
          std::abs(numeric - numeric_half) > std::max(1e-5 * std::abs(numeric), noise);
      if (unstable || std::abs(d2 - 2.0 * d1) > std::max(0.25 * std::abs(d1), noise)) {
        result.excluded.push_back({i, c});
        continue;
      }

      const double analytic = xa.has_grad() ? static_cast<double>(xa.grad()[c]) : 0.0;
      const double denom = std::max({std::abs(analytic), std::abs(numeric), opts.floor});
      const double err = std::abs(analytic - numeric) / denom;
      ++result.checked;
      if (err >= result.max_rel_error) {
        result.max_rel_error = err;
        result.worst = {i, c};
        result.worst_analytic = analytic;
        result.worst_numeric = numeric;
      }
    }
  }

  for (std::size_t i = 0; i < analytic_inputs.size(); ++i) {
    auto t = analytic_inputs[i];
    t.set_requires_grad(saved_flags[i]);
  }
  return result;
}

template GradCheckResult check_gradient<float, float>(const ScalarFn<float>&,
                                                      const std::vector<Tensor<float>>&,
                                                      const ScalarFn<float>&,
                                                      const std::vector<Tensor<float>>&,
                                                      const GradCheckOptions&);
template GradCheckResult check_gradient<double, double>(const ScalarFn<double>&,
                                                        const std::vector<Tensor<double>>&,
                                                        const ScalarFn<double>&,
                                                        const std::vector<Tensor<double>>&,
                                                        const GradCheckOptions&);
template GradCheckResult check_gradient<float, double>(const ScalarFn<float>&,
                                                       const std::vector<Tensor<float>>&,
                                                       const ScalarFn<double>&,
                                                       const std::vector<Tensor<double>>&,
                                                       const GradCheckOptions&);

}  // namespace npde
