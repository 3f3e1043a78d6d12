#pragma once

#include <string>
#include <vector>

#include "npde/gradcheck.hpp"
#include "npde/models.hpp"
#include "npde/ops.hpp"
#include "test_util.hpp"

namespace npde::testing {

/// 16x16-compatible instance of a family with at most 8 channels anywhere.
inline ModelSpec micro_spec(Family f, ConditioningMode mode = ConditioningMode::none,
                            std::uint64_t seed = 1) {
  ModelSpec s;
  s.family = f;
  s.hidden_channels = 4;
  s.in_fields = 2;
  s.out_fields = 2;
  s.history = 2;
  s.fno_modes = {4, 4};
  s.fno_layers = 2;
  s.resnet_blocks = 2;
  s.channel_multipliers = {1, 1, 2};
  s.blocks_per_level = 1;
  s.final_norm_groups = 2;
  s.embed_dim = 8;
  s.conditioning = mode;
  s.seed = seed;
  if (f == Family::unet_att) s.middle_attention = true;
  if (f == Family::ufnet) {
    s.ufnet_blocks = 2;
    s.ufnet_modes = {{4, 4}, {2, 2}};
  }
  if (f != Family::unet_base && f != Family::unet_mod && f != Family::unet_att &&
      f != Family::ufnet) {
    s.channel_multipliers.clear();
  }
  return s;
}

inline bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

/// Replaces every parameter with fan-in scaled uniform noise (gains around 1)
/// so that zero-initialized convs and unit norms do not hide any gradient path
/// while activations stay in GeLU's non-saturated range.
template <typename T>
void randomize(Model<T>& m, Rng& rng, double amp = 0.5) {
  for (auto& [name, t] : m.parameters()) {
    const std::size_t fan_in = t.numel() / t.size(0);
    double center = 0.0, bound = amp;
    if (ends_with(name, ".gamma")) {
      center = 1.0;
    } else if (ends_with(name, ".pos") || ends_with(name, ".neg")) {
      bound = amp * 2.0 / static_cast<double>(t.size(0));
    } else if (ends_with(name, ".weight") || name.find("attn.w") != std::string::npos) {
      bound = amp * std::sqrt(6.0 / static_cast<double>(fan_in));
    }
    for (auto& v : t.data()) v = static_cast<T>(center + rng.uniform(-bound, bound));
  }
}

struct ModelGradCase {
  std::string label;
  GradCheckResult result;
  std::size_t tensors = 0;
};

/// Finite-difference check of d SMSE / d(every parameter and the input) for a
/// randomized micro-instance at 64-bit.
/// Default step: deep norm-layer gradients sit near 1e-8, where cancellation
/// error (~eps * |loss| / h) dominates at h = 1e-3; truncation stays below it
/// up to h ~ 3e-3 and shows at 1e-2.
inline ModelGradCase model_gradcheck(const ModelSpec& spec, std::uint64_t seed,
                                     std::size_t coords_per_tensor = 3, double step = 3e-3) {
  Model<double> m(spec);
  Rng rng(seed);
  randomize(m, rng);
  const std::size_t c_in = spec.input_channels();
  auto x = random_tensor<double>({2, c_in, 16, 16}, rng);
  auto target = random_tensor<double>({2, spec.out_fields, 16, 16}, rng);
  ConditioningContext ctx{{0.05, 0.2}, {0.25, 0.4}};
  const ConditioningContext* pctx = spec.conditioning == ConditioningMode::none ? nullptr : &ctx;

  std::vector<Tensor<double>> inputs{x};
  for (auto& [name, t] : m.parameters()) inputs.push_back(t);
  for (auto& t : inputs) t.set_requires_grad();
  ScalarFn<double> fn = [&] { return smse_loss(m.forward(x, pctx), target); };
  GradCheckOptions opts;
  opts.step = step;
  opts.max_coords = coords_per_tensor;
  opts.seed = seed;
  ModelGradCase out;
  out.label = to_string(spec.family) + "/" + to_string(spec.conditioning);
  out.result = check_gradient<double>(fn, inputs, opts);
  out.tensors = inputs.size();
  return out;
}

/// Family/conditioning combinations covered by the model gradient suite.
inline std::vector<ModelSpec> gradcheck_specs() {
  std::vector<ModelSpec> specs;
  for (Family f : {Family::resnet, Family::fno, Family::unet_base, Family::unet_mod,
                   Family::unet_att, Family::ufnet}) {
    specs.push_back(micro_spec(f));
    specs.push_back(micro_spec(f, ConditioningMode::addition));
    if (f != Family::fno) specs.push_back(micro_spec(f, ConditioningMode::adagn));
  }
  return specs;
}

}  // namespace npde::testing
