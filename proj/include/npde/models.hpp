#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "npde/conditioning.hpp"
#include "npde/kernels.hpp"
#include "npde/tensor.hpp"

namespace npde {

enum class Family { resnet, fno, unet_base, unet_mod, unet_att, ufnet };
enum class ConditioningMode { none, addition, adagn };

std::string to_string(Family f);
std::string to_string(ConditioningMode m);
std::string to_string(Padding p);
Family parse_family(const std::string& s);
ConditioningMode parse_conditioning(const std::string& s);
Padding parse_padding(const std::string& s);

using Modes = std::array<std::size_t, 2>;

/// Declarative architecture description. Zero/empty fields take the family
/// default when resolved by `validate`.
struct ModelSpec {
  Family family = Family::unet_mod;
  std::size_t hidden_channels = 64;
  std::size_t in_fields = 3;
  std::size_t out_fields = 3;
  std::size_t history = 4;

  Modes fno_modes{16, 16};
  std::size_t fno_layers = 8;
  std::size_t resnet_blocks = 8;

  /// Number of finest U-Net levels built from Fourier residual blocks (ufnet).
  std::size_t ufnet_blocks = 1;
  /// Modes per replaced level, finest first. Empty: fno_modes for every level.
  std::vector<Modes> ufnet_modes;

  /// Per-level channel multipliers. Empty: (2,2,2,2) for unet_base,
  /// (1,2,2,4) for the residual U-Nets.
  std::vector<std::size_t> channel_multipliers;
  /// Residual blocks per level in the residual U-Nets.
  std::size_t blocks_per_level = 2;
  /// Self-attention in the middle block; always on for unet_att.
  bool middle_attention = false;
  /// Kernel of the U-Net embedding and output convolutions (3 or 1).
  std::size_t embed_kernel = 3;
  Padding padding = Padding::circular;
  /// Groups of the final normalization in the residual U-Nets.
  std::size_t final_norm_groups = 8;

  ConditioningMode conditioning = ConditioningMode::none;
  std::size_t embed_dim = 64;
  /// Scalars are multiplied by these before the sinusoidal embedding.
  double dt_embed_scale = 10.0;
  double force_embed_scale = 10.0;

  std::uint64_t seed = 0;

  std::size_t input_channels() const { return history * in_fields; }
  std::vector<std::size_t> multipliers() const;
  /// Fourier modes used by U-FNet level `level`.
  Modes ufnet_level_modes(std::size_t level) const;
  /// Spatial extents must be divisible by this (1 for resnet/fno).
  std::size_t extent_divisor() const;
  bool is_unet() const;

  /// Throws ConfigError naming the offending field.
  void validate() const;

  bool operator==(const ModelSpec&) const = default;
};

/// Parameter names and shapes in registry order.
using ParameterLayout = std::vector<std::pair<std::string, Shape>>;

/// Receives each conditioned block's name and the conditioning tensor that
/// entered it ([B,C] for addition, [B,2C] for AdaGN).
template <typename T>
using CondObserver = std::function<void(const std::string& block, const Tensor<T>& cond)>;

/// A network built from a ModelSpec: an ordered parameter registry plus the
/// forward wiring for its family.
template <typename T>
class Model {
 public:
  explicit Model(ModelSpec spec);

  /// Names and shapes the spec would register, without allocating.
  static ParameterLayout layout(const ModelSpec& spec);

  const ModelSpec& spec() const { return spec_; }

  using Entry = std::pair<std::string, Tensor<T>>;
  const std::vector<Entry>& parameters() const { return params_; }
  std::vector<Entry>& parameters() { return params_; }
  bool has(const std::string& name) const { return index_.count(name) != 0; }
  const Tensor<T>& param(const std::string& name) const;
  Tensor<T>& param(const std::string& name);

  std::size_t parameter_count() const;

  /// Names of blocks that receive conditioning, in forward order.
  const std::vector<std::string>& conditioned_blocks() const { return cond_blocks_; }

  /// First 3x3 (or embed-kernel) conv of each down-block, finest level first.
  /// Levels built from Fourier blocks are skipped.
  std::vector<std::string> down_block_first_convs() const;

  /// x: [B, history*in_fields, H, W] -> [B, out_fields, H, W].
  Tensor<T> forward(const Tensor<T>& x, const ConditioningContext* ctx = nullptr,
                    const CondObserver<T>& observer = {}) const;

  /// Sets requires_grad on every parameter.
  void set_requires_grad(bool on = true);
  void zero_grad();

 private:
  struct Builder;
  struct Runner;

  Tensor<T>& add_param(const std::string& name, Shape shape);

  ModelSpec spec_;
  std::vector<Entry> params_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<std::string> cond_blocks_;
};

template <typename T>
Model<T> build(const ModelSpec& spec) {
  return Model<T>(spec);
}

template <typename T>
std::size_t parameter_count(const Model<T>& model) {
  return model.parameter_count();
}

/// Parameter count of a spec without building it.
std::size_t count_parameters(const ModelSpec& spec);

/// Binary checkpoint: "NPDM" | version u32 | spec JSON length u32 | spec JSON |
/// n_params u32 | per parameter: name length u32, name, rank u32, extents
/// u32[rank], values f32[numel]. Little-endian throughout.
template <typename T>
void write_checkpoint(const Model<T>& model, const std::string& path);
template <typename T>
Model<T> read_checkpoint(const std::string& path);

}  // namespace npde
