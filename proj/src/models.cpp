#include "npde/models.hpp"

#include <cmath>
#include <numeric>

#include "npde/ops.hpp"
#include "npde/rng.hpp"
#include "npde/spectral.hpp"

namespace npde {

namespace {

std::uint64_t name_hash(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

std::string to_string(Family f) {
  switch (f) {
    case Family::resnet: return "resnet";
    case Family::fno: return "fno";
    case Family::unet_base: return "unet_base";
    case Family::unet_mod: return "unet_mod";
    case Family::unet_att: return "unet_att";
    case Family::ufnet: return "ufnet";
  }
  return "?";
}

std::string to_string(ConditioningMode m) {
  switch (m) {
    case ConditioningMode::none: return "none";
    case ConditioningMode::addition: return "addition";
    case ConditioningMode::adagn: return "adagn";
  }
  return "?";
}

std::string to_string(Padding p) { return p == Padding::circular ? "circular" : "zero"; }

Family parse_family(const std::string& s) {
  for (Family f : {Family::resnet, Family::fno, Family::unet_base, Family::unet_mod,
                   Family::unet_att, Family::ufnet}) {
    if (to_string(f) == s) return f;
  }
  throw ConfigError("unknown model family '" + s + "'");
}

ConditioningMode parse_conditioning(const std::string& s) {
  for (auto m : {ConditioningMode::none, ConditioningMode::addition, ConditioningMode::adagn}) {
    if (to_string(m) == s) return m;
  }
  throw ConfigError("unknown conditioning mode '" + s + "'");
}

Padding parse_padding(const std::string& s) {
  if (s == "circular") return Padding::circular;
  if (s == "zero") return Padding::zero;
  throw ConfigError("unknown padding '" + s + "'");
}

// ModelSpec -------------------------------------------------------------------

std::vector<std::size_t> ModelSpec::multipliers() const {
  if (!channel_multipliers.empty()) return channel_multipliers;
  if (family == Family::unet_base) return {2, 2, 2, 2};
  return {1, 2, 2, 4};
}

Modes ModelSpec::ufnet_level_modes(std::size_t level) const {
  if (ufnet_modes.empty()) return fno_modes;
  return ufnet_modes.at(level);
}

bool ModelSpec::is_unet() const {
  return family == Family::unet_base || family == Family::unet_mod ||
         family == Family::unet_att || family == Family::ufnet;
}

std::size_t ModelSpec::extent_divisor() const {
  if (!is_unet()) return 1;
  const std::size_t levels = multipliers().size();
  const std::size_t downs = family == Family::unet_base ? levels : levels - 1;
  return std::size_t{1} << downs;
}

void ModelSpec::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ConfigError("model." + field + ": " + why);
  };
  if (hidden_channels == 0) fail("hidden_channels", "must be positive");
  if (in_fields == 0) fail("in_fields", "must be positive");
  if (out_fields == 0) fail("out_fields", "must be positive");
  if (history == 0) fail("history", "must be positive");
  if (embed_dim < 2 || embed_dim % 2 != 0) fail("embed_dim", "must be even and >= 2");
  if (family == Family::fno && conditioning == ConditioningMode::adagn) {
    fail("conditioning", "AdaGN needs normalization layers; the FNO family has none");
  }
  if (family == Family::fno || family == Family::ufnet) {
    if (fno_modes[0] == 0 || fno_modes[1] == 0) fail("fno_modes", "modes must be positive");
  }
  if (family == Family::fno && fno_layers == 0) fail("fno_layers", "must be positive");
  if (family == Family::resnet && resnet_blocks == 0) fail("resnet_blocks", "must be positive");
  if (is_unet()) {
    const auto mults = multipliers();
    if (mults.empty()) fail("channel_multipliers", "must not be empty");
    for (auto m : mults) {
      if (m == 0) fail("channel_multipliers", "entries must be positive");
    }
    if (family != Family::unet_base && mults.size() < 2) {
      fail("channel_multipliers", "residual U-Nets need at least two levels");
    }
    if (embed_kernel != 1 && embed_kernel != 3) fail("embed_kernel", "must be 1 or 3");
    if (family != Family::unet_base && blocks_per_level == 0) {
      fail("blocks_per_level", "must be positive");
    }
    if (final_norm_groups == 0) fail("final_norm_groups", "must be positive");
  }
  if (family == Family::ufnet) {
    if (ufnet_blocks != 1 && ufnet_blocks != 2) fail("ufnet_blocks", "must be 1 or 2");
    if (ufnet_blocks >= multipliers().size()) {
      fail("ufnet_blocks", "must be smaller than the number of levels");
    }
    if (!ufnet_modes.empty()) {
      if (ufnet_modes.size() != ufnet_blocks) {
        fail("ufnet_modes", "needs one (m1, m2) pair per replaced level");
      }
      for (const auto& m : ufnet_modes) {
        if (m[0] == 0 || m[1] == 0) fail("ufnet_modes", "modes must be positive");
      }
    }
  }
  if (middle_attention && family != Family::unet_att && family != Family::ufnet &&
      family != Family::unet_mod) {
    fail("middle_attention", "only residual U-Nets have a middle block");
  }
}

// Construction ----------------------------------------------------------------

template <typename T>
Tensor<T>& Model<T>::add_param(const std::string& name, Shape shape) {
  if (index_.count(name)) throw ConfigError("duplicate parameter name " + name);
  index_[name] = params_.size();
  params_.emplace_back(name, Tensor<T>(std::move(shape)));
  return params_.back().second;
}

// Registers parameters in a fixed order. With `model == nullptr` only the
// layout (names and shapes) is recorded and nothing is allocated.
template <typename T>
struct Model<T>::Builder {
  Model* model;
  const ModelSpec& s;
  std::vector<std::string>* cond_blocks;
  ParameterLayout layout;

  // Returns a handle sharing the registered storage (undefined in layout mode).
  Tensor<T> add(const std::string& name, Shape shape) {
    layout.emplace_back(name, shape);
    return model ? model->add_param(name, std::move(shape)) : Tensor<T>();
  }

  void fill_uniform(Tensor<T> t, const std::string& name, double bound) {
    if (!t.defined()) return;
    Rng rng(Rng::derive(s.seed, name_hash(name)));
    for (auto& v : t.data()) v = static_cast<T>(rng.uniform(-bound, bound));
  }

  /// Kaiming-uniform weights (fan-in), zero bias.
  void conv(const std::string& name, std::size_t ci, std::size_t co, std::size_t k,
            bool zero_init = false) {
    auto w = add(name + ".weight", {co, ci, k, k});
    if (!zero_init) fill_uniform(w, name + ".weight", std::sqrt(6.0 / static_cast<double>(ci * k * k)));
    add(name + ".bias", {co});
  }

  void deconv(const std::string& name, std::size_t ci, std::size_t co) {
    auto w = add(name + ".weight", {ci, co, 2, 2});
    fill_uniform(w, name + ".weight", std::sqrt(6.0 / static_cast<double>(ci)));
    add(name + ".bias", {co});
  }

  Tensor<T> linear(const std::string& name, std::size_t in, std::size_t out) {
    auto w = add(name + ".weight", {out, in});
    fill_uniform(w, name + ".weight", std::sqrt(6.0 / static_cast<double>(in)));
    return add(name + ".bias", {out});
  }

  void norm(const std::string& name, std::size_t c) {
    if (auto g = add(name + ".gamma", {c}); g.defined()) {
      for (auto& v : g.data()) v = T{1};
    }
    add(name + ".beta", {c});
  }

  void spectral(const std::string& name, std::size_t ci, std::size_t co, Modes modes) {
    auto pos = add(name + ".pos", {ci, co, modes[0], modes[1], 2});
    auto neg = add(name + ".neg", {ci, co, modes[0], modes[1], 2});
    if (!model) return;
    Rng rng(Rng::derive(s.seed, name_hash(name)));
    auto w = SpectralWeights<double>::init(ci, co, modes[0], modes[1], rng);
    std::copy(w.pos.data().begin(), w.pos.data().end(), pos.data().begin());
    std::copy(w.neg.data().begin(), w.neg.data().end(), neg.data().begin());
  }

  /// Per-block conditioning head mapping the projected embedding to C (addition)
  /// or 2C (AdaGN: y_s then y_b; y_s bias starts at 1).
  void cond_head(const std::string& block, std::size_t c) {
    if (s.conditioning == ConditioningMode::none) return;
    const std::size_t width = 4 * s.hidden_channels;
    const bool ada = s.conditioning == ConditioningMode::adagn;
    auto b = linear(block + ".cond", width, ada ? 2 * c : c);
    if (ada && b.defined()) {
      for (std::size_t i = 0; i < c; ++i) b.data()[i] = T{1};
    }
    if (cond_blocks) cond_blocks->push_back(block);
  }

  void cond_mlps() {
    if (s.conditioning == ConditioningMode::none) return;
    const std::size_t width = 4 * s.hidden_channels;
    for (const char* which : {"cond.dt", "cond.force"}) {
      linear(std::string(which) + ".fc1", s.embed_dim, width);
      linear(std::string(which) + ".fc2", width, width);
    }
  }

  void build() {
    switch (s.family) {
      case Family::resnet: resnet(); break;
      case Family::fno: fno(); break;
      case Family::unet_base: unet_base(); break;
      case Family::unet_mod:
      case Family::unet_att:
      case Family::ufnet: unet_mod(); break;
    }
  }

  void resnet() {
    const std::size_t c = s.hidden_channels;
    cond_mlps();
    conv("in1", s.input_channels(), c, 1);
    conv("in2", c, c, 1);
    for (std::size_t i = 0; i < s.resnet_blocks; ++i) {
      const std::string b = "blocks." + std::to_string(i);
      conv(b + ".conv1", c, c, 3);
      cond_head(b, c);
      norm(b + ".norm1", c);
      conv(b + ".conv2", c, c, 3);
      norm(b + ".norm2", c);
    }
    conv("out1", c, c, 1);
    conv("out2", c, s.out_fields, 1);
  }

  void fno() {
    const std::size_t c = s.hidden_channels;
    cond_mlps();
    conv("in1", s.input_channels(), c, 1);
    conv("in2", c, c, 1);
    for (std::size_t i = 0; i < s.fno_layers; ++i) {
      const std::string l = "layers." + std::to_string(i);
      spectral(l + ".spectral", c, c, s.fno_modes);
      conv(l + ".conv", c, c, 1);
      cond_head(l, c);
    }
    conv("out1", c, c, 1);
    conv("out2", c, s.out_fields, 1);
  }

  void double_conv(const std::string& b, std::size_t ci, std::size_t co) {
    conv(b + ".conv1", ci, co, 3);
    cond_head(b, co);
    norm(b + ".norm1", co);
    conv(b + ".conv2", co, co, 3);
    norm(b + ".norm2", co);
  }

  void unet_base() {
    const auto mults = s.multipliers();
    const std::size_t levels = mults.size();
    std::vector<std::size_t> ch{s.hidden_channels};
    for (auto mult : mults) ch.push_back(ch.back() * mult);
    cond_mlps();
    conv("embed", s.input_channels(), ch[0], s.embed_kernel);
    double_conv("enc.0", ch[0], ch[0]);
    for (std::size_t l = 1; l <= levels; ++l) {
      double_conv("enc." + std::to_string(l), ch[l - 1], ch[l]);
    }
    for (std::size_t l = levels; l-- > 0;) {
      const std::string u = std::to_string(l);
      deconv("up." + u, ch[l + 1], ch[l]);
      double_conv("dec." + u, 2 * ch[l], ch[l]);
    }
    conv("out", ch[0], s.out_fields, s.embed_kernel);
  }

  void residual_block(const std::string& b, std::size_t ci, std::size_t co) {
    norm(b + ".norm1", ci);
    conv(b + ".conv1", ci, co, 3);
    cond_head(b, co);
    norm(b + ".norm2", co);
    conv(b + ".conv2", co, co, 3, /*zero_init=*/true);
    if (ci != co) conv(b + ".shortcut", ci, co, 1);
  }

  void fourier_block(const std::string& b, std::size_t ci, std::size_t co, Modes modes) {
    norm(b + ".norm1", ci);
    spectral(b + ".spectral1", ci, co, modes);
    conv(b + ".conv1", ci, co, 1);
    cond_head(b, co);
    norm(b + ".norm2", co);
    spectral(b + ".spectral2", co, co, modes);
    conv(b + ".conv2", co, co, 1);
    if (ci != co) conv(b + ".shortcut", ci, co, 1);
  }

  void block(std::size_t level, const std::string& b, std::size_t ci, std::size_t co) {
    if (s.family == Family::ufnet && level < s.ufnet_blocks) {
      fourier_block(b, ci, co, s.ufnet_level_modes(level));
    } else {
      residual_block(b, ci, co);
    }
  }

  void unet_mod() {
    const auto mults = s.multipliers();
    const std::size_t levels = mults.size();
    const std::size_t c = s.hidden_channels;
    cond_mlps();
    conv("embed", s.input_channels(), c, s.embed_kernel);
    std::size_t in = c;
    for (std::size_t l = 0; l < levels; ++l) {
      const std::size_t out = in * mults[l];
      for (std::size_t j = 0; j < s.blocks_per_level; ++j) {
        block(l, "down." + std::to_string(l) + "." + std::to_string(j), in, out);
        in = out;
      }
      if (l + 1 < levels) conv("down." + std::to_string(l) + ".downsample", in, in, 3);
    }
    residual_block("mid.res1", in, in);
    if (s.middle_attention || s.family == Family::unet_att) {
      norm("mid.attn.norm", in);
      for (const char* p : {"q", "k", "v", "o"}) {
        auto w = add(std::string("mid.attn.w") + p, {in, in});
        fill_uniform(w, std::string("mid.attn.w") + p, std::sqrt(3.0 / static_cast<double>(in)));
        if (std::string(p) != "k") add(std::string("mid.attn.b") + p, {in});
      }
    }
    residual_block("mid.res2", in, in);
    for (std::size_t l = levels; l-- > 0;) {
      std::size_t out = in;
      for (std::size_t j = 0; j < s.blocks_per_level; ++j) {
        block(l, "up." + std::to_string(l) + "." + std::to_string(j), in + out, out);
      }
      out = in / mults[l];
      block(l, "up." + std::to_string(l) + "." + std::to_string(s.blocks_per_level), in + out,
            out);
      in = out;
      if (l > 0) conv("up." + std::to_string(l) + ".upsample", in, in, 3);
    }
    norm("final.norm", in);
    conv("final.conv", in, s.out_fields, s.embed_kernel);
  }
};

template <typename T>
Model<T>::Model(ModelSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  Builder{this, spec_, &cond_blocks_, {}}.build();
}

template <typename T>
ParameterLayout Model<T>::layout(const ModelSpec& spec) {
  spec.validate();
  Builder b{nullptr, spec, nullptr, {}};
  b.build();
  return std::move(b.layout);
}

std::size_t count_parameters(const ModelSpec& spec) {
  std::size_t n = 0;
  for (const auto& [name, shape] : Model<float>::layout(spec)) n += shape_numel(shape);
  return n;
}

template <typename T>
const Tensor<T>& Model<T>::param(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw UsageError("model has no parameter " + name);
  return params_[it->second].second;
}

template <typename T>
Tensor<T>& Model<T>::param(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw UsageError("model has no parameter " + name);
  return params_[it->second].second;
}

template <typename T>
std::size_t Model<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : params_) n += t.numel();
  return n;
}

template <typename T>
std::vector<std::string> Model<T>::down_block_first_convs() const {
  if (!spec_.is_unet()) {
    throw UsageError("filter spectra need a U-Net family model, got " + to_string(spec_.family));
  }
  std::vector<std::string> out;
  const std::size_t levels = spec_.multipliers().size();
  for (std::size_t l = 0; l < levels; ++l) {
    const std::string name = spec_.family == Family::unet_base
                                 ? "enc." + std::to_string(l) + ".conv1.weight"
                                 : "down." + std::to_string(l) + ".0.conv1.weight";
    const auto& w = param(name);
    if (w.size(2) == 1 && w.size(3) == 1) continue;  // Fourier block: 1x1 only
    out.push_back(name);
  }
  return out;
}

template <typename T>
void Model<T>::set_requires_grad(bool on) {
  for (auto& [name, t] : params_) t.set_requires_grad(on);
}

template <typename T>
void Model<T>::zero_grad() {
  for (auto& [name, t] : params_) t.zero_grad();
}

// Forward ---------------------------------------------------------------------

template <typename T>
struct Model<T>::Runner {
  const Model& m;
  const ModelSpec& s;
  const CondObserver<T>& observer;
  Tensor<T> emb;  // projected conditioning embedding [B, 4C]

  const Tensor<T>& p(const std::string& name) const { return m.param(name); }

  Tensor<T> conv(const Tensor<T>& x, const std::string& name, std::size_t stride = 1) const {
    return conv2d(x, p(name + ".weight"), p(name + ".bias"), Conv2dOptions{stride, s.padding});
  }

  Tensor<T> norm(const Tensor<T>& x, const std::string& name, std::size_t groups = 1) const {
    return group_norm(x, groups, p(name + ".gamma"), p(name + ".beta"));
  }

  SpectralWeights<T> spectral(const std::string& name) const {
    return SpectralWeights<T>{p(name + ".pos"), p(name + ".neg")};
  }

  Tensor<T> cond(const std::string& block) const {
    if (s.conditioning == ConditioningMode::none) return Tensor<T>();
    auto c = linear(emb, p(block + ".cond.weight"), p(block + ".cond.bias"));
    if (observer) observer(block, c);
    return c;
  }

  /// Applies the block's conditioning around the second normalization:
  /// addition before it, AdaGN as its scale/shift.
  Tensor<T> norm_with_cond(Tensor<T> h, const std::string& b, const std::string& norm_name,
                           std::size_t co) const {
    auto c = cond(b);
    if (s.conditioning == ConditioningMode::adagn) {
      return apply_adagn(h, 1, p(norm_name + ".gamma"), p(norm_name + ".beta"),
                         narrow_cols(c, 0, co), narrow_cols(c, co, co));
    }
    if (c.defined()) h = apply_addition(h, c);
    return norm(h, norm_name);
  }

  Tensor<T> resnet(Tensor<T> x) const {
    const std::size_t c = s.hidden_channels;
    x = gelu(conv(x, "in1"));
    x = gelu(conv(x, "in2"));
    for (std::size_t i = 0; i < s.resnet_blocks; ++i) {
      const std::string b = "blocks." + std::to_string(i);
      auto h = conv(x, b + ".conv1");
      h = gelu(norm_with_cond(h, b, b + ".norm1", c));
      h = norm(conv(h, b + ".conv2"), b + ".norm2");
      x = gelu(add(h, x));
    }
    x = gelu(conv(x, "out1"));
    return conv(x, "out2");
  }

  Tensor<T> fno(Tensor<T> x) const {
    x = gelu(conv(x, "in1"));
    x = gelu(conv(x, "in2"));
    for (std::size_t i = 0; i < s.fno_layers; ++i) {
      const std::string l = "layers." + std::to_string(i);
      x = fno_layer(x, spectral(l + ".spectral"), p(l + ".conv.weight"), p(l + ".conv.bias"),
                    cond(l));
    }
    x = gelu(conv(x, "out1"));
    return conv(x, "out2");
  }

  Tensor<T> double_conv(const Tensor<T>& x, const std::string& b) const {
    auto h = conv(x, b + ".conv1");
    const std::size_t co = h.size(1);
    h = gelu(norm_with_cond(h, b, b + ".norm1", co));
    return gelu(norm(conv(h, b + ".conv2"), b + ".norm2"));
  }

  Tensor<T> unet_base(Tensor<T> x) const {
    const std::size_t levels = s.multipliers().size();
    x = conv(x, "embed");
    std::vector<Tensor<T>> skips;
    x = double_conv(x, "enc.0");
    for (std::size_t l = 1; l <= levels; ++l) {
      skips.push_back(x);
      x = double_conv(max_pool2d(x), "enc." + std::to_string(l));
    }
    for (std::size_t l = levels; l-- > 0;) {
      const std::string u = std::to_string(l);
      x = conv_transpose2x2(x, p("up." + u + ".weight"), p("up." + u + ".bias"));
      x = double_conv(concat_channels(x, skips[l]), "dec." + u);
    }
    return conv(x, "out");
  }

  Tensor<T> residual_block(const Tensor<T>& x, const std::string& b) const {
    auto h = conv(gelu(norm(x, b + ".norm1")), b + ".conv1");
    const std::size_t co = h.size(1);
    h = conv(gelu(norm_with_cond(h, b, b + ".norm2", co)), b + ".conv2");
    return add(h, m.has(b + ".shortcut.weight") ? conv(x, b + ".shortcut") : x);
  }

  Tensor<T> fourier_block(const Tensor<T>& x, const std::string& b) const {
    auto a = gelu(norm(x, b + ".norm1"));
    auto h = add(spectral_conv(a, spectral(b + ".spectral1")), conv(a, b + ".conv1"));
    const std::size_t co = h.size(1);
    a = gelu(norm_with_cond(h, b, b + ".norm2", co));
    h = add(spectral_conv(a, spectral(b + ".spectral2")), conv(a, b + ".conv2"));
    return add(h, m.has(b + ".shortcut.weight") ? conv(x, b + ".shortcut") : x);
  }

  Tensor<T> block(std::size_t level, const Tensor<T>& x, const std::string& b) const {
    if (s.family == Family::ufnet && level < s.ufnet_blocks) return fourier_block(x, b);
    return residual_block(x, b);
  }

  Tensor<T> unet_mod(Tensor<T> x) const {
    const std::size_t levels = s.multipliers().size();
    x = conv(x, "embed");
    std::vector<Tensor<T>> skips{x};
    for (std::size_t l = 0; l < levels; ++l) {
      const std::string lv = "down." + std::to_string(l);
      for (std::size_t j = 0; j < s.blocks_per_level; ++j) {
        x = block(l, x, lv + "." + std::to_string(j));
        skips.push_back(x);
      }
      if (l + 1 < levels) {
        x = conv(x, lv + ".downsample", 2);
        skips.push_back(x);
      }
    }
    x = residual_block(x, "mid.res1");
    if (m.has("mid.attn.wq")) {
      auto a = spatial_attention(norm(x, "mid.attn.norm"), p("mid.attn.wq"), p("mid.attn.bq"),
                                 p("mid.attn.wk"), p("mid.attn.wv"), p("mid.attn.bv"),
                                 p("mid.attn.wo"), p("mid.attn.bo"));
      x = add(x, a);
    }
    x = residual_block(x, "mid.res2");
    for (std::size_t l = levels; l-- > 0;) {
      const std::string lv = "up." + std::to_string(l);
      for (std::size_t j = 0; j <= s.blocks_per_level; ++j) {
        x = concat_channels(x, skips.back());
        skips.pop_back();
        x = block(l, x, lv + "." + std::to_string(j));
      }
      if (l > 0) x = conv(upsample_nearest(x), lv + ".upsample");
    }
    const std::size_t c = x.size(1);
    x = gelu(norm(x, "final.norm", std::gcd(s.final_norm_groups, c)));
    return conv(x, "final.conv");
  }
};

template <typename T>
Tensor<T> Model<T>::forward(const Tensor<T>& x, const ConditioningContext* ctx,
                            const CondObserver<T>& observer) const {
  if (!x.defined() || x.dim() != 4) {
    throw DimensionError("model input must be [B, C, H, W]");
  }
  if (x.size(1) != spec_.input_channels()) {
    throw DimensionError("model expects " + std::to_string(spec_.input_channels()) +
                         " input channels (history " + std::to_string(spec_.history) + " x " +
                         std::to_string(spec_.in_fields) + " fields), got " +
                         std::to_string(x.size(1)));
  }
  const std::size_t div = spec_.extent_divisor();
  if (x.size(2) % div != 0 || x.size(3) % div != 0) {
    throw DimensionError(to_string(spec_.family) + " needs spatial extents divisible by " +
                         std::to_string(div) + ", got " + shape_str(x.shape()));
  }
  Runner r{*this, spec_, observer, Tensor<T>()};
  if (spec_.conditioning != ConditioningMode::none) {
    if (ctx == nullptr) throw UsageError("conditioned model called without a conditioning context");
    if (ctx->dt.size() != x.size(0) || ctx->force.size() != x.size(0)) {
      throw DimensionError("conditioning context needs one (dt, force) pair per sample");
    }
    std::vector<double> dt(ctx->dt), force(ctx->force);
    for (auto& v : dt) v *= spec_.dt_embed_scale;
    for (auto& v : force) v *= spec_.force_embed_scale;
    auto mlp = [&](const std::string& pre) {
      return ProjectionMlp<T>{param(pre + ".fc1.weight"), param(pre + ".fc1.bias"),
                              param(pre + ".fc2.weight"), param(pre + ".fc2.bias")};
    };
    r.emb = project(sinusoidal_embed_batch<T>(dt, spec_.embed_dim),
                    sinusoidal_embed_batch<T>(force, spec_.embed_dim), mlp("cond.dt"),
                    mlp("cond.force"));
  } else if (ctx != nullptr) {
    throw UsageError("unconditioned model called with a conditioning context");
  }
  switch (spec_.family) {
    case Family::resnet: return r.resnet(x);
    case Family::fno: return r.fno(x);
    case Family::unet_base: return r.unet_base(x);
    default: return r.unet_mod(x);
  }
}

template class Model<float>;
template class Model<double>;

}  // namespace npde
