#include <cmath>

#include "npde/binio.hpp"
#include "npde/config.hpp"
#include "npde/models.hpp"

namespace npde {

namespace {
constexpr char kMagic[4] = {'N', 'P', 'D', 'M'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

template <typename T>
void write_checkpoint(const Model<T>& model, const std::string& path) {
  binio::Writer w;
  w.bytes(std::string_view(kMagic, 4));
  w.u32(kVersion);
  const std::string spec = to_json(model.spec()).dump();
  w.u32(static_cast<std::uint32_t>(spec.size()));
  w.bytes(spec);
  w.u32(static_cast<std::uint32_t>(model.parameters().size()));
  for (const auto& [name, t] : model.parameters()) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.bytes(name);
    w.u32(static_cast<std::uint32_t>(t.dim()));
    for (auto e : t.shape()) w.u32(static_cast<std::uint32_t>(e));
    for (T v : t.data()) w.f32(static_cast<float>(v));
  }
  binio::write_file(path, w.buffer());
}

template <typename T>
Model<T> read_checkpoint(const std::string& path) {
  const std::string bytes = binio::read_file(path);
  binio::Reader r(bytes, "checkpoint " + path);
  if (r.bytes(4, "magic") != std::string_view(kMagic, 4)) r.fail_at(0, "bad magic (expected NPDM)");
  const auto version_at = r.offset();
  if (r.u32() != kVersion) r.fail_at(version_at, "unsupported version");
  const auto spec_len = r.u32();
  const auto spec_at = r.offset();
  ModelSpec spec;
  try {
    spec = model_spec_from_json(parse_json(std::string(r.bytes(spec_len, "spec")), "spec"));
  } catch (const ConfigError& e) {
    r.fail_at(spec_at, std::string("invalid model spec: ") + e.what());
  }
  Model<T> model(spec);
  const auto count_at = r.offset();
  const auto n = r.u32();
  if (n != model.parameters().size()) {
    r.fail_at(count_at, "parameter count " + std::to_string(n) + " does not match the spec (" +
                            std::to_string(model.parameters().size()) + ")");
  }
  for (auto& [name, t] : model.parameters()) {
    const auto name_at = r.offset();
    const auto len = r.u32();
    if (r.bytes(len, "parameter name") != name) {
      r.fail_at(name_at, "expected parameter " + name);
    }
    const auto rank = r.u32();
    Shape shape(rank);
    for (auto& e : shape) e = r.u32();
    if (shape != t.shape()) {
      r.fail_at(name_at, "parameter " + name + " has shape " + shape_str(shape) + ", expected " +
                             shape_str(t.shape()));
    }
    for (auto& v : t.data()) v = static_cast<T>(r.f32());
  }
  if (r.remaining() != 0) r.fail("trailing bytes after last parameter");
  return model;
}

template void write_checkpoint(const Model<float>&, const std::string&);
template void write_checkpoint(const Model<double>&, const std::string&);
template Model<float> read_checkpoint<float>(const std::string&);
template Model<double> read_checkpoint<double>(const std::string&);

}  // namespace npde
