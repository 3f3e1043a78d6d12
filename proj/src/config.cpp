#include "npde/config.hpp"

#include <limits>

namespace npde {

JsonSection::JsonSection(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
  if (!j_.is_object()) {
    throw ConfigError((path_.empty() ? std::string("config") : path_) + ": expected an object");
  }
}

const Json& JsonSection::empty_object() {
  static const Json e = Json::object();
  return e;
}

JsonSection JsonSection::section(const std::string& key) {
  seen_.insert(key);
  if (!j_.contains(key)) return JsonSection(empty_object(), field(key));
  return JsonSection(j_.at(key), field(key));
}

void JsonSection::finish() const {
  for (const auto& item : j_.items()) {
    if (!seen_.count(item.key())) throw ConfigError(field(item.key()) + ": unknown key");
  }
}

namespace {

std::uint64_t read_unsigned(const Json& v, const std::string& path, std::uint64_t max) {
  if (!v.is_number_integer()) throw ConfigError(path + ": expected a non-negative integer");
  if (v.is_number_unsigned()) {
    const auto u = v.get<std::uint64_t>();
    if (u > max) throw ConfigError(path + ": value out of range");
    return u;
  }
  const auto s = v.get<std::int64_t>();
  if (s < 0) throw ConfigError(path + ": expected a non-negative integer, got " + std::to_string(s));
  if (static_cast<std::uint64_t>(s) > max) throw ConfigError(path + ": value out of range");
  return static_cast<std::uint64_t>(s);
}

}  // namespace

void JsonSection::read(const Json& v, std::size_t& out, const std::string& path) {
  out = read_unsigned(v, path, std::numeric_limits<std::size_t>::max());
}

void JsonSection::read(const Json& v, std::uint32_t& out, const std::string& path) {
  out = static_cast<std::uint32_t>(read_unsigned(v, path, std::numeric_limits<std::uint32_t>::max()));
}

void JsonSection::read(const Json& v, int& out, const std::string& path) {
  if (!v.is_number_integer()) throw ConfigError(path + ": expected an integer");
  const auto s = v.get<std::int64_t>();
  if (s < std::numeric_limits<int>::min() || s > std::numeric_limits<int>::max()) {
    throw ConfigError(path + ": value out of range");
  }
  out = static_cast<int>(s);
}

void JsonSection::read(const Json& v, double& out, const std::string& path) {
  if (!v.is_number()) throw ConfigError(path + ": expected a number");
  out = v.get<double>();
}

void JsonSection::read(const Json& v, bool& out, const std::string& path) {
  if (!v.is_boolean()) throw ConfigError(path + ": expected true or false");
  out = v.get<bool>();
}

void JsonSection::read(const Json& v, std::string& out, const std::string& path) {
  if (!v.is_string()) throw ConfigError(path + ": expected a string");
  out = v.get<std::string>();
}

Json parse_json(const std::string& text, const std::string& what) {
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(what + ": invalid JSON: " + e.what());
  }
}

Json to_json(const ModelSpec& s) {
  Json j;
  j["family"] = to_string(s.family);
  j["hidden_channels"] = s.hidden_channels;
  j["in_fields"] = s.in_fields;
  j["out_fields"] = s.out_fields;
  j["history"] = s.history;
  j["fno_modes"] = s.fno_modes;
  j["fno_layers"] = s.fno_layers;
  j["resnet_blocks"] = s.resnet_blocks;
  j["ufnet_blocks"] = s.ufnet_blocks;
  j["ufnet_modes"] = Json::array();
  for (const auto& m : s.ufnet_modes) j["ufnet_modes"].push_back(m);
  j["channel_multipliers"] = s.channel_multipliers;
  j["blocks_per_level"] = s.blocks_per_level;
  j["middle_attention"] = s.middle_attention;
  j["embed_kernel"] = s.embed_kernel;
  j["padding"] = to_string(s.padding);
  j["final_norm_groups"] = s.final_norm_groups;
  j["conditioning"] = to_string(s.conditioning);
  j["embed_dim"] = s.embed_dim;
  j["dt_embed_scale"] = s.dt_embed_scale;
  j["force_embed_scale"] = s.force_embed_scale;
  j["seed"] = s.seed;
  return j;
}

ModelSpec model_spec_from_json(const Json& j, const std::string& path) {
  JsonSection in(j, path);
  ModelSpec s;
  auto enum_field = [&](const std::string& key, auto parse, auto fallback) {
    const auto text = in.get<std::string>(key, to_string(fallback));
    try {
      return parse(text);
    } catch (const ConfigError& e) {
      throw ConfigError(in.field(key) + ": " + e.what());
    }
  };
  s.family = enum_field("family", parse_family, s.family);
  s.hidden_channels = in.get("hidden_channels", s.hidden_channels);
  s.in_fields = in.get("in_fields", s.in_fields);
  s.out_fields = in.get("out_fields", s.out_fields);
  s.history = in.get("history", s.history);
  s.fno_modes = in.get("fno_modes", s.fno_modes);
  s.fno_layers = in.get("fno_layers", s.fno_layers);
  s.resnet_blocks = in.get("resnet_blocks", s.resnet_blocks);
  s.ufnet_blocks = in.get("ufnet_blocks", s.ufnet_blocks);
  s.ufnet_modes = in.get("ufnet_modes", s.ufnet_modes);
  s.channel_multipliers = in.get("channel_multipliers", s.channel_multipliers);
  s.blocks_per_level = in.get("blocks_per_level", s.blocks_per_level);
  s.middle_attention = in.get("middle_attention", s.middle_attention);
  s.embed_kernel = in.get("embed_kernel", s.embed_kernel);
  s.padding = enum_field("padding", parse_padding, s.padding);
  s.final_norm_groups = in.get("final_norm_groups", s.final_norm_groups);
  s.conditioning = enum_field("conditioning", parse_conditioning, s.conditioning);
  s.embed_dim = in.get("embed_dim", s.embed_dim);
  s.dt_embed_scale = in.get("dt_embed_scale", s.dt_embed_scale);
  s.force_embed_scale = in.get("force_embed_scale", s.force_embed_scale);
  s.seed = in.get("seed", s.seed);
  in.finish();
  try {
    s.validate();
  } catch (const ConfigError& e) {
    std::string msg = e.what();
    if (path != "model" && msg.rfind("model.", 0) == 0) msg = path + msg.substr(5);
    throw ConfigError(msg);
  }
  return s;
}

}  // namespace npde
