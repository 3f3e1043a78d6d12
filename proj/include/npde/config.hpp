#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "npde/error.hpp"
#include "npde/models.hpp"

namespace npde {

using Json = nlohmann::ordered_json;

/// Typed, path-aware reader over one JSON object. Every key read is recorded
/// so that `finish` can reject unknown keys with their full dotted path.
class JsonSection {
 public:
  JsonSection(const Json& j, std::string path);

  bool has(const std::string& key) const { return j_.contains(key); }
  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  const std::string& path() const { return path_; }

  template <typename V>
  V get(const std::string& key, V fallback) {
    seen_.insert(key);
    if (!j_.contains(key)) return fallback;
    V out{};
    read(j_.at(key), out, field(key));
    return out;
  }

  /// Missing keys and JSON null both yield an empty optional.
  template <typename V>
  std::optional<V> get_optional(const std::string& key) {
    seen_.insert(key);
    if (!j_.contains(key) || j_.at(key).is_null()) return std::nullopt;
    V out{};
    read(j_.at(key), out, field(key));
    return out;
  }

  /// Nested object; a missing key yields an empty section.
  JsonSection section(const std::string& key);

  /// Throws ConfigError for keys that were never read.
  void finish() const;

  static void read(const Json& v, std::size_t& out, const std::string& path);
  static void read(const Json& v, std::uint32_t& out, const std::string& path);
  static void read(const Json& v, int& out, const std::string& path);
  static void read(const Json& v, double& out, const std::string& path);
  static void read(const Json& v, bool& out, const std::string& path);
  static void read(const Json& v, std::string& out, const std::string& path);
  template <typename E>
  static void read(const Json& v, std::vector<E>& out, const std::string& path) {
    if (!v.is_array()) throw ConfigError(path + ": expected an array");
    out.clear();
    for (std::size_t i = 0; i < v.size(); ++i) {
      E e{};
      read(v[i], e, path + "[" + std::to_string(i) + "]");
      out.push_back(e);
    }
  }
  template <typename E, std::size_t N>
  static void read(const Json& v, std::array<E, N>& out, const std::string& path) {
    if (!v.is_array() || v.size() != N) {
      throw ConfigError(path + ": expected an array of " + std::to_string(N) + " entries");
    }
    for (std::size_t i = 0; i < N; ++i) read(v[i], out[i], path + "[" + std::to_string(i) + "]");
  }

 private:
  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
  static const Json& empty_object();
};

Json to_json(const ModelSpec& spec);
/// Missing fields take ModelSpec defaults; unknown keys and invalid values
/// raise ConfigError naming `path.field`.
ModelSpec model_spec_from_json(const Json& j, const std::string& path = "model");

/// Parses a JSON document; syntax errors become ConfigError.
Json parse_json(const std::string& text, const std::string& what);

}  // namespace npde
