#pragma once

#include <filesystem>
#include <set>
#include <string>

#include <nlohmann/json.hpp>

namespace patchprobe {

using json = nlohmann::json;

std::string sha256_hex(const void* data, size_t n);
std::string sha256_hex(const std::string& s);
std::string sha256_file(const std::filesystem::path& path);

// Canonical hash of a config document (nlohmann objects are key-sorted, so
// dump() is already canonical).
std::string config_hash(const json& j);

void write_text_file(const std::filesystem::path& path, const std::string& content);
std::string read_text_file(const std::filesystem::path& path);

void write_json_file(const std::filesystem::path& path, const json& j);
json read_json_file(const std::filesystem::path& path);

// Strict JSON object reader: every key must be consumed, unknown keys are
// reported as user errors so config typos never pass silently.
class JsonReader {
 public:
  JsonReader(const json& j, std::string where);

  bool has(const std::string& key) const;

  template <typename T>
  T require(const std::string& key) {
    mark(key);
    if (!obj_.contains(key)) fail("missing required key '" + key + "'");
    return get_as<T>(key);
  }

  template <typename T>
  T get(const std::string& key, T fallback) {
    mark(key);
    if (!obj_.contains(key)) return fallback;
    return get_as<T>(key);
  }

  json raw(const std::string& key);        // consumes and returns the raw value
  JsonReader child(const std::string& key);  // nested object, strict as well

  // Throws if any key of the object was never consumed.
  void finish();

 private:
  template <typename T>
  T get_as(const std::string& key) {
    try {
      return obj_.at(key).get<T>();
    } catch (const json::exception& e) {
      fail("key '" + key + "' has wrong type: " + e.what());
    }
    return T{};  // unreachable
  }

  void mark(const std::string& key) { seen_.insert(key); }
  [[noreturn]] void fail(const std::string& msg) const;

  const json& obj_;
  std::string where_;
  std::set<std::string> seen_;
};

}  // namespace patchprobe
