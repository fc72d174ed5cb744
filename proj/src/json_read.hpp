// Path-aware readers for JSON documents.
#pragma once

#include "hop/orientation.hpp"

#include <json.hpp>

#include <stdexcept>
#include <string>
#include <vector>

namespace hop::detail {

struct SchemaViolation : std::runtime_error {
  SchemaViolation(std::string p, const std::string& what) : std::runtime_error(what), path(std::move(p)) {}
  std::string path;
};

inline std::string child_path(const std::string& base, const std::string& key) {
  return base.empty() ? key : base + "." + key;
}

inline std::string index_path(const std::string& base, std::size_t i) {
  return base + "[" + std::to_string(i) + "]";
}

inline const nlohmann::json& member(const nlohmann::json& j, const std::string& key, const std::string& path) {
  if (!j.is_object()) throw SchemaViolation(path, "expected an object at '" + path + "'");
  auto it = j.find(key);
  if (it == j.end()) {
    throw SchemaViolation(child_path(path, key), "missing field '" + child_path(path, key) + "'");
  }
  return *it;
}

inline double number(const nlohmann::json& j, const std::string& path) {
  if (!j.is_number()) throw SchemaViolation(path, "expected a number at '" + path + "'");
  return j.get<double>();
}

inline double number_field(const nlohmann::json& j, const std::string& key, const std::string& path) {
  return number(member(j, key, path), child_path(path, key));
}

inline std::string string_field(const nlohmann::json& j, const std::string& key, const std::string& path) {
  const auto& v = member(j, key, path);
  if (!v.is_string()) {
    throw SchemaViolation(child_path(path, key), "expected a string at '" + child_path(path, key) + "'");
  }
  return v.get<std::string>();
}

inline const nlohmann::json& array_field(const nlohmann::json& j, const std::string& key, const std::string& path) {
  const auto& v = member(j, key, path);
  if (!v.is_array()) {
    throw SchemaViolation(child_path(path, key), "expected an array at '" + child_path(path, key) + "'");
  }
  return v;
}

inline std::vector<double> numbers(const nlohmann::json& j, const std::string& path, std::size_t n) {
  if (!j.is_array() || j.size() != n) {
    throw SchemaViolation(path, "expected an array of " + std::to_string(n) + " numbers at '" + path + "'");
  }
  std::vector<double> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(number(j[i], index_path(path, i)));
  return out;
}

inline Vec3 vec3_field(const nlohmann::json& j, const std::string& key, const std::string& path) {
  const auto v = numbers(member(j, key, path), child_path(path, key), 3);
  return Vec3(v[0], v[1], v[2]);
}

}  // namespace hop::detail
