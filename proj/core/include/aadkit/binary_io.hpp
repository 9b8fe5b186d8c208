#pragma once

#include <nlohmann/json.hpp>

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace aadkit::io {

// Little-endian IEEE-754 float64 arrays, no header.
void write_f64_le(const std::filesystem::path& path, std::span<const double> values);

// Reads exactly `count` doubles. A short file raises FormatError naming
// `field` and the byte offset where data ran out; trailing bytes are also an error.
std::vector<double> read_f64_le(const std::filesystem::path& path, std::size_t count, const std::string& field);

void write_json(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json(const std::filesystem::path& path);

[[noreturn]] void throw_missing(const char* key, const std::string& context);
[[noreturn]] void throw_bad_type(const char* key, const std::string& context);

// Required-field accessors that raise FormatError instead of json exceptions.
template <typename T>
T require(const nlohmann::json& j, const char* key, const std::string& context) {
  if (!j.contains(key)) throw_missing(key, context);
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw_bad_type(key, context);
  }
}

}  // namespace aadkit::io
