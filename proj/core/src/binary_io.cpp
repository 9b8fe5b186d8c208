#include "aadkit/binary_io.hpp"

#include "aadkit/error.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace aadkit::io {

namespace {

std::uint64_t to_le(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    std::uint64_t r = 0;
    for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xffu) << (8 * (7 - i));
    return r;
  }
}

}  // namespace

void write_f64_le(const std::filesystem::path& path, std::span<const double> values) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  std::vector<std::uint64_t> raw(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) raw[i] = to_le(std::bit_cast<std::uint64_t>(values[i]));
  os.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size() * 8));
  if (!os) throw Error("write failed: " + path.string());
}

std::vector<double> read_f64_le(const std::filesystem::path& path, std::size_t count, const std::string& field) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string() + " (" + field + ")");
  std::vector<std::uint64_t> raw(count);
  is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(count * 8));
  const auto got = static_cast<long long>(is.gcount());
  if (got != static_cast<long long>(count * 8))
    throw FormatError(path.filename().string() + ": truncated field '" + field + "', expected " +
                          std::to_string(count * 8) + " bytes",
                      got);
  if (is.peek() != std::ifstream::traits_type::eof())
    throw FormatError(path.filename().string() + ": trailing bytes after field '" + field + "'",
                      static_cast<long long>(count * 8));
  std::vector<double> out(count);
  for (std::size_t i = 0; i < count; ++i) out[i] = std::bit_cast<double>(to_le(raw[i]));
  return out;
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream os(path);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  os << j.dump(2) << '\n';
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path.filename().string() + ": malformed JSON: " + e.what(), static_cast<long long>(e.byte));
  }
}

void throw_missing(const char* key, const std::string& context) {
  throw FormatError(context + ": missing field '" + key + "'");
}

void throw_bad_type(const char* key, const std::string& context) {
  throw FormatError(context + ": field '" + key + "' has the wrong type");
}

}  // namespace aadkit::io
