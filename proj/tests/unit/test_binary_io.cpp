#include "aadkit/binary_io.hpp"
#include "aadkit/error.hpp"

#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>

using namespace aadkit;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "aadkit_test_binary_io";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST(BinaryIo, LittleEndianByteLayout) {
  const auto path = scratch("one.bin");
  const double v = 1.0;  // 0x3FF0000000000000
  io::write_f64_le(path, std::span<const double>(&v, 1));
  std::ifstream is(path, std::ios::binary);
  unsigned char bytes[8];
  is.read(reinterpret_cast<char*>(bytes), 8);
  const unsigned char expected[8] = {0, 0, 0, 0, 0, 0, 0xF0, 0x3F};
  EXPECT_EQ(std::memcmp(bytes, expected, 8), 0);
}

TEST(BinaryIo, RoundTripIsBitExact) {
  const auto path = scratch("round.bin");
  const std::vector<double> values{0.0, -0.0, 1.5, -3.25e-300, std::numeric_limits<double>::max(),
                                   std::numeric_limits<double>::denorm_min(), 0.1};
  io::write_f64_le(path, values);
  const auto back = io::read_f64_le(path, values.size(), "values");
  ASSERT_EQ(back.size(), values.size());
  EXPECT_EQ(std::memcmp(back.data(), values.data(), values.size() * sizeof(double)), 0);
}

TEST(BinaryIo, TruncatedFileReportsFieldAndOffset) {
  const auto path = scratch("short.bin");
  const std::vector<double> values(3, 2.0);
  io::write_f64_le(path, values);
  try {
    io::read_f64_le(path, 5, "eeg");
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 24);
    EXPECT_NE(std::string(e.what()).find("eeg"), std::string::npos);
  }
}

TEST(BinaryIo, TrailingBytesRejected) {
  const auto path = scratch("long.bin");
  const std::vector<double> values(4, 2.0);
  io::write_f64_le(path, values);
  EXPECT_THROW(io::read_f64_le(path, 3, "weights"), FormatError);
}

TEST(BinaryIo, MissingFileRejected) { EXPECT_THROW(io::read_f64_le(scratch("absent.bin"), 1, "x"), Error); }

TEST(Json, ParseErrorCarriesOffset) {
  const auto path = scratch("bad.json");
  std::ofstream(path) << "{\"a\": 1,, }";
  try {
    io::read_json(path);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_GE(e.offset(), 0);
  }
}

TEST(Json, RequireReportsMissingAndMistyped) {
  const nlohmann::json j{{"n", 3}, {"s", "text"}};
  EXPECT_EQ(io::require<int>(j, "n", "ctx"), 3);
  EXPECT_THROW(io::require<int>(j, "absent", "ctx"), FormatError);
  EXPECT_THROW(io::require<int>(j, "s", "ctx"), FormatError);
}
