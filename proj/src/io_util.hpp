// Little-endian stream helpers shared by the binary file formats.
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include "mp/errors.hpp"

namespace mp::io {

inline void fail(const std::filesystem::path& p, const std::string& why) {
  throw FormatError(p.string() + ": " + why);
}

struct Writer {
  std::ofstream out;
  explicit Writer(const std::filesystem::path& p)
      : out(p, std::ios::binary | std::ios::trunc) {
    if (!out) fail(p, "cannot open for writing");
  }
  void bytes(const void* data, std::size_t n) {
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
  }
  void u8(std::uint8_t v) { bytes(&v, 1); }
  void i8(std::int8_t v) { bytes(&v, 1); }
  void u32(std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    bytes(b, 4);
  }
  void u64(std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    bytes(b, 8);
  }
  void f32(float v) {
    static_assert(sizeof(float) == 4);
    std::uint32_t u;
    std::memcpy(&u, &v, 4);
    u32(u);
  }
};

struct Reader {
  std::ifstream in;
  std::filesystem::path path;
  explicit Reader(const std::filesystem::path& p) : in(p, std::ios::binary), path(p) {
    if (!in) fail(p, "cannot open");
  }
  void bytes(void* data, std::size_t n) {
    in.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n) fail(path, "truncated file");
  }
  std::uint8_t u8() {
    std::uint8_t v;
    bytes(&v, 1);
    return v;
  }
  std::int8_t i8() { return static_cast<std::int8_t>(u8()); }
  std::uint32_t u32() {
    unsigned char b[4];
    bytes(b, 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    unsigned char b[8];
    bytes(b, 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  }
  float f32() {
    std::uint32_t u = u32();
    float v;
    std::memcpy(&v, &u, 4);
    return v;
  }
  void expect_magic(const char* magic, std::size_t n) {
    std::string got(n, '\0');
    bytes(got.data(), n);
    if (std::memcmp(got.data(), magic, n) != 0) fail(path, "bad magic");
  }
  bool at_eof() {
    return in.peek() == std::ifstream::traits_type::eof();
  }
};

}  // namespace mp::io
