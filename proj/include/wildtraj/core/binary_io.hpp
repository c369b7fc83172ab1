#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <string_view>

#include "wildtraj/core/error.hpp"

// Little-endian primitives shared by the feature container and checkpoints.
namespace wildtraj::binary {

static_assert(std::endian::native == std::endian::little, "binary containers assume a little-endian host");

inline void write_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }

inline void write_f32(std::ostream& out, float v) { out.write(reinterpret_cast<const char*>(&v), 4); }

inline void write_string(std::ostream& out, std::string_view s) {
  write_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline void write_bytes(std::ostream& out, std::span<const std::uint8_t> bytes) {
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline void read_exact(std::istream& in, void* dst, std::size_t n) {
  in.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) throw SchemaError("truncated binary file");
}

inline std::uint32_t read_u32(std::istream& in) {
  std::uint32_t v;
  read_exact(in, &v, 4);
  return v;
}

inline float read_f32(std::istream& in) {
  float v;
  read_exact(in, &v, 4);
  return v;
}

inline std::string read_string(std::istream& in, std::size_t max_len = std::size_t{1} << 24) {
  std::uint32_t n = read_u32(in);
  if (n > max_len) throw SchemaError("string length " + std::to_string(n) + " exceeds limit");
  std::string s(n, '\0');
  read_exact(in, s.data(), n);
  return s;
}

inline void expect_magic(std::istream& in, std::string_view magic) {
  char buf[4];
  read_exact(in, buf, 4);
  if (std::string_view(buf, 4) != magic) throw SchemaError("bad magic: expected '" + std::string(magic) + "'");
}

}  // namespace wildtraj::binary
