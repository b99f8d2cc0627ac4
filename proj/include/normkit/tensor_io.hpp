#pragma once

// NKT1 tensor files: magic "NKT1", one dtype byte (1 = float32, 2 = float64),
// four little-endian uint32 extents (N, H, W, C), then the raw scalars in
// row-major (N, H, W, C) order.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "normkit/tensor.hpp"

namespace normkit {

inline constexpr char kTensorMagic[4] = {'N', 'K', 'T', '1'};

template <typename T>
constexpr uint8_t dtype_byte() {
  return std::is_same_v<T, float> ? 1 : 2;
}

namespace detail {

inline void write_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw IoError("NKT1: truncated header");
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

}  // namespace detail

template <typename T>
void write_nkt(std::ostream& os, const Tensor<T>& t) {
  os.write(kTensorMagic, 4);
  const uint8_t dt = dtype_byte<T>();
  os.write(reinterpret_cast<const char*>(&dt), 1);
  detail::write_u32(os, static_cast<uint32_t>(t.shape().n));
  detail::write_u32(os, static_cast<uint32_t>(t.shape().h));
  detail::write_u32(os, static_cast<uint32_t>(t.shape().w));
  detail::write_u32(os, static_cast<uint32_t>(t.shape().c));
  os.write(reinterpret_cast<const char*>(t.data().data()),
           static_cast<std::streamsize>(t.numel() * sizeof(T)));
  if (!os) throw IoError("NKT1: write failed");
}

template <typename T>
void write_nkt(const std::filesystem::path& path, const Tensor<T>& t) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("NKT1: cannot open " + path.string() + " for writing");
  write_nkt(f, t);
}

template <typename T>
Tensor<T> read_nkt(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kTensorMagic, 4) != 0)
    throw IoError("NKT1: bad magic");
  uint8_t dt = 0;
  is.read(reinterpret_cast<char*>(&dt), 1);
  if (!is) throw IoError("NKT1: truncated header");
  if (dt != dtype_byte<T>()) {
    throw IoError("NKT1: dtype byte " + std::to_string(int(dt)) + " does not match requested dtype " +
                  std::to_string(int(dtype_byte<T>())));
  }
  Shape s;
  s.n = detail::read_u32(is);
  s.h = detail::read_u32(is);
  s.w = detail::read_u32(is);
  s.c = detail::read_u32(is);
  if (s.n <= 0 || s.h <= 0 || s.w <= 0 || s.c <= 0) throw IoError("NKT1: invalid extents " + s.str());
  std::vector<T> data(static_cast<size_t>(s.numel()));
  is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(T)));
  if (!is) throw IoError("NKT1: truncated payload");
  return Tensor<T>(s, std::move(data));
}

template <typename T>
Tensor<T> read_nkt(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("NKT1: cannot open " + path.string());
  return read_nkt<T>(f);
}

}  // namespace normkit
