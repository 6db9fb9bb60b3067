#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "ssdn/array.hpp"

namespace ssdn {

// Checkpoint container: magic "SSDN", u32 version, u32 tensor count, then
// per tensor u16 name length, name bytes, u8 rank, u32 dims, f32 payload.
// All integers and floats little-endian.
namespace detail {

inline void put_u16(std::ostream& os, uint16_t v) {
  char b[2] = {static_cast<char>(v & 0xff), static_cast<char>(v >> 8)};
  os.write(b, 2);
}
inline void put_u32(std::ostream& os, uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 4);
}
inline void put_f32(std::ostream& os, float f) {
  uint32_t v;
  std::memcpy(&v, &f, 4);
  put_u32(os, v);
}
inline uint16_t get_u16(std::istream& is) {
  unsigned char b[2];
  is.read(reinterpret_cast<char*>(b), 2);
  return static_cast<uint16_t>(b[0] | (b[1] << 8));
}
inline uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}
inline float get_f32(std::istream& is) {
  uint32_t v = get_u32(is);
  float f;
  std::memcpy(&f, &v, 4);
  return f;
}

}  // namespace detail

using NamedTensors = std::vector<std::pair<std::string, Array<float>>>;

inline void save_checkpoint(const std::string& path, const NamedTensors& tensors) {
  std::ofstream os(path, std::ios::binary);
  require(os.good(), "save_checkpoint: cannot open " + path);
  os.write("SSDN", 4);
  detail::put_u32(os, 1u);
  detail::put_u32(os, static_cast<uint32_t>(tensors.size()));
  for (const auto& [name, arr] : tensors) {
    require(name.size() <= 0xffff, "save_checkpoint: name too long");
    detail::put_u16(os, static_cast<uint16_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    os.put(static_cast<char>(arr.rank()));
    for (int d : arr.shape) detail::put_u32(os, static_cast<uint32_t>(d));
    for (float v : arr.data) detail::put_f32(os, v);
  }
  require(os.good(), "save_checkpoint: write failed for " + path);
}

inline NamedTensors load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  require(is.good(), "load_checkpoint: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  require(is.good() && std::memcmp(magic, "SSDN", 4) == 0,
          "load_checkpoint: bad magic in " + path);
  uint32_t version = detail::get_u32(is);
  require(version == 1, "load_checkpoint: unsupported version");
  uint32_t count = detail::get_u32(is);
  NamedTensors out;
  out.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    uint16_t nlen = detail::get_u16(is);
    std::string name(nlen, '\0');
    is.read(name.data(), nlen);
    int rank = is.get();
    require(rank >= 0 && rank <= 8, "load_checkpoint: bad rank");
    Shape shape(rank);
    for (int d = 0; d < rank; ++d) shape[d] = static_cast<int>(detail::get_u32(is));
    Array<float> arr(shape);
    for (auto& v : arr.data) v = detail::get_f32(is);
    require(is.good(), "load_checkpoint: truncated payload in " + path);
    out.emplace_back(std::move(name), std::move(arr));
  }
  return out;
}

}  // namespace ssdn
