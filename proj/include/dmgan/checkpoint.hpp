#pragma once

// Binary checkpoint container.
//
// Layout (all integers little-endian):
//   magic "DMGK" | u32 version | u32 entry_count
//   then per entry:
//     u16 name_len | name bytes (UTF-8) | u8 rank | rank x u32 dims |
//     prod(dims) x f32 row-major
//
// Entries are written in the order given and read back in file order, so a
// save/load round trip is byte-identical.

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

namespace dmgan {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointEntry {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> data;

  std::size_t scalar_count() const {
    std::size_t n = 1;
    for (std::uint32_t d : dims) n *= d;
    return n;
  }
};

namespace detail {

inline void put_u16(std::vector<unsigned char>& out, std::uint16_t v) {
  out.push_back(static_cast<unsigned char>(v & 0xff));
  out.push_back(static_cast<unsigned char>((v >> 8) & 0xff));
}

inline void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i)
    out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}

inline void put_f32(std::vector<unsigned char>& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

struct ByteReader {
  const unsigned char* p;
  std::size_t left;

  void need(std::size_t n) const {
    if (left < n) throw std::runtime_error("checkpoint: truncated file");
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = static_cast<std::uint16_t>(p[0] | (p[1] << 8));
    p += 2;
    left -= 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    p += 4;
    left -= 4;
    return v;
  }
  std::uint8_t u8() {
    need(1);
    std::uint8_t v = p[0];
    ++p;
    --left;
    return v;
  }
  float f32() {
    std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(p), n);
    p += n;
    left -= n;
    return s;
  }
};

}  // namespace detail

inline std::vector<unsigned char> encode_checkpoint(
    const std::vector<CheckpointEntry>& entries) {
  std::vector<unsigned char> out;
  out.push_back('D');
  out.push_back('M');
  out.push_back('G');
  out.push_back('K');
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(entries.size()));
  for (const CheckpointEntry& e : entries) {
    if (e.name.size() > 0xffff)
      throw std::invalid_argument("checkpoint: entry name too long");
    if (e.dims.size() > 0xff)
      throw std::invalid_argument("checkpoint: entry rank too large");
    if (e.data.size() != e.scalar_count())
      throw std::invalid_argument("checkpoint: data size does not match dims: " +
                                  e.name);
    detail::put_u16(out, static_cast<std::uint16_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    out.push_back(static_cast<unsigned char>(e.dims.size()));
    for (std::uint32_t d : e.dims) detail::put_u32(out, d);
    for (float v : e.data) detail::put_f32(out, v);
  }
  return out;
}

inline std::vector<CheckpointEntry> decode_checkpoint(
    const unsigned char* bytes, std::size_t size) {
  detail::ByteReader r{bytes, size};
  r.need(4);
  if (std::memcmp(r.p, "DMGK", 4) != 0)
    throw std::runtime_error("checkpoint: bad magic");
  r.p += 4;
  r.left -= 4;
  std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint: unsupported version " +
                             std::to_string(version));
  std::uint32_t count = r.u32();
  std::vector<CheckpointEntry> entries;
  entries.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    std::uint16_t name_len = r.u16();
    e.name = r.str(name_len);
    std::uint8_t rank = r.u8();
    e.dims.resize(rank);
    for (std::uint8_t d = 0; d < rank; ++d) e.dims[d] = r.u32();
    std::size_t n = e.scalar_count();
    e.data.resize(n);
    for (std::size_t k = 0; k < n; ++k) e.data[k] = r.f32();
    entries.push_back(std::move(e));
  }
  if (r.left != 0)
    throw std::runtime_error("checkpoint: trailing bytes after last entry");
  return entries;
}

inline void save_checkpoint(const std::string& path,
                            const std::vector<CheckpointEntry>& entries) {
  std::vector<unsigned char> bytes = encode_checkpoint(entries);
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw std::runtime_error("checkpoint: cannot open for write: " + path);
  std::size_t written = std::fwrite(bytes.data(), 1, bytes.size(), f);
  std::fclose(f);
  if (written != bytes.size())
    throw std::runtime_error("checkpoint: short write: " + path);
}

inline std::vector<CheckpointEntry> load_checkpoint(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw std::runtime_error("checkpoint: cannot open for read: " + path);
  std::fseek(f, 0, SEEK_END);
  long size = std::ftell(f);
  std::fseek(f, 0, SEEK_SET);
  std::vector<unsigned char> bytes(size > 0 ? static_cast<std::size_t>(size)
                                            : 0);
  std::size_t got = std::fread(bytes.data(), 1, bytes.size(), f);
  std::fclose(f);
  if (got != bytes.size())
    throw std::runtime_error("checkpoint: short read: " + path);
  return decode_checkpoint(bytes.data(), bytes.size());
}

}  // namespace dmgan
