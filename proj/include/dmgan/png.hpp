#pragma once

// Minimal 8-bit RGB PNG writer (zlib handles compression and CRCs) plus a
// helper that tiles [-1, 1] CHW float images into a sample grid.

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

namespace dmgan {

namespace detail {

inline void png_u32be(std::vector<unsigned char>& out, std::uint32_t v) {
  out.push_back(static_cast<unsigned char>((v >> 24) & 0xff));
  out.push_back(static_cast<unsigned char>((v >> 16) & 0xff));
  out.push_back(static_cast<unsigned char>((v >> 8) & 0xff));
  out.push_back(static_cast<unsigned char>(v & 0xff));
}

inline void png_chunk(std::vector<unsigned char>& out, const char type[4],
                      const unsigned char* data, std::size_t size) {
  png_u32be(out, static_cast<std::uint32_t>(size));
  std::size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  if (size) out.insert(out.end(), data, data + size);
  std::uint32_t crc = static_cast<std::uint32_t>(
      ::crc32(0L, out.data() + start, static_cast<uInt>(4 + size)));
  png_u32be(out, crc);
}

}  // namespace detail

// rgb: row-major, 3 bytes per pixel, `width * height * 3` bytes.
inline std::vector<unsigned char> encode_png_rgb8(
    const std::vector<unsigned char>& rgb, std::size_t width,
    std::size_t height) {
  if (width == 0 || height == 0)
    throw std::invalid_argument("encode_png_rgb8: empty image");
  if (rgb.size() != width * height * 3)
    throw std::invalid_argument("encode_png_rgb8: buffer size mismatch");

  // Raw scanlines, each prefixed with filter type 0 (none).
  std::vector<unsigned char> raw;
  raw.reserve(height * (1 + width * 3));
  for (std::size_t y = 0; y < height; ++y) {
    raw.push_back(0);
    const unsigned char* row = rgb.data() + y * width * 3;
    raw.insert(raw.end(), row, row + width * 3);
  }

  uLongf comp_size = ::compressBound(static_cast<uLong>(raw.size()));
  std::vector<unsigned char> comp(comp_size);
  if (::compress2(comp.data(), &comp_size, raw.data(),
                  static_cast<uLong>(raw.size()), Z_BEST_SPEED) != Z_OK)
    throw std::runtime_error("encode_png_rgb8: deflate failed");
  comp.resize(comp_size);

  std::vector<unsigned char> out = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a,
                                    '\n'};
  unsigned char ihdr[13];
  ihdr[0] = static_cast<unsigned char>((width >> 24) & 0xff);
  ihdr[1] = static_cast<unsigned char>((width >> 16) & 0xff);
  ihdr[2] = static_cast<unsigned char>((width >> 8) & 0xff);
  ihdr[3] = static_cast<unsigned char>(width & 0xff);
  ihdr[4] = static_cast<unsigned char>((height >> 24) & 0xff);
  ihdr[5] = static_cast<unsigned char>((height >> 16) & 0xff);
  ihdr[6] = static_cast<unsigned char>((height >> 8) & 0xff);
  ihdr[7] = static_cast<unsigned char>(height & 0xff);
  ihdr[8] = 8;   // bit depth
  ihdr[9] = 2;   // color type: truecolor RGB
  ihdr[10] = 0;  // compression
  ihdr[11] = 0;  // filter
  ihdr[12] = 0;  // interlace
  detail::png_chunk(out, "IHDR", ihdr, 13);
  detail::png_chunk(out, "IDAT", comp.data(), comp.size());
  detail::png_chunk(out, "IEND", nullptr, 0);
  return out;
}

inline void write_png_rgb8(const std::string& path,
                           const std::vector<unsigned char>& rgb,
                           std::size_t width, std::size_t height) {
  std::vector<unsigned char> bytes = encode_png_rgb8(rgb, width, height);
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw std::runtime_error("write_png_rgb8: cannot open " + path);
  std::size_t written = std::fwrite(bytes.data(), 1, bytes.size(), f);
  std::fclose(f);
  if (written != bytes.size())
    throw std::runtime_error("write_png_rgb8: short write: " + path);
}

// Map one [-1, 1] float channel value to a byte.
inline unsigned char float_to_byte(float v) {
  float scaled = (std::clamp(v, -1.0f, 1.0f) + 1.0f) * 127.5f;
  return static_cast<unsigned char>(std::lround(scaled));
}

// Tile CHW float images (each 3 x res x res, values in [-1, 1]) into a
// `cols`-wide grid with a 2-pixel dark separator, and write it as PNG.
inline void write_image_grid(const std::string& path,
                             const std::vector<std::vector<float>>& images,
                             std::size_t res, std::size_t cols) {
  if (images.empty()) throw std::invalid_argument("write_image_grid: no images");
  if (cols == 0) throw std::invalid_argument("write_image_grid: zero columns");
  for (const auto& img : images)
    if (img.size() != 3 * res * res)
      throw std::invalid_argument("write_image_grid: image size mismatch");
  std::size_t rows = (images.size() + cols - 1) / cols;
  constexpr std::size_t kPad = 2;
  std::size_t width = cols * res + (cols + 1) * kPad;
  std::size_t height = rows * res + (rows + 1) * kPad;
  std::vector<unsigned char> rgb(width * height * 3, 32);
  for (std::size_t i = 0; i < images.size(); ++i) {
    std::size_t gx = i % cols;
    std::size_t gy = i / cols;
    std::size_t x0 = kPad + gx * (res + kPad);
    std::size_t y0 = kPad + gy * (res + kPad);
    for (std::size_t y = 0; y < res; ++y) {
      for (std::size_t x = 0; x < res; ++x) {
        for (std::size_t c = 0; c < 3; ++c) {
          rgb[((y0 + y) * width + x0 + x) * 3 + c] =
              float_to_byte(images[i][c * res * res + y * res + x]);
        }
      }
    }
  }
  write_png_rgb8(path, rgb, width, height);
}

}  // namespace dmgan
