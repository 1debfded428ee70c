#pragma once

// Synthetic captioned-shapes dataset.
//
// Every sample is a single filled shape (circle, square, triangle or cross)
// in one of four colors on one of three background colors, rasterized without
// anti-aliasing at any requested square resolution.  Geometry and class are
// derived deterministically from (seed, index), so the same index always
// yields the same sample and the same sample can be rendered at several
// resolutions for the multi-stage pipeline.

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "rng.hpp"
#include "text.hpp"

namespace dmgan {

inline constexpr std::size_t kNumShapes = 4;
inline constexpr std::size_t kNumColors = 4;
inline constexpr std::size_t kNumBackgrounds = 3;
inline constexpr std::size_t kNumClasses =
    kNumShapes * kNumColors * kNumBackgrounds;  // 48

inline const char* shape_name(std::size_t s) {
  static const char* names[kNumShapes] = {"circle", "square", "triangle",
                                          "cross"};
  if (s >= kNumShapes) throw std::invalid_argument("shape_name: bad index");
  return names[s];
}

inline const char* color_name(std::size_t c) {
  static const char* names[kNumColors] = {"red", "green", "blue", "yellow"};
  if (c >= kNumColors) throw std::invalid_argument("color_name: bad index");
  return names[c];
}

inline const char* background_name(std::size_t b) {
  static const char* names[kNumBackgrounds] = {"black", "white", "gray"};
  if (b >= kNumBackgrounds)
    throw std::invalid_argument("background_name: bad index");
  return names[b];
}

// RGB in [-1, 1].
inline void color_rgb(std::size_t c, float out[3]) {
  static const float table[kNumColors][3] = {
      {1.0f, -1.0f, -1.0f},   // red
      {-1.0f, 1.0f, -1.0f},   // green
      {-1.0f, -1.0f, 1.0f},   // blue
      {1.0f, 1.0f, -1.0f}};   // yellow
  if (c >= kNumColors) throw std::invalid_argument("color_rgb: bad index");
  for (int i = 0; i < 3; ++i) out[i] = table[c][i];
}

inline void background_rgb(std::size_t b, float out[3]) {
  static const float table[kNumBackgrounds][3] = {
      {-1.0f, -1.0f, -1.0f},  // black
      {1.0f, 1.0f, 1.0f},     // white
      {0.0f, 0.0f, 0.0f}};    // gray
  if (b >= kNumBackgrounds)
    throw std::invalid_argument("background_rgb: bad index");
  for (int i = 0; i < 3; ++i) out[i] = table[b][i];
}

// Resolution-independent description of one sample.  Geometry is stored as
// fractions of the image side so the sample can be rendered at 16, 32 and 64.
struct ShapeSpec {
  std::size_t shape = 0;       // 0..3
  std::size_t color = 0;       // 0..3
  std::size_t background = 0;  // 0..2
  double cx = 0.5;             // center, fraction of side
  double cy = 0.5;
  double radius = 0.3;         // half-extent, fraction of side

  std::size_t class_id() const {
    return (shape * kNumColors + color) * kNumBackgrounds + background;
  }

  std::string caption() const {
    std::string s = "a ";
    s += color_name(color);
    s += ' ';
    s += shape_name(shape);
    s += " on a ";
    s += background_name(background);
    s += " background";
    return s;
  }
};

// Deterministic sample description for (seed, index).
inline ShapeSpec make_shape_spec(std::uint64_t seed, std::uint64_t index) {
  Rng rng = derive_rng(seed, "shapes.sample", index);
  ShapeSpec spec;
  std::size_t cls = static_cast<std::size_t>(rng.below(kNumClasses));
  spec.background = cls % kNumBackgrounds;
  spec.color = (cls / kNumBackgrounds) % kNumColors;
  spec.shape = cls / (kNumBackgrounds * kNumColors);
  spec.radius = 0.20 + 0.14 * rng.uniform();
  double margin = spec.radius + 0.04;
  spec.cx = margin + (1.0 - 2.0 * margin) * rng.uniform();
  spec.cy = margin + (1.0 - 2.0 * margin) * rng.uniform();
  return spec;
}

namespace detail {

// Hard in/out decision for a pixel center, no anti-aliasing.
inline bool inside_shape(const ShapeSpec& spec, double x, double y) {
  double dx = x - spec.cx;
  double dy = y - spec.cy;
  double r = spec.radius;
  switch (spec.shape) {
    case 0:  // circle
      return dx * dx + dy * dy <= r * r;
    case 1:  // axis-aligned square
      return dx >= -r && dx <= r && dy >= -r && dy <= r;
    case 2: {  // upward-pointing isoceles triangle
      if (dy < -r || dy > r) return false;
      // Width grows linearly from the apex (dy = -r) to the base (dy = +r).
      double half_width = r * (dy + r) / (2.0 * r);
      return dx >= -half_width && dx <= half_width;
    }
    case 3: {  // plus-shaped cross with arm half-width r/3
      double arm = r / 3.0;
      bool horizontal = (dy >= -arm && dy <= arm && dx >= -r && dx <= r);
      bool vertical = (dx >= -arm && dx <= arm && dy >= -r && dy <= r);
      return horizontal || vertical;
    }
    default:
      throw std::logic_error("inside_shape: bad shape index");
  }
}

}  // namespace detail

// Rasterize to CHW floats in [-1, 1].
inline std::vector<float> render_shape(const ShapeSpec& spec,
                                       std::size_t res) {
  if (res == 0) throw std::invalid_argument("render_shape: zero resolution");
  float fg[3];
  float bg[3];
  color_rgb(spec.color, fg);
  background_rgb(spec.background, bg);
  std::vector<float> img(3 * res * res);
  for (std::size_t y = 0; y < res; ++y) {
    for (std::size_t x = 0; x < res; ++x) {
      double px = (static_cast<double>(x) + 0.5) / static_cast<double>(res);
      double py = (static_cast<double>(y) + 0.5) / static_cast<double>(res);
      const float* c = detail::inside_shape(spec, px, py) ? fg : bg;
      for (std::size_t ch = 0; ch < 3; ++ch) {
        img[ch * res * res + y * res + x] = c[ch];
      }
    }
  }
  return img;
}

// Fixed caption vocabulary: pad token plus every word that can appear in a
// caption, in a stable order.
inline Vocabulary make_shapes_vocabulary() {
  Vocabulary vocab;
  vocab.add("a");
  vocab.add("on");
  vocab.add("background");
  for (std::size_t c = 0; c < kNumColors; ++c) vocab.add(color_name(c));
  for (std::size_t s = 0; s < kNumShapes; ++s) vocab.add(shape_name(s));
  for (std::size_t b = 0; b < kNumBackgrounds; ++b)
    vocab.add(background_name(b));
  return vocab;
}

// Average-pool a CHW image down by an integer factor.  Used to feed
// high-resolution images to the fixed-resolution feature extractor.
inline std::vector<float> downsample_avg(const std::vector<float>& img,
                                         std::size_t channels, std::size_t res,
                                         std::size_t factor) {
  if (factor == 0 || res % factor != 0)
    throw std::invalid_argument("downsample_avg: bad factor");
  if (img.size() != channels * res * res)
    throw std::invalid_argument("downsample_avg: size mismatch");
  std::size_t out_res = res / factor;
  std::vector<float> out(channels * out_res * out_res, 0.0f);
  double inv = 1.0 / static_cast<double>(factor * factor);
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t y = 0; y < out_res; ++y) {
      for (std::size_t x = 0; x < out_res; ++x) {
        double acc = 0.0;
        for (std::size_t dy = 0; dy < factor; ++dy) {
          for (std::size_t dx = 0; dx < factor; ++dx) {
            acc += img[c * res * res + (y * factor + dy) * res +
                       (x * factor + dx)];
          }
        }
        out[c * out_res * out_res + y * out_res + x] =
            static_cast<float>(acc * inv);
      }
    }
  }
  return out;
}

// Nearest-neighbor upsample of a CHW image by an integer factor.
inline std::vector<float> upsample_nearest_raw(const std::vector<float>& img,
                                               std::size_t channels,
                                               std::size_t res,
                                               std::size_t factor) {
  if (factor == 0) throw std::invalid_argument("upsample_nearest_raw: factor 0");
  if (img.size() != channels * res * res)
    throw std::invalid_argument("upsample_nearest_raw: size mismatch");
  std::size_t out_res = res * factor;
  std::vector<float> out(channels * out_res * out_res);
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t y = 0; y < out_res; ++y)
      for (std::size_t x = 0; x < out_res; ++x)
        out[c * out_res * out_res + y * out_res + x] =
            img[c * res * res + (y / factor) * res + (x / factor)];
  return out;
}

}  // namespace dmgan
