#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "lumifield/geometry.hpp"

namespace lumifield {

using Rgb = std::array<float, 3>;

inline double luminance(const Rgb& c) {
  return 0.2126 * c[0] + 0.7152 * c[1] + 0.0722 * c[2];
}

// Equirectangular HDR raster with linear RGB radiance and an optional
// observation mask (1 = observed). Radiance is non-negative at arbitrary
// exposure scale.
struct EnvironmentImage {
  int width = 0;
  int height = 0;
  std::vector<float> pixels;       // height*width*3, row-major
  std::vector<std::uint8_t> mask;  // empty, or height*width

  static EnvironmentImage zero(int h, int w) {
    EnvironmentImage img;
    img.height = h;
    img.width = w;
    img.pixels.assign(static_cast<std::size_t>(h) * w * 3, 0.0f);
    return img;
  }

  bool has_mask() const { return !mask.empty(); }

  bool observed(int row, int col) const {
    return mask.empty() || mask[static_cast<std::size_t>(row) * width + col] != 0;
  }

  float* pixel(int row, int col) {
    return pixels.data() + (static_cast<std::size_t>(row) * width + col) * 3;
  }
  const float* pixel(int row, int col) const {
    return pixels.data() + (static_cast<std::size_t>(row) * width + col) * 3;
  }

  Rgb color(int row, int col) const {
    const float* p = pixel(row, col);
    return {p[0], p[1], p[2]};
  }

  void set_color(int row, int col, const Rgb& c) {
    float* p = pixel(row, col);
    p[0] = c[0];
    p[1] = c[1];
    p[2] = c[2];
  }

  std::size_t pixel_count() const { return static_cast<std::size_t>(height) * width; }

  void validate() const {
    if (width <= 0 || height <= 0) throw std::invalid_argument("image has empty dimensions");
    if (pixels.size() != pixel_count() * 3)
      throw std::invalid_argument("pixel buffer size does not match dimensions");
    for (float v : pixels) {
      if (!(v >= 0.0f) || !std::isfinite(v))
        throw std::invalid_argument("radiance must be finite and non-negative");
    }
    if (!mask.empty() && mask.size() != pixel_count())
      throw std::invalid_argument("mask dimensions do not match image");
  }

  double total_energy() const {
    double s = 0.0;
    for (float v : pixels) s += v;
    return s;
  }
};

inline EnvironmentImage augment_hflip(const EnvironmentImage& in) {
  EnvironmentImage out = in;
  for (int r = 0; r < in.height; ++r)
    for (int c = 0; c < in.width; ++c) {
      out.set_color(r, c, in.color(r, in.width - 1 - c));
      if (!in.mask.empty())
        out.mask[static_cast<std::size_t>(r) * in.width + c] =
            in.mask[static_cast<std::size_t>(r) * in.width + (in.width - 1 - c)];
    }
  return out;
}

// Circular column shift: out(r, c) = in(r, (c + k) mod W). Fitting a latent
// to the shifted image corresponds to R_y(2*pi*k/W) acting on the latent of
// the original.
inline EnvironmentImage augment_az_rotate(const EnvironmentImage& in, int k) {
  k = ((k % in.width) + in.width) % in.width;  // full turns are the identity
  EnvironmentImage out = in;
  for (int r = 0; r < in.height; ++r)
    for (int c = 0; c < in.width; ++c) {
      const int src = (c + k) % in.width;
      out.set_color(r, c, in.color(r, src));
      if (!in.mask.empty())
        out.mask[static_cast<std::size_t>(r) * in.width + c] =
            in.mask[static_cast<std::size_t>(r) * in.width + src];
    }
  return out;
}

// Bilinear lookup at a direction, with azimuthal wrap-around and polar row
// clamping. Masked-out taps are dropped and the remaining weights
// renormalised; at least one tap must be observed.
inline Rgb sample_bilinear(const EnvironmentImage& img, const Vec3& dir) {
  const Vec2 rc = direction_to_pixel_continuous(dir, img.height, img.width);
  const int r0 = static_cast<int>(std::floor(rc.x));
  const int c0 = static_cast<int>(std::floor(rc.y));
  const double fr = rc.x - r0;
  const double fc = rc.y - c0;
  const int rows[2] = {std::clamp(r0, 0, img.height - 1), std::clamp(r0 + 1, 0, img.height - 1)};
  const int cols[2] = {((c0 % img.width) + img.width) % img.width,
                       ((c0 + 1) % img.width + img.width) % img.width};
  const double w[4] = {(1 - fr) * (1 - fc), (1 - fr) * fc, fr * (1 - fc), fr * fc};
  double acc[3] = {0, 0, 0};
  double total = 0.0;
  for (int i = 0; i < 4; ++i) {
    const int r = rows[i / 2], c = cols[i % 2];
    if (!img.observed(r, c)) continue;
    const float* p = img.pixel(r, c);
    for (int ch = 0; ch < 3; ++ch) acc[ch] += w[i] * p[ch];
    total += w[i];
  }
  if (total <= 0.0) throw std::runtime_error("sample_bilinear: all taps masked out");
  return {static_cast<float>(acc[0] / total), static_cast<float>(acc[1] / total),
          static_cast<float>(acc[2] / total)};
}

}  // namespace lumifield
