#pragma once

// Deterministic synthetic outdoor environments: vertical sky gradient, a
// darker ground band below the horizon and one HDR sun disc above it, with a
// random global exposure scale. A desk-scale stand-in for real captures.

#include <algorithm>
#include <cmath>

#include "lumifield/geometry.hpp"
#include "lumifield/image.hpp"
#include "lumifield/rng.hpp"

namespace lumifield {

inline EnvironmentImage generate_synthetic_env(std::uint64_t seed, int height, int width) {
  if (height < 8 || width < 8)
    throw std::invalid_argument("generate_synthetic_env: dimensions must be >= 8");
  Rng rng(seed);

  const double sun_theta = rng.uniform(0.0, 2.0 * M_PI);
  const double sun_elev = rng.uniform(0.15, 1.1);  // radians above horizon
  const Vec3 sun_dir{std::cos(sun_elev) * std::cos(sun_theta), std::sin(sun_elev),
                     std::cos(sun_elev) * std::sin(sun_theta)};
  const double sun_peak = rng.log_uniform(1e2, 1e4);
  const double sun_sigma = rng.uniform(0.09, 0.2);
  const Rgb sun_color = {1.0f, 0.95f, 0.85f};

  const double u_sky = rng.uniform();
  const Rgb zenith = {static_cast<float>(0.20 + 0.15 * u_sky),
                      static_cast<float>(0.35 + 0.15 * u_sky),
                      static_cast<float>(0.70 + 0.25 * u_sky)};
  const double u_hor = rng.uniform();
  const Rgb horizon = {static_cast<float>(0.85 + 0.20 * u_hor),
                       static_cast<float>(0.85 + 0.18 * u_hor),
                       static_cast<float>(0.88 + 0.20 * u_hor)};
  const double u_ground = rng.uniform();  // brown <-> green mix
  const Rgb ground = {static_cast<float>(0.25 * (1 - u_ground) + 0.12 * u_ground),
                      static_cast<float>(0.17 * (1 - u_ground) + 0.22 * u_ground),
                      static_cast<float>(0.10 * (1 - u_ground) + 0.08 * u_ground)};
  const double exposure = rng.log_uniform(0.1, 10.0);

  EnvironmentImage img = EnvironmentImage::zero(height, width);
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      const Vec3 d = pixel_to_direction(r, c, height, width);
      Rgb col;
      if (d.y >= 0.0) {
        const float t = static_cast<float>(d.y);
        for (int ch = 0; ch < 3; ++ch) col[ch] = horizon[ch] * (1 - t) + zenith[ch] * t;
      } else {
        const float shade = static_cast<float>(1.0 + 0.8 * d.y);  // darker toward nadir
        for (int ch = 0; ch < 3; ++ch) col[ch] = ground[ch] * shade;
      }
      const double ang = std::acos(std::clamp(dot(d, sun_dir), -1.0, 1.0));
      const double sun = sun_peak * std::exp(-(ang * ang) / (sun_sigma * sun_sigma));
      for (int ch = 0; ch < 3; ++ch) col[ch] += static_cast<float>(sun) * sun_color[ch];
      for (int ch = 0; ch < 3; ++ch) col[ch] *= static_cast<float>(exposure);
      img.set_color(r, c, col);
    }
  }

  // Pin the constructed HDR peak at the pixel nearest the sun so the peak
  // survives coarse rasters where the disc falls between pixel centers.
  const auto [sr, sc] = direction_to_pixel(sun_dir, height, width);
  Rgb peak_col;
  for (int ch = 0; ch < 3; ++ch)
    peak_col[ch] = static_cast<float>(sun_peak * exposure) * sun_color[ch];
  const Rgb existing = img.color(sr, sc);
  for (int ch = 0; ch < 3; ++ch) peak_col[ch] = std::max(peak_col[ch], existing[ch]);
  img.set_color(sr, sc, peak_col);
  return img;
}

}  // namespace lumifield
