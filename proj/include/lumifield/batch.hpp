#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "lumifield/geometry.hpp"
#include "lumifield/image.hpp"
#include "lumifield/rng.hpp"

namespace lumifield {

// Radiance floor applied before taking logs.
inline constexpr double kLogClampFloor = 1e-8;

struct TrainingBatch {
  Eigen::Matrix3Xd directions;  // 3 x P, unit columns
  Eigen::Matrix3Xd log_colors;  // 3 x P, log of clamped linear radiance
  std::vector<int> image_index; // P entries into the dataset

  int sample_count() const { return static_cast<int>(image_index.size()); }
};

// Draws a direction whose nearest pixel is observed. Rejection keeps the
// sin-weighted distribution over the observed region.
inline Vec3 sample_observed_direction(const EnvironmentImage& img, Rng& rng) {
  for (int attempt = 0; attempt < 100000; ++attempt) {
    const Vec3 d = sample_direction(rng);
    const auto [r, c] = direction_to_pixel(d, img.height, img.width);
    if (img.observed(r, c)) return d;
  }
  throw std::runtime_error("sample_observed_direction: mask rejection did not terminate");
}

inline TrainingBatch sample_training_batch(const std::vector<EnvironmentImage>& images,
                                           int samples, Rng& rng) {
  if (images.empty()) throw std::invalid_argument("sample_training_batch: no images");
  if (samples < 1) throw std::invalid_argument("sample_training_batch: need at least one sample");
  for (const EnvironmentImage& img : images) {
    if (!img.has_mask()) continue;
    bool any = false;
    for (std::uint8_t m : img.mask)
      if (m) {
        any = true;
        break;
      }
    if (!any) throw std::invalid_argument("sample_training_batch: image is fully masked");
  }

  TrainingBatch batch;
  batch.directions.resize(3, samples);
  batch.log_colors.resize(3, samples);
  batch.image_index.resize(static_cast<std::size_t>(samples));
  for (int p = 0; p < samples; ++p) {
    const int idx = rng.uniform_int(static_cast<int>(images.size()));
    const EnvironmentImage& img = images[static_cast<std::size_t>(idx)];
    const Vec3 d = sample_observed_direction(img, rng);
    const Rgb c = sample_bilinear(img, d);
    batch.image_index[static_cast<std::size_t>(p)] = idx;
    batch.directions.col(p) << d.x, d.y, d.z;
    for (int ch = 0; ch < 3; ++ch)
      batch.log_colors(ch, p) = std::log(std::max(static_cast<double>(c[ch]), kLogClampFloor));
  }
  return batch;
}

inline TrainingBatch sample_training_batch(const std::vector<EnvironmentImage>& images,
                                           int samples, std::uint64_t seed) {
  Rng rng(seed);
  return sample_training_batch(images, samples, rng);
}

}  // namespace lumifield
