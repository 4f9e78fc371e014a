#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "lumifield/batch.hpp"
#include "lumifield/field.hpp"
#include "lumifield/fitting.hpp"
#include "lumifield/image.hpp"
#include "lumifield/png_io.hpp"

namespace lumifield {

// Scale-align in linear space, clamp to [0, 1], then gamma 1/2.2.
inline EnvironmentImage tone_map(const EnvironmentImage& img, double align_offset) {
  EnvironmentImage out = img;
  const double gain = std::exp(align_offset);
  for (float& v : out.pixels) {
    const double lin = std::clamp(static_cast<double>(v) * gain, 0.0, 1.0);
    v = static_cast<float>(std::pow(lin, 1.0 / 2.2));
  }
  return out;
}

// Offset placing the median luminance at mid grey; a deterministic display
// exposure for ground-truth images of arbitrary scale.
inline double display_offset(const EnvironmentImage& img) {
  std::vector<double> lum;
  lum.reserve(img.pixel_count());
  for (int r = 0; r < img.height; ++r)
    for (int c = 0; c < img.width; ++c) lum.push_back(luminance(img.color(r, c)));
  std::nth_element(lum.begin(), lum.begin() + static_cast<long>(lum.size() / 2), lum.end());
  const double median = std::max(lum[lum.size() / 2], 1e-12);
  return std::log(0.18 / median);
}

inline void save_png_tonemapped(const EnvironmentImage& img, const std::string& path,
                                double exposure = 1.0) {
  if (exposure <= 0.0) throw std::invalid_argument("save_png_tonemapped: exposure must be > 0");
  const EnvironmentImage ldr = tone_map(img, std::log(exposure));
  PngImage png;
  png.width = ldr.width;
  png.height = ldr.height;
  png.channels = 3;
  png.data.resize(ldr.pixel_count() * 3);
  for (std::size_t i = 0; i < png.data.size(); ++i)
    png.data[i] = static_cast<std::uint8_t>(
        std::lround(std::clamp(static_cast<double>(ldr.pixels[i]), 0.0, 1.0) * 255.0));
  write_png(path, png);
}

inline double mse(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return (a - b).array().square().mean();
}

// 10 log10(peak^2 / MSE); +infinity when the images agree exactly.
inline double psnr(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double peak) {
  const double m = mse(a, b);
  if (m == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / m);
}

namespace detail {

inline Eigen::MatrixXd gaussian_filter_valid(const Eigen::MatrixXd& img, int radius,
                                             double sigma) {
  const int size = 2 * radius + 1;
  Eigen::VectorXd kernel(size);
  for (int i = 0; i < size; ++i) kernel(i) = std::exp(-0.5 * std::pow((i - radius) / sigma, 2));
  kernel /= kernel.sum();

  Eigen::MatrixXd rows(img.rows(), img.cols() - 2 * radius);
  for (Eigen::Index r = 0; r < img.rows(); ++r)
    for (Eigen::Index c = 0; c < rows.cols(); ++c)
      rows(r, c) = img.row(r).segment(c, size).dot(kernel);
  Eigen::MatrixXd out(img.rows() - 2 * radius, rows.cols());
  for (Eigen::Index c = 0; c < rows.cols(); ++c)
    for (Eigen::Index r = 0; r < out.rows(); ++r)
      out(r, c) = rows.col(c).segment(r, size).dot(kernel);
  return out;
}

}  // namespace detail

// SSIM on luminance images in [0, 1] with an 11x11 Gaussian window
// (sigma 1.5), averaged over the valid region.
inline double ssim(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument("ssim: shape mismatch");
  if (a.rows() < 11 || a.cols() < 11) throw std::invalid_argument("ssim: images smaller than window");
  const int radius = 5;
  const double sigma = 1.5;
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;

  const Eigen::MatrixXd mu_a = detail::gaussian_filter_valid(a, radius, sigma);
  const Eigen::MatrixXd mu_b = detail::gaussian_filter_valid(b, radius, sigma);
  const Eigen::MatrixXd a2 = detail::gaussian_filter_valid(a.cwiseProduct(a), radius, sigma);
  const Eigen::MatrixXd b2 = detail::gaussian_filter_valid(b.cwiseProduct(b), radius, sigma);
  const Eigen::MatrixXd ab = detail::gaussian_filter_valid(a.cwiseProduct(b), radius, sigma);

  const Eigen::ArrayXXd var_a = a2.array() - mu_a.array().square();
  const Eigen::ArrayXXd var_b = b2.array() - mu_b.array().square();
  const Eigen::ArrayXXd cov = ab.array() - (mu_a.array() * mu_b.array());
  const Eigen::ArrayXXd num =
      (2.0 * mu_a.array() * mu_b.array() + c1) * (2.0 * cov + c2);
  const Eigen::ArrayXXd den =
      (mu_a.array().square() + mu_b.array().square() + c1) * (var_a + var_b + c2);
  return (num / den).mean();
}

inline Eigen::MatrixXd luminance_matrix(const EnvironmentImage& img) {
  Eigen::MatrixXd out(img.height, img.width);
  for (int r = 0; r < img.height; ++r)
    for (int c = 0; c < img.width; ++c) out(r, c) = luminance(img.color(r, c));
  return out;
}

inline Eigen::MatrixXd log_radiance_matrix(const EnvironmentImage& img) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(img.pixel_count()), 3);
  for (std::size_t p = 0; p < img.pixel_count(); ++p)
    for (int ch = 0; ch < 3; ++ch)
      out(static_cast<Eigen::Index>(p), ch) =
          std::log(std::max(static_cast<double>(img.pixels[p * 3 + ch]), kLogClampFloor));
  return out;
}

// Tone-mapped PSNR: the ground truth is normalised to a display exposure and
// the prediction is scale-aligned to it in log space before both are
// tone-mapped (peak 1).
inline double psnr_ldr(const EnvironmentImage& pred, const EnvironmentImage& gt) {
  const double gt_offset = display_offset(gt);
  const Eigen::MatrixXd pl = log_radiance_matrix(pred);
  const Eigen::MatrixXd gl = log_radiance_matrix(gt);
  const double b = optimal_scale(pl, (gl.array() + gt_offset).matrix().eval());
  const EnvironmentImage ldr_pred = tone_map(pred, b);
  const EnvironmentImage ldr_gt = tone_map(gt, gt_offset);
  Eigen::MatrixXd a(static_cast<Eigen::Index>(ldr_pred.pixel_count()), 3);
  Eigen::MatrixXd g(static_cast<Eigen::Index>(ldr_gt.pixel_count()), 3);
  for (std::size_t p = 0; p < ldr_pred.pixel_count(); ++p)
    for (int ch = 0; ch < 3; ++ch) {
      a(static_cast<Eigen::Index>(p), ch) = ldr_pred.pixels[p * 3 + ch];
      g(static_cast<Eigen::Index>(p), ch) = ldr_gt.pixels[p * 3 + ch];
    }
  return psnr(a, g, 1.0);
}

// Log-space PSNR after optimal scale alignment; the peak is the dynamic
// range of the log ground truth. Invariant to prediction exposure.
inline double psnr_hdr_log(const EnvironmentImage& pred, const EnvironmentImage& gt) {
  const Eigen::MatrixXd pl = log_radiance_matrix(pred);
  const Eigen::MatrixXd gl = log_radiance_matrix(gt);
  const double b = optimal_scale(pl, gl);
  const double peak = gl.maxCoeff() - gl.minCoeff();
  return psnr((pl.array() + b).matrix(), gl, peak);
}

inline double ssim_ldr(const EnvironmentImage& pred, const EnvironmentImage& gt) {
  const double gt_offset = display_offset(gt);
  const double b =
      optimal_scale(log_radiance_matrix(pred),
                    (log_radiance_matrix(gt).array() + gt_offset).matrix().eval());
  return ssim(luminance_matrix(tone_map(pred, b)), luminance_matrix(tone_map(gt, gt_offset)));
}

// ---------------------------------------------------------------------------
// audits and experiment tables
// ---------------------------------------------------------------------------

// Max |f(R d, R Z) - f(d, Z)| over random draws; R ranges over the model's
// equivariance group (y-axis rotations, or all of SO(3) in so3 mode).
template <typename S>
double equivariance_audit(const FieldModel<S>& model, int trials, std::uint64_t seed) {
  Rng rng(seed);
  double worst = 0.0;
  for (int i = 0; i < trials; ++i) {
    Mat<S> z(3, model.config.latent_channels);
    for (Eigen::Index j = 0; j < z.size(); ++j) z.data()[j] = static_cast<S>(rng.normal());
    const Vec3 d = sample_direction(rng);
    const Mat3 r = model.config.mode == EquivarianceMode::so3
                       ? rotation_about_axis(sample_direction(rng), rng.uniform(0.0, 2 * M_PI))
                       : rotation_y(rng.uniform(0.0, 2 * M_PI));
    const auto a = field_forward(model, d, z);
    const auto b = field_forward(model, normalized(r * d), rotate_latent(z, r));
    worst = std::max(worst, static_cast<double>((a - b).cwiseAbs().maxCoeff()));
  }
  return worst;
}

struct MetricRow {
  std::string name;
  double psnr_ldr = 0.0;
  double psnr_hdr = 0.0;
  double ssim = 0.0;
};

struct MetricReport {
  std::vector<MetricRow> rows;
  MetricRow mean;
  double runtime_seconds = 0.0;
  std::string config_echo;

  void finalize() {
    mean = MetricRow{"mean", 0.0, 0.0, 0.0};
    if (rows.empty()) return;
    for (const MetricRow& r : rows) {
      mean.psnr_ldr += r.psnr_ldr;
      mean.psnr_hdr += r.psnr_hdr;
      mean.ssim += r.ssim;
    }
    mean.psnr_ldr /= static_cast<double>(rows.size());
    mean.psnr_hdr /= static_cast<double>(rows.size());
    mean.ssim /= static_cast<double>(rows.size());
  }
};

inline void write_metric_csv(const MetricReport& report, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f << "name,psnr_ldr,psnr_hdr,ssim\n";
  char line[256];
  for (const MetricRow& r : report.rows) {
    std::snprintf(line, sizeof line, "%s,%.6f,%.6f,%.6f\n", r.name.c_str(), r.psnr_ldr,
                  r.psnr_hdr, r.ssim);
    f << line;
  }
  std::snprintf(line, sizeof line, "mean,%.6f,%.6f,%.6f\n", report.mean.psnr_ldr,
                report.mean.psnr_hdr, report.mean.ssim);
  f << line;
}

inline void write_metric_markdown(const MetricReport& report, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f << "| name | PSNR-LDR | PSNR-HDR | SSIM |\n|---|---|---|---|\n";
  char line[256];
  auto emit = [&](const MetricRow& r) {
    std::snprintf(line, sizeof line, "| %s | %.2f | %.2f | %.4f |\n", r.name.c_str(), r.psnr_ldr,
                  r.psnr_hdr, r.ssim);
    f << line;
  };
  for (const MetricRow& r : report.rows) emit(r);
  emit(report.mean);
  f << "\nruntime: " << report.runtime_seconds << " s\n";
  if (!report.config_echo.empty()) f << "config: " << report.config_echo << "\n";
}

// GT / reconstruction / log-space error heat map stacked vertically.
inline void save_png_triptych(const EnvironmentImage& gt, const EnvironmentImage& recon,
                              const std::string& path) {
  if (gt.width != recon.width || gt.height != recon.height)
    throw std::invalid_argument("triptych: image sizes differ");
  const double gt_offset = display_offset(gt);
  const double b = optimal_scale(log_radiance_matrix(recon),
                                 (log_radiance_matrix(gt).array() + gt_offset).matrix().eval());
  const EnvironmentImage ldr_gt = tone_map(gt, gt_offset);
  const EnvironmentImage ldr_recon = tone_map(recon, b);

  PngImage png;
  png.width = gt.width;
  png.height = gt.height * 3;
  png.channels = 3;
  png.data.assign(static_cast<std::size_t>(png.width) * png.height * 3, 0);
  auto blit = [&png](const EnvironmentImage& img, int row0) {
    for (std::size_t i = 0; i < img.pixel_count() * 3; ++i)
      png.data[static_cast<std::size_t>(row0) * png.width * 3 + i] = static_cast<std::uint8_t>(
          std::lround(std::clamp(static_cast<double>(img.pixels[i]), 0.0, 1.0) * 255.0));
  };
  blit(ldr_gt, 0);
  blit(ldr_recon, gt.height);

  // heat map of |log error|, black -> red -> yellow -> white
  const Eigen::MatrixXd err =
      ((log_radiance_matrix(recon).array() + b) - log_radiance_matrix(gt).array())
          .abs()
          .rowwise()
          .mean();
  const double scale = std::max(err.maxCoeff(), 1e-12);
  for (std::size_t p = 0; p < gt.pixel_count(); ++p) {
    const double t = err(static_cast<Eigen::Index>(p), 0) / scale;
    const double r = std::clamp(3.0 * t, 0.0, 1.0);
    const double g = std::clamp(3.0 * t - 1.0, 0.0, 1.0);
    const double bl = std::clamp(3.0 * t - 2.0, 0.0, 1.0);
    const std::size_t at = (static_cast<std::size_t>(gt.height) * 2 * gt.width + p) * 3;
    png.data[at + 0] = static_cast<std::uint8_t>(std::lround(r * 255));
    png.data[at + 1] = static_cast<std::uint8_t>(std::lround(g * 255));
    png.data[at + 2] = static_cast<std::uint8_t>(std::lround(bl * 255));
  }
  write_png(path, png);
}

struct RotationFitRow {
  double angle_deg = 0.0;
  double alignment_error = 0.0;     // E with the fitted rotation
  double gt_rotation_error = 0.0;   // |R_gt Z_unrot - Z_rot| / |Z_rot|
};

// Fits latents to each image and to its azimuthally rotated copy, then
// explains the rotated latent as a rotation of the unrotated one.
template <typename S>
std::vector<RotationFitRow> rotation_fit_experiment(const FieldModel<S>& model,
                                                    const std::vector<EnvironmentImage>& images,
                                                    const std::vector<double>& angles_deg,
                                                    const FitConfig& fit_cfg) {
  std::vector<RotationFitRow> rows;
  std::vector<Mat<S>> unrot;
  unrot.reserve(images.size());
  for (const EnvironmentImage& img : images)
    unrot.push_back(fit_latent(model, img, fit_cfg).latent);

  for (double angle : angles_deg) {
    RotationFitRow row;
    row.angle_deg = angle;
    double e_acc = 0.0, gt_acc = 0.0;
    for (std::size_t i = 0; i < images.size(); ++i) {
      const int w = images[i].width;
      const int k = ((static_cast<int>(std::lround(angle / 360.0 * w)) % w) + w) % w;
      const double exact_angle = 2.0 * M_PI * k / w;
      const EnvironmentImage rotated = augment_az_rotate(images[i], k);
      const Mat<S> z_rot = fit_latent(model, rotated, fit_cfg).latent;
      const AlignmentResult res =
          rotation_alignment(unrot[i].template cast<double>(), z_rot.template cast<double>());
      e_acc += res.error;
      const Eigen::MatrixXd gt_pred =
          rotate_latent(unrot[i].template cast<double>().eval(), rotation_y(exact_angle));
      const double denom = z_rot.template cast<double>().norm();
      gt_acc += denom > 0.0 ? (gt_pred - z_rot.template cast<double>()).norm() / denom : 0.0;
    }
    row.alignment_error = e_acc / static_cast<double>(images.size());
    row.gt_rotation_error = gt_acc / static_cast<double>(images.size());
    rows.push_back(row);
  }
  return rows;
}

inline void write_rotation_table_csv(const std::vector<RotationFitRow>& rows,
                                     const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f << "angle_deg,alignment_error,gt_rotation_error\n";
  char line[128];
  for (const RotationFitRow& r : rows) {
    std::snprintf(line, sizeof line, "%.1f,%.6f,%.6f\n", r.angle_deg, r.alignment_error,
                  r.gt_rotation_error);
    f << line;
  }
}

}  // namespace lumifield
