#pragma once

// Spherical-harmonic and spherical-Gaussian environment representations with
// fitting, for like-for-like comparisons against the neural model.

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "lumifield/adam.hpp"
#include "lumifield/autodiff.hpp"
#include "lumifield/batch.hpp"
#include "lumifield/geometry.hpp"
#include "lumifield/image.hpp"
#include "lumifield/losses.hpp"
#include "lumifield/rng.hpp"

namespace lumifield {

// ---------------------------------------------------------------------------
// real spherical harmonics
// ---------------------------------------------------------------------------

namespace detail {

inline double legendre_assoc(int l, int m, double x) {
  double pmm = 1.0;
  if (m > 0) {
    const double somx2 = std::sqrt((1.0 - x) * (1.0 + x));
    double fact = 1.0;
    for (int i = 1; i <= m; ++i) {
      pmm *= -fact * somx2;
      fact += 2.0;
    }
  }
  if (l == m) return pmm;
  double pmmp1 = x * (2.0 * m + 1.0) * pmm;
  if (l == m + 1) return pmmp1;
  double pll = 0.0;
  for (int ll = m + 2; ll <= l; ++ll) {
    pll = (x * (2.0 * ll - 1.0) * pmmp1 - (ll + m - 1.0) * pmm) / (ll - m);
    pmm = pmmp1;
    pmmp1 = pll;
  }
  return pll;
}

inline double sh_normalization(int l, int m) {
  double num = 1.0, den = 1.0;
  for (int i = l - m + 1; i <= l + m; ++i) den *= i;
  num *= (2.0 * l + 1.0) / (4.0 * M_PI);
  return std::sqrt(num / den);
}

}  // namespace detail

// Orthonormal real SH basis evaluated at a unit direction (y-up: the polar
// angle is measured from +y, azimuth atan2(z, x)). Returns (lmax+1)^2 values
// indexed l*(l+1)+m.
inline Eigen::VectorXd sh_basis(const Vec3& d, int lmax) {
  if (!is_unit(d)) throw std::invalid_argument("sh_basis: direction must be unit");
  if (lmax < 0 || lmax > 9) throw std::invalid_argument("sh_basis: order must lie in [0, 9]");
  const double ct = std::clamp(d.y, -1.0, 1.0);
  const double theta = std::atan2(d.z, d.x);
  Eigen::VectorXd out((lmax + 1) * (lmax + 1));
  for (int l = 0; l <= lmax; ++l) {
    for (int m = -l; m <= l; ++m) {
      const int am = std::abs(m);
      const double k = detail::sh_normalization(l, am);
      const double p = detail::legendre_assoc(l, am, ct);
      double v;
      if (m == 0)
        v = k * p;
      else if (m > 0)
        v = std::sqrt(2.0) * k * std::cos(am * theta) * p;
      else
        v = std::sqrt(2.0) * k * std::sin(am * theta) * p;
      out(l * (l + 1) + m) = v;
    }
  }
  return out;
}

struct SHCoefficients {
  int lmax = 0;
  Eigen::MatrixXd coeffs;  // (lmax+1)^2 x 3

  int dim() const { return static_cast<int>(coeffs.size()); }
};

inline int sh_order_for_dim(int d) {
  switch (d) {
    case 27: return 2;
    case 108: return 5;
    case 147: return 6;
    case 300: return 9;
    default: {
      const int per_channel = d / 3;
      const int order = static_cast<int>(std::lround(std::sqrt(per_channel))) - 1;
      if (order < 0 || (order + 1) * (order + 1) * 3 != d)
        throw std::invalid_argument("no SH order matches dimensionality " + std::to_string(d));
      return order;
    }
  }
}

// SH basis at every pixel center of an H x W grid, (H*W) x (lmax+1)^2.
inline Eigen::MatrixXd sh_basis_grid(int height, int width, int lmax) {
  Eigen::MatrixXd basis(static_cast<Eigen::Index>(height) * width, (lmax + 1) * (lmax + 1));
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c)
      basis.row(static_cast<Eigen::Index>(r) * width + c) =
          sh_basis(pixel_to_direction(r, c, height, width), lmax).transpose();
  return basis;
}

// Discrete projection with solid-angle weights; exact for inputs that are
// band-limited at or below the fitted order.
inline SHCoefficients fit_sh(const EnvironmentImage& image, int lmax) {
  if (image.width <= 0 || image.height <= 0) throw std::invalid_argument("fit_sh: empty image");
  const Eigen::MatrixXd basis = sh_basis_grid(image.height, image.width, lmax);
  const std::vector<double> omega = equirect_solid_angles(image.height, image.width);
  SHCoefficients out;
  out.lmax = lmax;
  out.coeffs = Eigen::MatrixXd::Zero(basis.cols(), 3);
  for (Eigen::Index p = 0; p < basis.rows(); ++p) {
    const float* px = image.pixels.data() + static_cast<std::size_t>(p) * 3;
    const double w = omega[static_cast<std::size_t>(p)];
    for (int ch = 0; ch < 3; ++ch)
      out.coeffs.col(ch) += basis.row(p).transpose() * (static_cast<double>(px[ch]) * w);
  }
  return out;
}

inline Eigen::Vector3d evaluate_sh(const SHCoefficients& sh, const Vec3& d) {
  return sh.coeffs.transpose() * sh_basis(d, sh.lmax);
}

// Raw truncated-series values over a grid; may be negative (ringing).
inline Eigen::MatrixXd evaluate_sh_grid(const SHCoefficients& sh, int height, int width) {
  return sh_basis_grid(height, width, sh.lmax) * sh.coeffs;  // (H*W) x 3
}

inline EnvironmentImage rasterize_sh(const SHCoefficients& sh, int height, int width) {
  const Eigen::MatrixXd values = evaluate_sh_grid(sh, height, width);
  EnvironmentImage img = EnvironmentImage::zero(height, width);
  for (Eigen::Index p = 0; p < values.rows(); ++p)
    for (int ch = 0; ch < 3; ++ch)
      img.pixels[static_cast<std::size_t>(p) * 3 + ch] =
          std::max(0.0f, static_cast<float>(values(p, ch)));
  return img;
}

// ---------------------------------------------------------------------------
// spherical Gaussians
// ---------------------------------------------------------------------------

struct SGLobe {
  Eigen::Vector3d amplitude{0, 0, 0};  // non-negative RGB
  Vec3 axis{0, 1, 0};                  // unit
  double sharpness = 1.0;              // lambda >= 0
};

using SGLobes = std::vector<SGLobe>;

inline int sg_lobe_count_for_dim(int d) { return (d + 5) / 6; }  // 6 DoF per lobe

inline Eigen::Vector3d evaluate_sg(const SGLobes& lobes, const Vec3& d) {
  if (!is_unit(d)) throw std::invalid_argument("evaluate_sg: direction must be unit");
  Eigen::Vector3d acc = Eigen::Vector3d::Zero();
  for (const SGLobe& lobe : lobes)
    acc += lobe.amplitude * std::exp(lobe.sharpness * (dot(d, lobe.axis) - 1.0));
  return acc;
}

// Evenly distributed unit axes (golden-angle spiral).
inline std::vector<Vec3> fibonacci_sphere(int count) {
  std::vector<Vec3> axes;
  axes.reserve(static_cast<std::size_t>(count));
  const double golden = M_PI * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < count; ++i) {
    const double y = count == 1 ? 0.0 : 1.0 - 2.0 * i / (count - 1.0);
    const double r = std::sqrt(std::max(0.0, 1.0 - y * y));
    const double t = golden * i;
    axes.push_back(normalized({r * std::cos(t), y, r * std::sin(t)}));
  }
  return axes;
}

struct SGFitStats {
  int step = 0;
  double loss = 0.0;
};

struct SGFitResult {
  SGLobes lobes;
  std::vector<SGFitStats> history;
};

// Adam on log-space MSE. Amplitudes and sharpness stay positive through an
// exponential parameterization; axes renormalized after every step.
inline SGFitResult fit_sg(const EnvironmentImage& image, int lobe_count, int steps,
                          std::uint64_t seed = 0, int batch_size = 2048) {
  if (lobe_count < 1) throw std::invalid_argument("fit_sg: need at least one lobe");
  if (steps < 1) throw std::invalid_argument("fit_sg: steps must be >= 1");
  using S = double;

  // init: Fibonacci axes, image-mean amplitudes, lambda = 10
  Eigen::Vector3d mean_color = Eigen::Vector3d::Zero();
  for (std::size_t p = 0; p < image.pixel_count(); ++p)
    for (int ch = 0; ch < 3; ++ch) mean_color(ch) += image.pixels[p * 3 + ch];
  mean_color /= static_cast<double>(image.pixel_count());

  Mat<S> log_amp(lobe_count, 3);
  for (int k = 0; k < lobe_count; ++k)
    for (int ch = 0; ch < 3; ++ch)
      log_amp(k, ch) = std::log(std::max(mean_color(ch) / lobe_count, 1e-6));
  Mat<S> axes(3, lobe_count);
  const auto fib = fibonacci_sphere(lobe_count);
  for (int k = 0; k < lobe_count; ++k) axes.col(k) << fib[k].x, fib[k].y, fib[k].z;
  Mat<S> log_sharp = Mat<S>::Constant(1, lobe_count, std::log(10.0));

  Rng rng(seed);
  AdamOptimizer<S> adam;
  SGFitResult result;
  result.history.reserve(static_cast<std::size_t>(steps));

  for (int step = 0; step < steps; ++step) {
    const TrainingBatch batch = sample_training_batch({image}, batch_size, rng);
    const int p = batch.sample_count();
    Mat<S> dirs(p, 3), target_log(p, 3);
    for (int i = 0; i < p; ++i) {
      dirs.row(i) = batch.directions.col(i).transpose();
      target_log.row(i) = batch.log_colors.col(i).transpose();
    }

    Tape<S> tape;
    Var<S> v_axes = tape.leaf(axes, true);
    Var<S> v_log_amp = tape.leaf(log_amp, true);
    Var<S> v_log_sharp = tape.leaf(log_sharp, true);
    Var<S> dot = matmul(tape.constant(dirs), v_axes);                       // P x K
    Var<S> expo = mul_rowvec(add_const(dot, S(-1)), exp_(v_log_sharp));     // lambda (dot - 1)
    Var<S> pred_lin = matmul(exp_(expo), exp_(v_log_amp));                  // P x 3
    Var<S> pred_log = log_(clamp_min(pred_lin, S(kLogClampFloor)));
    Var<S> loss = mean(square(sub(pred_log, tape.constant(target_log))));

    const double loss_value = tape.scalar_value(loss);
    if (!std::isfinite(loss_value))
      throw std::runtime_error("fit_sg: non-finite loss at step " + std::to_string(step));
    tape.backward(loss);

    std::vector<Mat<S>*> params{&axes, &log_amp, &log_sharp};
    std::vector<Mat<S>> grads{tape.grad(v_axes), tape.grad(v_log_amp), tape.grad(v_log_sharp)};
    adam.step(params, grads, 5e-2);
    for (int k = 0; k < lobe_count; ++k) {
      const double norm = axes.col(k).norm();
      if (norm > 0.0) axes.col(k) /= norm;
    }
    result.history.push_back(SGFitStats{step, loss_value});
  }

  result.lobes.resize(static_cast<std::size_t>(lobe_count));
  for (int k = 0; k < lobe_count; ++k) {
    result.lobes[static_cast<std::size_t>(k)].amplitude = log_amp.row(k).array().exp();
    result.lobes[static_cast<std::size_t>(k)].axis = {axes(0, k), axes(1, k), axes(2, k)};
    result.lobes[static_cast<std::size_t>(k)].sharpness = std::exp(log_sharp(0, k));
  }
  return result;
}

inline EnvironmentImage rasterize_sg(const SGLobes& lobes, int height, int width) {
  EnvironmentImage img = EnvironmentImage::zero(height, width);
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c) {
      const Eigen::Vector3d v = evaluate_sg(lobes, pixel_to_direction(r, c, height, width));
      img.set_color(r, c, {static_cast<float>(std::max(0.0, v(0))),
                           static_cast<float>(std::max(0.0, v(1))),
                           static_cast<float>(std::max(0.0, v(2)))});
    }
  return img;
}

}  // namespace lumifield
