#pragma once

// Normalized Blinn-Phong environment shading of a unit sphere under an
// orthographic camera, differentiable with respect to the environment
// radiance, plus inverse lighting recovery through the neural field or an
// SH environment.

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "lumifield/adam.hpp"
#include "lumifield/autodiff.hpp"
#include "lumifield/baselines.hpp"
#include "lumifield/field.hpp"
#include "lumifield/geometry.hpp"
#include "lumifield/image.hpp"
#include "lumifield/losses.hpp"

namespace lumifield {

// Energy normalization of the specular lobe.
inline double blinn_phong_zeta(double n) {
  return (n + 2.0) / (4.0 * M_PI * (2.0 - std::exp(-n / 2.0)));
}

struct Material {
  Eigen::Vector3d diffuse{0.5, 0.5, 0.5};  // K_d
  double specular = 0.5;                   // K_s
  double shininess = 32.0;                 // n

  double zeta() const { return blinn_phong_zeta(shininess); }

  void validate() const {
    if (diffuse.minCoeff() < 0.0 || diffuse.maxCoeff() > 1.0)
      throw std::invalid_argument("material: diffuse must lie in [0, 1]^3");
    if (specular < 0.0 || specular > 1.0)
      throw std::invalid_argument("material: specular weight must lie in [0, 1]");
    if (!(shininess > 0.0)) throw std::invalid_argument("material: shininess must be positive");
  }
};

// Fixed scene geometry: per-pixel normals of the visible sphere and the
// environment grid with solid angles and half vectors for the +z view.
struct RenderGeometry {
  int render_res = 128;
  int env_height = 64;
  int env_width = 128;
  Eigen::MatrixXd normals;       // Npix x 3
  std::vector<int> pixel_index;  // into the res*res raster
  Eigen::MatrixXd env_dirs;      // Ndir x 3
  Eigen::MatrixXd half_dirs;     // Ndir x 3: normalize(omega + view)
  Eigen::VectorXd omega;         // Ndir solid angles

  int visible_count() const { return static_cast<int>(normals.rows()); }
  int env_dir_count() const { return static_cast<int>(env_dirs.rows()); }

  static RenderGeometry make(int render_res, int env_height) {
    if (render_res < 2 || env_height < 2)
      throw std::invalid_argument("render geometry: resolutions too small");
    RenderGeometry g;
    g.render_res = render_res;
    g.env_height = env_height;
    g.env_width = 2 * env_height;

    std::vector<Eigen::RowVector3d> normals;
    for (int i = 0; i < render_res; ++i)
      for (int j = 0; j < render_res; ++j) {
        const double x = 2.0 * (j + 0.5) / render_res - 1.0;
        const double y = 1.0 - 2.0 * (i + 0.5) / render_res;
        const double r2 = x * x + y * y;
        if (r2 > 1.0) continue;
        normals.emplace_back(x, y, std::sqrt(1.0 - r2));
        g.pixel_index.push_back(i * render_res + j);
      }
    g.normals.resize(static_cast<Eigen::Index>(normals.size()), 3);
    for (std::size_t k = 0; k < normals.size(); ++k)
      g.normals.row(static_cast<Eigen::Index>(k)) = normals[k];

    const Eigen::Index ndir = static_cast<Eigen::Index>(g.env_height) * g.env_width;
    g.env_dirs.resize(ndir, 3);
    g.half_dirs.resize(ndir, 3);
    g.omega.resize(ndir);
    const std::vector<double> solid = equirect_solid_angles(g.env_height, g.env_width);
    for (int r = 0; r < g.env_height; ++r)
      for (int c = 0; c < g.env_width; ++c) {
        const Eigen::Index q = static_cast<Eigen::Index>(r) * g.env_width + c;
        const Vec3 d = pixel_to_direction(r, c, g.env_height, g.env_width);
        g.env_dirs.row(q) << d.x, d.y, d.z;
        const Vec3 h = normalized({d.x, d.y, d.z + 1.0});  // view is +z
        g.half_dirs.row(q) << h.x, h.y, h.z;
        g.omega(q) = solid[static_cast<std::size_t>(q)];
      }
    return g;
  }
};

namespace detail {

// out[p] = sum_q (kd/pi * max(0, n.w) + Ks*zeta * max(0, n.h)^n) * omega_q * env[q]
// Kernels are recomputed in pixel chunks; transpose_kernel applies W^T
// instead (the adjoint with respect to the environment).
template <typename S>
Mat<S> shade_apply(const RenderGeometry& g, const Material& mat, const Mat<S>& input,
                   bool transpose_kernel) {
  const Eigen::Index npix = g.normals.rows();
  const Eigen::Index ndir = g.env_dirs.rows();
  if (!transpose_kernel && (input.rows() != ndir || input.cols() != 3))
    throw std::invalid_argument("shade: environment must be Ndir x 3");
  if (transpose_kernel && (input.rows() != npix || input.cols() != 3))
    throw std::invalid_argument("shade adjoint: input must be Npix x 3");

  const Mat<S> normals = g.normals.cast<S>();
  const Mat<S> dirs_t = (g.env_dirs.transpose()).cast<S>();        // 3 x Ndir
  const Mat<S> half_t = (g.half_dirs.transpose()).cast<S>();       // 3 x Ndir
  const Eigen::Array<S, 1, Eigen::Dynamic> omega = g.omega.transpose().cast<S>().array();
  const S ks_zeta = static_cast<S>(mat.specular * mat.zeta());
  const S n_exp = static_cast<S>(mat.shininess);
  Eigen::Array<S, 1, 3> kd_over_pi;
  for (int ch = 0; ch < 3; ++ch) kd_over_pi(ch) = static_cast<S>(mat.diffuse(ch) / M_PI);

  Mat<S> out = Mat<S>::Zero(transpose_kernel ? ndir : npix, 3);
  const Eigen::Index chunk = 256;
  for (Eigen::Index p0 = 0; p0 < npix; p0 += chunk) {
    const Eigen::Index rows = std::min(chunk, npix - p0);
    const auto nb = normals.middleRows(p0, rows);
    // diffuse kernel: max(0, n . w) * omega
    Mat<S> wd = (nb * dirs_t).cwiseMax(S(0));
    wd.array().rowwise() *= omega;
    // specular kernel: max(0, n . h)^n * omega via exp(n log x)
    Mat<S> ws = ((nb * half_t).cwiseMax(S(0)).array().log() * n_exp).exp().matrix();
    ws.array().rowwise() *= omega;
    if (!transpose_kernel) {
      const Mat<S> a = wd * input;  // rows x 3
      const Mat<S> b = ws * input;
      out.middleRows(p0, rows) =
          (a.array().rowwise() * kd_over_pi).matrix() + b * ks_zeta;
    } else {
      const auto gin = input.middleRows(p0, rows);
      out.noalias() += wd.transpose() * (gin.array().rowwise() * kd_over_pi).matrix();
      out.noalias() += ws.transpose() * (gin * ks_zeta);
    }
  }
  return out;
}

}  // namespace detail

// Plain shading of all visible pixels from an environment matrix (Ndir x 3).
template <typename S>
Mat<S> shade_visible(const RenderGeometry& g, const Material& mat, const Mat<S>& env) {
  mat.validate();
  return detail::shade_apply<S>(g, mat, env, false);
}

// Differentiable shading on the tape.
template <typename S>
Var<S> shade_env(Tape<S>& tape, Var<S> env, const RenderGeometry* geometry, const Material& mat) {
  mat.validate();
  const bool ng = tape.needs_grad(env.id);
  Var<S> r = tape.emplace(detail::shade_apply<S>(*geometry, mat, tape.value(env), false), ng);
  if (ng) {
    Tape<S>* tp = &tape;
    const int ei = env.id, ri = r.id;
    tape.set_backprop(ri, [tp, ei, ri, geometry, mat] {
      tp->accumulate(ei, detail::shade_apply<S>(*geometry, mat, tp->adj(ri), true));
    });
  }
  return r;
}

// Reference shader for one surface point and an arbitrary view direction;
// sums over the environment raster directly.
inline Rgb shade(const Vec3& normal, const Vec3& view, const EnvironmentImage& env,
                 const Material& mat) {
  if (!is_unit(normal) || !is_unit(view))
    throw std::invalid_argument("shade: normal and view must be unit");
  mat.validate();
  const std::vector<double> omega = equirect_solid_angles(env.height, env.width);
  const double ks_zeta = mat.specular * mat.zeta();
  double acc[3] = {0, 0, 0};
  for (int r = 0; r < env.height; ++r)
    for (int c = 0; c < env.width; ++c) {
      const Vec3 w = pixel_to_direction(r, c, env.height, env.width);
      const double cosine = std::max(0.0, dot(normal, w));
      const Vec3 h = normalized(w + view);
      const double spec = std::pow(std::max(0.0, dot(normal, h)), mat.shininess);
      const double dw = omega[static_cast<std::size_t>(r) * env.width + c];
      const float* px = env.pixel(r, c);
      for (int ch = 0; ch < 3; ++ch)
        acc[ch] += (mat.diffuse(ch) / M_PI * cosine + ks_zeta * spec) * dw * px[ch];
    }
  return {static_cast<float>(acc[0]), static_cast<float>(acc[1]), static_cast<float>(acc[2])};
}

inline Eigen::MatrixXd env_image_to_matrix(const EnvironmentImage& env) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(env.pixel_count()), 3);
  for (std::size_t p = 0; p < env.pixel_count(); ++p)
    for (int ch = 0; ch < 3; ++ch)
      m(static_cast<Eigen::Index>(p), ch) = env.pixels[p * 3 + ch];
  return m;
}

// Renders the scene into a res x res raster; background stays zero.
inline EnvironmentImage render_from_env(const RenderGeometry& g, const Material& mat,
                                        const EnvironmentImage& env, double exposure = 1.0) {
  if (env.height != g.env_height || env.width != g.env_width)
    throw std::invalid_argument("render_from_env: environment size does not match geometry");
  const Eigen::MatrixXd visible =
      shade_visible<double>(g, mat, (env_image_to_matrix(env) * exposure).eval());
  EnvironmentImage out = EnvironmentImage::zero(g.render_res, g.render_res);
  for (int k = 0; k < g.visible_count(); ++k) {
    const int pix = g.pixel_index[static_cast<std::size_t>(k)];
    for (int ch = 0; ch < 3; ++ch)
      out.pixels[static_cast<std::size_t>(pix) * 3 + ch] =
          static_cast<float>(std::max(0.0, visible(k, ch)));
  }
  return out;
}

inline Eigen::MatrixXd visible_pixels(const RenderGeometry& g, const EnvironmentImage& render) {
  Eigen::MatrixXd m(g.visible_count(), 3);
  for (int k = 0; k < g.visible_count(); ++k) {
    const int pix = g.pixel_index[static_cast<std::size_t>(k)];
    for (int ch = 0; ch < 3; ++ch) m(k, ch) = render.pixels[static_cast<std::size_t>(pix) * 3 + ch];
  }
  return m;
}

// ---------------------------------------------------------------------------
// inverse lighting
// ---------------------------------------------------------------------------

struct InverseConfig {
  LossWeights<double> weights{1e2, 1.0, 1e-3};
  double lr = 1e-2;
  int steps = 200;
  std::uint64_t seed = 0;

  void validate() const {
    if (steps < 1) throw std::invalid_argument("invert: steps must be >= 1");
    if (lr <= 0.0) throw std::invalid_argument("invert: learning rate must be positive");
    weights.validate();
  }
};

struct InverseStepStats {
  int step = 0;
  double total = 0.0;
  double mse = 0.0;
  double cosine = 0.0;
  double prior = 0.0;
};

template <typename S>
struct InverseResult {
  Mat<S> latent;          // 3 x N
  double exposure = 1.0;  // optimised linear scale
  std::vector<InverseStepStats> history;
};

// Recovers (Z, exposure) so that the re-rendered sphere matches the target.
// target_visible holds the Npix x 3 linear pixels of the observed render.
template <typename S>
InverseResult<S> invert_lighting(const Eigen::MatrixXd& target_visible,
                                 const RenderGeometry& geometry, const Material& mat,
                                 const FieldModel<S>& model, const InverseConfig& cfg) {
  cfg.validate();
  model.validate_finite();
  if (target_visible.rows() != geometry.visible_count() || target_visible.cols() != 3)
    throw std::invalid_argument("invert_lighting: target must be Npix x 3");

  const Eigen::Matrix3Xd env_dirs = geometry.env_dirs.transpose();
  const Mat<S> target = target_visible.cast<S>();
  const LossWeights<S> w{static_cast<S>(cfg.weights.rho), static_cast<S>(cfg.weights.gamma),
                         static_cast<S>(cfg.weights.beta)};

  InverseResult<S> result;
  result.latent = Mat<S>::Zero(3, model.config.latent_channels);
  Mat<S> log_exposure = Mat<S>::Zero(1, 1);
  AdamOptimizer<S> adam;
  result.history.reserve(static_cast<std::size_t>(cfg.steps));

  for (int step = 0; step < cfg.steps; ++step) {
    Tape<S> tape;
    FieldVars<S> fvars = bind_field(tape, model, false);
    Var<S> z = tape.leaf(result.latent, true);
    Var<S> log_e = tape.leaf(log_exposure, true);
    Var<S> log_env = field_forward_graph(tape, fvars, env_dirs,
                                         {LatentGroup{0, geometry.env_dir_count()}}, {z});
    Var<S> env_lin = exp_(add_broadcast_scalar(log_env, log_e));
    Var<S> rendered = shade_env(tape, env_lin, &geometry, mat);

    Var<S> mse = mean(square(sub(rendered, tape.constant(target))));
    Var<S> co = cosine_loss(tape, rendered, target);
    Var<S> prior = prior_loss<S>(tape, {z});
    Var<S> loss = add(add(scale(mse, w.rho), scale(co, w.gamma)), scale(prior, w.beta));

    const double loss_value = static_cast<double>(tape.scalar_value(loss));
    if (!std::isfinite(loss_value))
      throw std::runtime_error("invert_lighting: non-finite loss at step " + std::to_string(step));
    tape.backward(loss);

    std::vector<Mat<S>*> params{&result.latent, &log_exposure};
    std::vector<Mat<S>> grads{tape.grad(z), tape.grad(log_e)};
    adam.step(params, grads, cfg.lr);

    result.history.push_back(InverseStepStats{step, loss_value,
                                              static_cast<double>(tape.scalar_value(mse)),
                                              static_cast<double>(tape.scalar_value(co)),
                                              static_cast<double>(tape.scalar_value(prior))});
  }
  result.exposure = std::exp(static_cast<double>(log_exposure(0, 0)));
  return result;
}

struct ShInverseResult {
  SHCoefficients coeffs;
  std::vector<InverseStepStats> history;
};

// Same pipeline with an SH environment; the coefficients absorb the exposure
// scale and no latent prior applies.
inline ShInverseResult invert_lighting_sh(const Eigen::MatrixXd& target_visible,
                                          const RenderGeometry& geometry, const Material& mat,
                                          int lmax, const InverseConfig& cfg) {
  cfg.validate();
  if (target_visible.rows() != geometry.visible_count() || target_visible.cols() != 3)
    throw std::invalid_argument("invert_lighting_sh: target must be Npix x 3");
  using S = double;
  const Eigen::MatrixXd basis = sh_basis_grid(geometry.env_height, geometry.env_width, lmax);
  const Mat<S> target = target_visible;

  ShInverseResult result;
  result.coeffs.lmax = lmax;
  result.coeffs.coeffs = Eigen::MatrixXd::Zero(basis.cols(), 3);
  AdamOptimizer<S> adam;
  result.history.reserve(static_cast<std::size_t>(cfg.steps));

  for (int step = 0; step < cfg.steps; ++step) {
    Tape<S> tape;
    Var<S> coeffs = tape.leaf(result.coeffs.coeffs, true);
    Var<S> env_lin = matmul(tape.constant(basis), coeffs);
    Var<S> rendered = shade_env(tape, env_lin, &geometry, mat);
    Var<S> mse = mean(square(sub(rendered, tape.constant(target))));
    Var<S> co = cosine_loss(tape, rendered, target);
    Var<S> loss = add(scale(mse, static_cast<S>(cfg.weights.rho)),
                      scale(co, static_cast<S>(cfg.weights.gamma)));

    const double loss_value = tape.scalar_value(loss);
    if (!std::isfinite(loss_value))
      throw std::runtime_error("invert_lighting_sh: non-finite loss at step " +
                               std::to_string(step));
    tape.backward(loss);

    std::vector<Mat<S>*> params{&result.coeffs.coeffs};
    std::vector<Mat<S>> grads{tape.grad(coeffs)};
    adam.step(params, grads, cfg.lr);

    result.history.push_back(InverseStepStats{step, loss_value,
                                              static_cast<double>(tape.scalar_value(mse)),
                                              static_cast<double>(tape.scalar_value(co)), 0.0});
  }
  return result;
}

}  // namespace lumifield
