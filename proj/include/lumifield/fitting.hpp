#pragma once

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "lumifield/adam.hpp"
#include "lumifield/batch.hpp"
#include "lumifield/field.hpp"
#include "lumifield/image.hpp"
#include "lumifield/losses.hpp"
#include "lumifield/rng.hpp"

namespace lumifield {

struct FitConfig {
  int steps = 2500;
  double lr_start = 1e-1;
  double lr_end = 1e-7;
  LossWeights<double> weights{1.0, 1.0, 0.0};  // no KLD term at fit time
  int batch_size = 1024;
  std::uint64_t seed = 0;

  void validate() const {
    if (steps < 1) throw std::invalid_argument("fit: steps must be >= 1");
    if (!(lr_end < lr_start) || lr_start <= 0.0 || lr_end <= 0.0)
      throw std::invalid_argument("fit: learning rates must satisfy 0 < lr_end < lr_start");
    if (batch_size < 1) throw std::invalid_argument("fit: batch size must be >= 1");
    weights.validate();
  }
};

// Exponential decay from lr_start to lr_end over the run; steps are 0-based.
inline double fit_lr_schedule(int step, const FitConfig& cfg) {
  const double t = static_cast<double>(step) / cfg.steps;
  return cfg.lr_start * std::pow(cfg.lr_end / cfg.lr_start, t);
}

struct FitStepStats {
  int step = 0;
  double lr = 0.0;
  double total = 0.0;
  double scale_inv = 0.0;
  double cosine = 0.0;
};

template <typename S>
struct FitResult {
  Mat<S> latent;  // 3 x N point estimate
  std::vector<FitStepStats> history;
};

// Optimizes a latent code against an observed (possibly masked) environment
// with the decoder held static. The latent starts at zero, the mean
// environment.
template <typename S>
FitResult<S> fit_latent(const FieldModel<S>& model, const EnvironmentImage& image,
                        const FitConfig& cfg) {
  cfg.validate();
  image.validate();
  model.validate_finite();
  if (image.has_mask()) {
    bool any = false;
    for (std::uint8_t m : image.mask)
      if (m) {
        any = true;
        break;
      }
    if (!any) throw std::invalid_argument("fit_latent: mask hides the whole image");
  }

  const int n = model.config.latent_channels;
  FitResult<S> result;
  result.latent = Mat<S>::Zero(3, n);
  result.history.reserve(static_cast<std::size_t>(cfg.steps));

  Rng rng(cfg.seed);
  AdamOptimizer<S> adam;
  const LossWeights<S> w{static_cast<S>(cfg.weights.rho), static_cast<S>(cfg.weights.gamma),
                         S(0)};
  const std::vector<EnvironmentImage> images{image};

  for (int step = 0; step < cfg.steps; ++step) {
    const TrainingBatch batch = sample_training_batch(images, cfg.batch_size, rng);
    const int p = batch.sample_count();
    Mat<S> targets(p, 3);
    for (int i = 0; i < p; ++i)
      targets.row(i) = batch.log_colors.col(i).transpose().cast<S>();

    Tape<S> tape;
    FieldVars<S> fvars = bind_field(tape, model, false);
    Var<S> z = tape.leaf(result.latent, true);
    Var<S> pred = field_forward_graph(tape, fvars, batch.directions, {LatentGroup{0, p}}, {z});
    Var<S> si = scale_invariant_loss(tape, pred, targets);
    Var<S> co = cosine_loss(tape, pred, targets);
    Var<S> loss = add(scale(si, w.rho), scale(co, w.gamma));

    const double loss_value = static_cast<double>(tape.scalar_value(loss));
    if (!std::isfinite(loss_value))
      throw std::runtime_error("fit_latent: non-finite loss at step " + std::to_string(step));
    tape.backward(loss);

    const double lr = fit_lr_schedule(step, cfg);
    std::vector<Mat<S>*> params{&result.latent};
    std::vector<Mat<S>> grads{tape.grad(z)};
    adam.step(params, grads, lr);

    result.history.push_back(FitStepStats{step, lr, loss_value,
                                          static_cast<double>(tape.scalar_value(si)),
                                          static_cast<double>(tape.scalar_value(co))});
  }
  return result;
}

// Ordinary least squares against a unit regressor in log space: the optimal
// additive offset is the mean difference over observed entries. The aligned
// prediction is pred_log + b.
inline double optimal_scale(const Eigen::MatrixXd& pred_log, const Eigen::MatrixXd& target_log) {
  if (pred_log.size() == 0) throw std::invalid_argument("optimal_scale: empty input");
  if (pred_log.rows() != target_log.rows() || pred_log.cols() != target_log.cols())
    throw std::invalid_argument("optimal_scale: shape mismatch");
  return (target_log - pred_log).mean();
}

// Column-masked variant for 3 x P layouts (mask entry per column).
inline double optimal_scale(const Eigen::MatrixXd& pred_log, const Eigen::MatrixXd& target_log,
                            const std::vector<std::uint8_t>& column_mask) {
  if (pred_log.rows() != target_log.rows() || pred_log.cols() != target_log.cols())
    throw std::invalid_argument("optimal_scale: shape mismatch");
  if (column_mask.size() != static_cast<std::size_t>(pred_log.cols()))
    throw std::invalid_argument("optimal_scale: mask length must match columns");
  double acc = 0.0;
  long count = 0;
  for (Eigen::Index c = 0; c < pred_log.cols(); ++c) {
    if (!column_mask[static_cast<std::size_t>(c)]) continue;
    acc += (target_log.col(c) - pred_log.col(c)).sum();
    count += pred_log.rows();
  }
  if (count == 0) throw std::invalid_argument("optimal_scale: no observed samples");
  return acc / static_cast<double>(count);
}

template <typename S>
Mat<S> interpolate(const Mat<S>& za, const Mat<S>& zb, double t) {
  if (za.rows() != zb.rows() || za.cols() != zb.cols())
    throw std::invalid_argument("interpolate: latent shapes differ");
  if (t < 0.0 || t > 1.0) throw std::invalid_argument("interpolate: t must lie in [0, 1]");
  return (S(1) - static_cast<S>(t)) * za + static_cast<S>(t) * zb;
}

// vec(Z) ~ N(0, I_{3N})
template <typename S>
Mat<S> sample_prior(int latent_channels, Rng& rng) {
  Mat<S> z(3, latent_channels);
  for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = static_cast<S>(rng.normal());
  return z;
}

struct AlignmentResult {
  Eigen::Matrix3d m;       // unconstrained least-squares map
  Eigen::Matrix3d r;       // nearest rotation to m
  double error = 0.0;      // |R Z_unrot - Z_rot|_F / |Z_rot|_F
  bool used_pseudo_inverse = false;
};

// Least-squares M minimizing |M Z_unrot - Z_rot|_F, projected to the nearest
// rotation via SVD with determinant correction.
inline AlignmentResult rotation_alignment(const Eigen::MatrixXd& z_unrot,
                                          const Eigen::MatrixXd& z_rot) {
  if (z_unrot.rows() != 3 || z_rot.rows() != 3 || z_unrot.cols() != z_rot.cols())
    throw std::invalid_argument("rotation_alignment: latents must be 3 x N with matching N");

  AlignmentResult out;
  const Eigen::Matrix3d gram = z_unrot * z_unrot.transpose();
  Eigen::JacobiSVD<Eigen::Matrix3d> gram_svd(gram, Eigen::ComputeFullU | Eigen::ComputeFullV);
  gram_svd.setThreshold(1e-10);
  out.used_pseudo_inverse = gram_svd.rank() < 3;
  const Eigen::Matrix3d gram_pinv =
      gram_svd.matrixV() *
      (gram_svd.singularValues().array() > gram_svd.threshold() * gram_svd.singularValues()(0))
          .select(gram_svd.singularValues().array().inverse(), 0.0)
          .matrix()
          .asDiagonal() *
      gram_svd.matrixU().transpose();
  out.m = z_rot * z_unrot.transpose() * gram_pinv;

  Eigen::JacobiSVD<Eigen::Matrix3d> svd(out.m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d sign = Eigen::Matrix3d::Identity();
  sign(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  out.r = svd.matrixU() * sign * svd.matrixV().transpose();

  const double denom = z_rot.norm();
  out.error = denom > 0.0 ? (out.r * z_unrot - z_rot).norm() / denom : 0.0;
  return out;
}

}  // namespace lumifield
