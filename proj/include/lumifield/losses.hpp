#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "lumifield/autodiff.hpp"

namespace lumifield {

template <typename S>
struct LossWeights {
  S rho = S(1);     // scale-invariant / MSE weight
  S gamma = S(1);   // cosine weight
  S beta = S(1e-6); // KLD or prior weight

  void validate() const {
    if (rho < S(0) || gamma < S(0) || beta < S(0))
      throw std::invalid_argument("loss weights must be non-negative");
  }
};

// ---------------------------------------------------------------------------
// plain (non-tape) reductions, usable as metric oracles
// ---------------------------------------------------------------------------

// Population variance of the residuals pooled over every entry (M = 3P
// channel-samples for P x 3 inputs). Invariant to a constant shift of either
// argument, i.e. to a global exposure scale in linear space.
template <typename S>
S scale_invariant_loss(const Mat<S>& pred_log, const Mat<S>& target_log) {
  if (pred_log.size() == 0) throw std::invalid_argument("scale_invariant_loss: empty input");
  detail::check_same_shape(pred_log, target_log, "scale_invariant_loss");
  const Mat<S> r = pred_log - target_log;
  const S m = static_cast<S>(r.size());
  const S sum_sq = r.array().square().sum();
  const S s = r.sum();
  return sum_sq / m - (s / m) * (s / m);
}

// 1 - mean cosine similarity of per-sample rows (P x 3), norms clamped.
template <typename S>
S cosine_loss(const Mat<S>& pred, const Mat<S>& target) {
  if (pred.rows() == 0) throw std::invalid_argument("cosine_loss: empty input");
  detail::check_same_shape(pred, target, "cosine_loss");
  S acc = S(0);
  for (Eigen::Index i = 0; i < pred.rows(); ++i) {
    const S pn = std::max(pred.row(i).norm(), S(1e-8));
    const S tn = std::max(target.row(i).norm(), S(1e-8));
    acc += pred.row(i).dot(target.row(i)) / (pn * tn);
  }
  return S(1) - acc / static_cast<S>(pred.rows());
}

template <typename S>
S kld_loss(const Mat<S>& mu, const Mat<S>& logvar) {
  detail::check_same_shape(mu, logvar, "kld_loss");
  const Eigen::Index dim = mu.cols();
  const auto inner =
      (S(1) + logvar.array() - mu.array().square() - logvar.array().exp()).rowwise().sum();
  return -inner.sum() / (S(2) * static_cast<S>(dim));
}

template <typename S>
S prior_loss(const std::vector<Mat<S>>& latents) {
  if (latents.empty()) throw std::invalid_argument("prior_loss: need at least one latent");
  S acc = S(0);
  for (const Mat<S>& z : latents) acc += z.array().square().sum();
  return acc / static_cast<S>(latents.size());
}

// ---------------------------------------------------------------------------
// tape versions
// ---------------------------------------------------------------------------

template <typename S>
Var<S> scale_invariant_loss(Tape<S>& tape, Var<S> pred_log, const Mat<S>& target_log) {
  if (target_log.size() == 0) throw std::invalid_argument("scale_invariant_loss: empty target");
  Var<S> r = sub(pred_log, tape.constant(target_log));
  return sub(mean(square(r)), square(mean(r)));
}

template <typename S>
Var<S> cosine_loss(Tape<S>& tape, Var<S> pred, const Mat<S>& target) {
  if (target.rows() == 0) throw std::invalid_argument("cosine_loss: empty target");
  Var<S> num = rowsum(mul(pred, tape.constant(target)));                      // P x 1
  Var<S> pn = sqrt_(clamp_min(rowsum(square(pred)), S(1e-16)));               // P x 1
  Mat<S> tn(target.rows(), 1);
  for (Eigen::Index i = 0; i < target.rows(); ++i)
    tn(i, 0) = std::max(target.row(i).norm(), S(1e-8));
  Var<S> den = mul_colvec(pn, tape.constant(tn));
  // den holds |pred| * |target| per row; divide and average
  Var<S> cosangle = div(num, den);
  return add_const(neg(mean(cosangle)), S(1));
}

template <typename S>
Var<S> kld_loss(Tape<S>& tape, Var<S> mu, Var<S> logvar) {
  const Eigen::Index dim = tape.value(mu).cols();
  Var<S> inner = add_const(sub(sub(logvar, square(mu)), exp_(logvar)), S(1));
  return scale(sum(inner), S(-0.5) / static_cast<S>(dim));
}

template <typename S>
Var<S> prior_loss(Tape<S>& tape, const std::vector<Var<S>>& latents) {
  if (latents.empty()) throw std::invalid_argument("prior_loss: need at least one latent");
  Var<S> acc = sum(square(latents[0]));
  for (std::size_t i = 1; i < latents.size(); ++i) acc = add(acc, sum(square(latents[i])));
  (void)tape;
  return scale(acc, S(1) / static_cast<S>(latents.size()));
}

// rho * scale_inv + gamma * cosine + beta * KLD
template <typename S>
Var<S> train_loss(Tape<S>& tape, Var<S> pred_log, const Mat<S>& target_log, Var<S> mu,
                  Var<S> logvar, const LossWeights<S>& w) {
  w.validate();
  Var<S> loss = scale(scale_invariant_loss(tape, pred_log, target_log), w.rho);
  loss = add(loss, scale(cosine_loss(tape, pred_log, target_log), w.gamma));
  return add(loss, scale(kld_loss(tape, mu, logvar), w.beta));
}

// Fitting objective: the KLD term is removed.
template <typename S>
Var<S> test_loss(Tape<S>& tape, Var<S> pred_log, const Mat<S>& target_log,
                 const LossWeights<S>& w) {
  w.validate();
  Var<S> loss = scale(scale_invariant_loss(tape, pred_log, target_log), w.rho);
  return add(loss, scale(cosine_loss(tape, pred_log, target_log), w.gamma));
}

// Inverse rendering objective: plain MSE in the linear rendered-image space
// plus cosine and a Gaussian prior on the latents.
template <typename S>
Var<S> inverse_loss(Tape<S>& tape, Var<S> rendered, const Mat<S>& target,
                    const std::vector<Var<S>>& latents, const LossWeights<S>& w) {
  w.validate();
  Var<S> mse = mean(square(sub(rendered, tape.constant(target))));
  Var<S> loss = scale(mse, w.rho);
  loss = add(loss, scale(cosine_loss(tape, rendered, target), w.gamma));
  return add(loss, scale(prior_loss(tape, latents), w.beta));
}

}  // namespace lumifield
