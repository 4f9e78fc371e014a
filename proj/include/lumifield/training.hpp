#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "lumifield/adam.hpp"
#include "lumifield/batch.hpp"
#include "lumifield/checkpoint.hpp"
#include "lumifield/field.hpp"
#include "lumifield/image.hpp"
#include "lumifield/losses.hpp"
#include "lumifield/rng.hpp"

namespace lumifield {

struct TrainConfig {
  int steps = 50000;
  int warmup_steps = 500;
  double lr0 = 1e-3;
  double alpha = 0.05;  // floor learning-rate fraction at the end of the decay
  int batch_size = 4096;
  LossWeights<double> weights{1.0, 1.0, 1e-6};
  std::uint64_t seed = 0;
  FieldConfig field;
  bool augment_hflip = false;
  int augment_az_steps = 0;  // R > 1: add rotations at increments of 2*pi/R

  void validate() const {
    if (steps < 1) throw std::invalid_argument("train: steps must be >= 1");
    if (warmup_steps < 1 || warmup_steps >= steps)
      throw std::invalid_argument("train: warm-up must satisfy 1 <= W < steps");
    if (batch_size < 1) throw std::invalid_argument("train: batch size must be >= 1");
    if (lr0 <= 0.0 || alpha < 0.0 || alpha > 1.0)
      throw std::invalid_argument("train: bad learning-rate constants");
    weights.validate();
    field.validate();
  }
};

// Warm-up then cosine decay: lr0 * s/W for s <= W, afterwards
// lr0 * (alpha + (1-alpha)/2 * (cos(pi*(s-W)/(s_max-W)) + 1)). Steps are
// 1-based.
inline double lr_schedule(int step, int max_steps, int warmup, double lr0, double alpha) {
  if (step < 1 || step > max_steps) throw std::invalid_argument("lr_schedule: step out of range");
  if (step <= warmup) return lr0 * static_cast<double>(step) / warmup;
  const double t = static_cast<double>(step - warmup) / (max_steps - warmup);
  return lr0 * (alpha + 0.5 * (1.0 - alpha) * (std::cos(M_PI * t) + 1.0));
}

inline double lr_schedule(int step, const TrainConfig& cfg) {
  return lr_schedule(step, cfg.steps, cfg.warmup_steps, cfg.lr0, cfg.alpha);
}

// Per-image latent distributions of the variational auto-decoder, flattened
// to K x D (D = 3N, column-major vec of the 3 x N code).
template <typename S>
struct LatentBank {
  Mat<S> mu;      // K x D
  Mat<S> logvar;  // K x D

  int count() const { return static_cast<int>(mu.rows()); }
  int dim() const { return static_cast<int>(mu.cols()); }

  static LatentBank random_init(int count, int dim, Rng& rng) {
    LatentBank b;
    b.mu.resize(count, dim);
    b.logvar.resize(count, dim);
    for (Eigen::Index i = 0; i < b.mu.size(); ++i) b.mu.data()[i] = static_cast<S>(rng.normal());
    for (Eigen::Index i = 0; i < b.logvar.size(); ++i)
      b.logvar.data()[i] = static_cast<S>(rng.normal(-5.0, 1.0));
    return b;
  }
};

// vec(Z) uses column-major order: entry 3j+i corresponds to Z(i, j).
template <typename S>
Mat<S> vec_to_latent(const Eigen::Matrix<S, Eigen::Dynamic, 1>& v) {
  if (v.size() % 3 != 0) throw std::invalid_argument("vec_to_latent: length must be 3N");
  Mat<S> z(3, v.size() / 3);
  std::copy(v.data(), v.data() + v.size(), z.data());
  return z;
}

template <typename S>
Eigen::Matrix<S, Eigen::Dynamic, 1> latent_to_vec(const Mat<S>& z) {
  Eigen::Matrix<S, Eigen::Dynamic, 1> v(z.size());
  std::copy(z.data(), z.data() + z.size(), v.data());
  return v;
}

// z = mu + exp(logvar/2) .* eps, reshaped to 3 x N.
template <typename S>
Mat<S> reparameterize(const Eigen::Matrix<S, Eigen::Dynamic, 1>& mu,
                      const Eigen::Matrix<S, Eigen::Dynamic, 1>& logvar,
                      const Eigen::Matrix<S, Eigen::Dynamic, 1>& eps) {
  if (mu.size() != logvar.size() || mu.size() != eps.size())
    throw std::invalid_argument("reparameterize: shape mismatch");
  const Eigen::Matrix<S, Eigen::Dynamic, 1> v =
      mu.array() + (logvar.array() * S(0.5)).exp() * eps.array();
  return vec_to_latent<S>(v);
}

// Expands a dataset with horizontal flips and azimuthal rotations; every
// variant trains its own latent code.
inline std::vector<EnvironmentImage> expand_dataset(const std::vector<EnvironmentImage>& images,
                                                    bool hflip, int az_steps) {
  std::vector<EnvironmentImage> out;
  const int rots = std::max(1, az_steps);
  out.reserve(images.size() * static_cast<std::size_t>(rots) * (hflip ? 2 : 1));
  for (const EnvironmentImage& img : images) {
    for (int i = 0; i < rots; ++i) {
      const int k = static_cast<int>(static_cast<long long>(img.width) * i / rots);
      EnvironmentImage rotated = i == 0 ? img : augment_az_rotate(img, k);
      if (hflip) out.push_back(augment_hflip(rotated));
      out.push_back(std::move(rotated));
    }
  }
  return out;
}

struct TrainStepStats {
  int step = 0;
  double lr = 0.0;
  double total = 0.0;
  double scale_inv = 0.0;
  double cosine = 0.0;
  double kld = 0.0;
};

template <typename S>
struct TrainResult {
  FieldModel<S> model;
  LatentBank<S> bank;
  std::vector<TrainStepStats> history;
};

using ProgressFn = std::function<void(const TrainStepStats&)>;

// Joint optimization of the decoder weights and the per-image latent
// distributions. Deterministic given the seed; single-threaded.
template <typename S = float>
TrainResult<S> train(const std::vector<EnvironmentImage>& dataset, const TrainConfig& cfg,
                     const ProgressFn& progress = nullptr) {
  cfg.validate();
  if (dataset.empty()) throw std::invalid_argument("train: dataset is empty");

  const std::vector<EnvironmentImage> images =
      expand_dataset(dataset, cfg.augment_hflip, cfg.augment_az_steps);
  const int n_images = static_cast<int>(images.size());
  const int dim = cfg.field.latent_dim();

  TrainResult<S> result;
  result.model = FieldModel<S>::random_init(cfg.field, cfg.seed);
  Rng bank_rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
  result.bank = LatentBank<S>::random_init(n_images, dim, bank_rng);

  Rng batch_rng(cfg.seed ^ 0xc2b2ae3d27d4eb4full);
  Rng eps_rng(cfg.seed ^ 0x165667b19e3779f9ull);

  AdamOptimizer<S> adam;
  const LossWeights<S> weights{static_cast<S>(cfg.weights.rho), static_cast<S>(cfg.weights.gamma),
                               static_cast<S>(cfg.weights.beta)};

  result.history.reserve(static_cast<std::size_t>(cfg.steps));
  for (int step = 1; step <= cfg.steps; ++step) {
    const TrainingBatch batch = sample_training_batch(images, cfg.batch_size, batch_rng);

    // sort samples by image so each latent conditions one contiguous block
    const int p = batch.sample_count();
    std::vector<int> order(static_cast<std::size_t>(p));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&batch](int a, int b) {
      return batch.image_index[static_cast<std::size_t>(a)] <
             batch.image_index[static_cast<std::size_t>(b)];
    });
    Eigen::Matrix3Xd dirs(3, p);
    Mat<S> targets(p, 3);
    for (int i = 0; i < p; ++i) {
      dirs.col(i) = batch.directions.col(order[static_cast<std::size_t>(i)]);
      targets.row(i) =
          batch.log_colors.col(order[static_cast<std::size_t>(i)]).transpose().cast<S>();
    }

    std::vector<LatentGroup> groups;
    std::vector<int> group_image;
    for (int i = 0; i < p;) {
      const int img = batch.image_index[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];
      int j = i;
      while (j < p &&
             batch.image_index[static_cast<std::size_t>(order[static_cast<std::size_t>(j)])] == img)
        ++j;
      groups.push_back(LatentGroup{i, j - i});
      group_image.push_back(img);
      i = j;
    }

    Tape<S> tape;
    FieldVars<S> fvars = bind_field(tape, result.model, true);
    Var<S> mu_all = tape.leaf(result.bank.mu, true);
    Var<S> logvar_all = tape.leaf(result.bank.logvar, true);

    std::vector<Var<S>> latents;
    latents.reserve(groups.size());
    for (std::size_t g = 0; g < groups.size(); ++g) {
      Mat<S> eps(1, dim);
      for (int j = 0; j < dim; ++j) eps(0, j) = static_cast<S>(eps_rng.normal());
      Var<S> mu_row = slice_rows(mu_all, group_image[g], 1);
      Var<S> lv_row = slice_rows(logvar_all, group_image[g], 1);
      Var<S> sigma = exp_(scale(lv_row, S(0.5)));
      Var<S> zv = add(mu_row, mul(sigma, tape.constant(eps)));
      latents.push_back(reshape(transpose(zv), 3, cfg.field.latent_channels));
    }

    Var<S> pred = field_forward_graph(tape, fvars, dirs, groups, latents);

    Var<S> mu_batch = gather_rows(mu_all, group_image);
    Var<S> logvar_batch = gather_rows(logvar_all, group_image);
    Var<S> si = scale_invariant_loss(tape, pred, targets);
    Var<S> co = cosine_loss(tape, pred, targets);
    Var<S> kl = kld_loss(tape, mu_batch, logvar_batch);
    Var<S> loss =
        add(add(scale(si, weights.rho), scale(co, weights.gamma)), scale(kl, weights.beta));

    const double loss_value = static_cast<double>(tape.scalar_value(loss));
    if (!std::isfinite(loss_value))
      throw std::runtime_error("train: non-finite loss at step " + std::to_string(step));

    tape.backward(loss);

    std::vector<Mat<S>*> params;
    std::vector<Mat<S>> grads;
    std::size_t at = 0;
    result.model.for_each_parameter([&](const std::string&, Mat<S>& m) {
      params.push_back(&m);
      grads.push_back(tape.grad(fvars.params[at]));
      ++at;
    });
    params.push_back(&result.bank.mu);
    grads.push_back(tape.grad(mu_all));
    params.push_back(&result.bank.logvar);
    grads.push_back(tape.grad(logvar_all));

    const double lr = lr_schedule(step, cfg);
    adam.step(params, grads, lr);

    TrainStepStats stats;
    stats.step = step;
    stats.lr = lr;
    stats.total = loss_value;
    stats.scale_inv = static_cast<double>(tape.scalar_value(si));
    stats.cosine = static_cast<double>(tape.scalar_value(co));
    stats.kld = static_cast<double>(tape.scalar_value(kl));
    result.history.push_back(stats);
    if (progress) progress(stats);
  }
  return result;
}

// Checkpoint with the latent bank appended as named tensors.
template <typename S>
void save_training_checkpoint(const std::string& path, const FieldModel<S>& model,
                              const LatentBank<S>& bank) {
  CheckpointWriter w;
  add_field_model(w, model);
  w.add("latent.mu", bank.mu);
  w.add("latent.logvar", bank.logvar);
  w.write(path);
}

template <typename S>
LatentBank<S> load_latent_bank(const Checkpoint& ckpt) {
  LatentBank<S> bank;
  bank.mu = ckpt.tensor("latent.mu").cast<S>();
  bank.logvar = ckpt.tensor("latent.logvar").cast<S>();
  return bank;
}

}  // namespace lumifield
