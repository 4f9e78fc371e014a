#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "lumifield/autodiff.hpp"
#include "lumifield/equivariance.hpp"
#include "lumifield/geometry.hpp"
#include "lumifield/rng.hpp"

namespace lumifield {

enum class OutputActivation { identity, softplus_shift };

inline std::string to_string(OutputActivation a) {
  return a == OutputActivation::identity ? "identity" : "softplus_shift";
}

inline OutputActivation parse_output_activation(const std::string& s) {
  if (s == "identity") return OutputActivation::identity;
  if (s == "softplus_shift") return OutputActivation::softplus_shift;
  throw std::invalid_argument("unknown output activation '" + s + "'");
}

struct FieldConfig {
  int latent_channels = 9;  // N; the latent is 3 x N (D = 3N scalars)
  int heads = 8;
  int layers = 6;
  int hidden = 128;
  int pe_frequencies = 8;  // L
  EquivarianceMode mode = EquivarianceMode::so2;
  OutputActivation output_activation = OutputActivation::identity;
  // The printed FFN adds its residual from LN(x); set true for the standard
  // pre-norm residual from x instead.
  bool standard_ffn_residual = false;

  int latent_dim() const { return 3 * latent_channels; }

  int dir_feature_count() const {
    switch (mode) {
      case EquivarianceMode::so3: return latent_channels;
      case EquivarianceMode::so2: return latent_channels + 2;
      case EquivarianceMode::none: return 3;
    }
    throw std::logic_error("unreachable");
  }

  int query_input_dim() const { return dir_feature_count() * 2 * pe_frequencies; }

  void validate() const {
    if (latent_channels < 1) throw std::invalid_argument("latent_channels must be >= 1");
    if (heads < 1 || layers < 1 || hidden < 1 || pe_frequencies < 1)
      throw std::invalid_argument("field config values must be positive");
    if (hidden % heads != 0) throw std::invalid_argument("hidden must be divisible by heads");
  }
};

// NeRF-style positional encoding: per element x, frequencies 2^j * pi for
// j = 0..L-1, interleaved (sin, cos) pairs.
template <typename S>
Eigen::Matrix<S, Eigen::Dynamic, 1> positional_encode(
    const Eigen::Matrix<S, Eigen::Dynamic, 1>& x, int frequencies) {
  Eigen::Matrix<S, Eigen::Dynamic, 1> out(x.size() * 2 * frequencies);
  for (Eigen::Index e = 0; e < x.size(); ++e)
    for (int j = 0; j < frequencies; ++j) {
      const S arg = static_cast<S>(std::ldexp(M_PI, j)) * x(e);
      out(e * 2 * frequencies + 2 * j) = std::sin(arg);
      out(e * 2 * frequencies + 2 * j + 1) = std::cos(arg);
    }
  return out;
}

// Fused batched positional encoding on the tape: P x k -> P x (k*2L), same
// column layout as positional_encode.
template <typename S>
Var<S> positional_encode_graph(Tape<S>& tape, Var<S> x, int frequencies) {
  const Mat<S>& xv = tape.value(x);
  const Eigen::Index p = xv.rows(), k = xv.cols();
  const bool ng = tape.needs_grad(x.id);
  Mat<S> out(p, k * 2 * frequencies);
  for (Eigen::Index e = 0; e < k; ++e)
    for (int j = 0; j < frequencies; ++j) {
      const S f = static_cast<S>(std::ldexp(M_PI, j));
      out.col(e * 2 * frequencies + 2 * j) = (xv.col(e).array() * f).sin();
      out.col(e * 2 * frequencies + 2 * j + 1) = (xv.col(e).array() * f).cos();
    }
  Var<S> r = tape.emplace(std::move(out), ng);
  if (ng) {
    Tape<S>* tp = &tape;
    const int xi = x.id, ri = r.id;
    tape.set_backprop(ri, [tp, xi, ri, frequencies] {
      const Mat<S>& g = tp->adj(ri);
      const Mat<S>& xv = tp->val(xi);
      Mat<S> dx = Mat<S>::Zero(xv.rows(), xv.cols());
      for (Eigen::Index e = 0; e < xv.cols(); ++e)
        for (int j = 0; j < frequencies; ++j) {
          const S f = static_cast<S>(std::ldexp(M_PI, j));
          const auto arg = (xv.col(e).array() * f).eval();
          dx.col(e).array() += g.col(e * 2 * frequencies + 2 * j).array() * arg.cos() * f;
          dx.col(e).array() -= g.col(e * 2 * frequencies + 2 * j + 1).array() * arg.sin() * f;
        }
      tp->accumulate(xi, dx);
    });
  }
  return r;
}

template <typename S>
struct FieldModel {
  FieldConfig config;

  Mat<S> w_query_in, b_query_in;  // query_input_dim x hidden, 1 x hidden
  Mat<S> w_cond_in, b_cond_in;    // 3 x hidden, 1 x hidden
  Mat<S> channel_embed;           // N x hidden

  struct Layer {
    Mat<S> wq, wk, wv, wo;  // hidden x hidden
    Mat<S> w1, b1, w2, b2;  // hidden x hidden, 1 x hidden
    Mat<S> ln_gain, ln_bias;  // 1 x hidden
  };
  std::vector<Layer> layers;

  Mat<S> w_out, b_out;  // hidden x 3, 1 x 3
  Mat<S> vn_frame;      // N x 3 (so3) or N x 2 (so2); empty in none mode

  static FieldModel random_init(const FieldConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    FieldModel m;
    m.config = cfg;
    Rng rng(seed);
    auto init = [&rng](Mat<S>& w, int rows, int cols) {
      w.resize(rows, cols);
      const double std = std::sqrt(2.0 / (rows + cols));
      for (Eigen::Index i = 0; i < w.size(); ++i)
        w.data()[i] = static_cast<S>(rng.normal() * std);
    };
    auto zeros = [](Mat<S>& w, int rows, int cols) { w = Mat<S>::Zero(rows, cols); };

    init(m.w_query_in, cfg.query_input_dim(), cfg.hidden);
    zeros(m.b_query_in, 1, cfg.hidden);
    init(m.w_cond_in, 3, cfg.hidden);
    zeros(m.b_cond_in, 1, cfg.hidden);
    m.channel_embed.resize(cfg.latent_channels, cfg.hidden);
    for (Eigen::Index i = 0; i < m.channel_embed.size(); ++i)
      m.channel_embed.data()[i] = static_cast<S>(rng.normal() * 0.1);
    m.layers.resize(static_cast<std::size_t>(cfg.layers));
    for (Layer& l : m.layers) {
      init(l.wq, cfg.hidden, cfg.hidden);
      init(l.wk, cfg.hidden, cfg.hidden);
      init(l.wv, cfg.hidden, cfg.hidden);
      init(l.wo, cfg.hidden, cfg.hidden);
      init(l.w1, cfg.hidden, cfg.hidden);
      zeros(l.b1, 1, cfg.hidden);
      init(l.w2, cfg.hidden, cfg.hidden);
      zeros(l.b2, 1, cfg.hidden);
      l.ln_gain = Mat<S>::Ones(1, cfg.hidden);
      zeros(l.ln_bias, 1, cfg.hidden);
    }
    init(m.w_out, cfg.hidden, 3);
    zeros(m.b_out, 1, 3);
    if (cfg.mode == EquivarianceMode::so3)
      init(m.vn_frame, cfg.latent_channels, 3);
    else if (cfg.mode == EquivarianceMode::so2)
      init(m.vn_frame, cfg.latent_channels, 2);
    return m;
  }

  template <typename Fn>
  void for_each_parameter(Fn&& fn) {
    fn("query_in.w", w_query_in);
    fn("query_in.b", b_query_in);
    fn("cond_in.w", w_cond_in);
    fn("cond_in.b", b_cond_in);
    fn("channel_embed", channel_embed);
    if (vn_frame.size() > 0) fn("vn_frame", vn_frame);
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const std::string p = "layer" + std::to_string(i) + ".";
      fn(p + "wq", layers[i].wq);
      fn(p + "wk", layers[i].wk);
      fn(p + "wv", layers[i].wv);
      fn(p + "wo", layers[i].wo);
      fn(p + "w1", layers[i].w1);
      fn(p + "b1", layers[i].b1);
      fn(p + "w2", layers[i].w2);
      fn(p + "b2", layers[i].b2);
      fn(p + "ln_gain", layers[i].ln_gain);
      fn(p + "ln_bias", layers[i].ln_bias);
    }
    fn("out.w", w_out);
    fn("out.b", b_out);
  }

  template <typename Fn>
  void for_each_parameter(Fn&& fn) const {
    const_cast<FieldModel*>(this)->for_each_parameter(
        [&fn](const std::string& name, Mat<S>& m) { fn(name, static_cast<const Mat<S>&>(m)); });
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each_parameter([&n](const std::string&, const Mat<S>& m) {
      n += static_cast<std::size_t>(m.size());
    });
    return n;
  }

  void validate_finite() const {
    bool ok = true;
    for_each_parameter([&ok](const std::string&, const Mat<S>& m) {
      if (!m.allFinite()) ok = false;
    });
    if (!ok) throw std::runtime_error("field model contains non-finite parameters");
  }

  template <typename S2>
  FieldModel<S2> cast() const {
    FieldModel<S2> out;
    out.config = config;
    out.w_query_in = w_query_in.template cast<S2>();
    out.b_query_in = b_query_in.template cast<S2>();
    out.w_cond_in = w_cond_in.template cast<S2>();
    out.b_cond_in = b_cond_in.template cast<S2>();
    out.channel_embed = channel_embed.template cast<S2>();
    out.layers.resize(layers.size());
    for (std::size_t i = 0; i < layers.size(); ++i) {
      out.layers[i].wq = layers[i].wq.template cast<S2>();
      out.layers[i].wk = layers[i].wk.template cast<S2>();
      out.layers[i].wv = layers[i].wv.template cast<S2>();
      out.layers[i].wo = layers[i].wo.template cast<S2>();
      out.layers[i].w1 = layers[i].w1.template cast<S2>();
      out.layers[i].b1 = layers[i].b1.template cast<S2>();
      out.layers[i].w2 = layers[i].w2.template cast<S2>();
      out.layers[i].b2 = layers[i].b2.template cast<S2>();
      out.layers[i].ln_gain = layers[i].ln_gain.template cast<S2>();
      out.layers[i].ln_bias = layers[i].ln_bias.template cast<S2>();
    }
    out.w_out = w_out.template cast<S2>();
    out.b_out = b_out.template cast<S2>();
    out.vn_frame = vn_frame.template cast<S2>();
    return out;
  }
};

// Tape handles for the model parameters, in for_each_parameter order.
template <typename S>
struct FieldVars {
  const FieldConfig* config = nullptr;
  std::vector<Var<S>> params;  // same order as for_each_parameter
  Var<S> w_query_in, b_query_in, w_cond_in, b_cond_in, channel_embed, vn_frame;
  struct LayerVars {
    Var<S> wq, wk, wv, wo, w1, b1, w2, b2, ln_gain, ln_bias;
  };
  std::vector<LayerVars> layers;
  Var<S> w_out, b_out;
};

template <typename S>
FieldVars<S> bind_field(Tape<S>& tape, const FieldModel<S>& model, bool trainable) {
  FieldVars<S> f;
  f.config = &model.config;
  std::vector<std::pair<std::string, Var<S>>> named;
  model.for_each_parameter([&](const std::string& name, const Mat<S>& m) {
    Var<S> v = tape.leaf(m, trainable);
    named.emplace_back(name, v);
    f.params.push_back(v);
  });
  auto find = [&named](const std::string& name) {
    for (auto& [n, v] : named)
      if (n == name) return v;
    throw std::logic_error("bind_field: missing parameter " + name);
  };
  f.w_query_in = find("query_in.w");
  f.b_query_in = find("query_in.b");
  f.w_cond_in = find("cond_in.w");
  f.b_cond_in = find("cond_in.b");
  f.channel_embed = find("channel_embed");
  if (model.vn_frame.size() > 0) f.vn_frame = find("vn_frame");
  f.layers.resize(model.layers.size());
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const std::string p = "layer" + std::to_string(i) + ".";
    f.layers[i].wq = find(p + "wq");
    f.layers[i].wk = find(p + "wk");
    f.layers[i].wv = find(p + "wv");
    f.layers[i].wo = find(p + "wo");
    f.layers[i].w1 = find(p + "w1");
    f.layers[i].b1 = find(p + "b1");
    f.layers[i].w2 = find(p + "w2");
    f.layers[i].b2 = find(p + "b2");
    f.layers[i].ln_gain = find(p + "ln_gain");
    f.layers[i].ln_bias = find(p + "ln_bias");
  }
  f.w_out = find("out.w");
  f.b_out = find("out.b");
  return f;
}

// A contiguous block of batch columns sharing one latent code.
struct LatentGroup {
  int begin = 0;
  int count = 0;
};

// Builds the decoder graph for a batch of directions. dirs is 3 x P with
// unit columns; groups partition [0, P) and latents[i] conditions group i.
// Returns P x 3 log-HDR predictions.
template <typename S>
Var<S> field_forward_graph(Tape<S>& tape, const FieldVars<S>& f, const Eigen::Matrix3Xd& dirs,
                           const std::vector<LatentGroup>& groups,
                           const std::vector<Var<S>>& latents) {
  const FieldConfig& cfg = *f.config;
  if (groups.size() != latents.size())
    throw std::invalid_argument("field_forward_graph: group/latent count mismatch");
  const int total = static_cast<int>(dirs.cols());
  int covered = 0;
  for (const LatentGroup& g : groups) covered += g.count;
  if (covered != total) throw std::invalid_argument("field_forward_graph: groups do not cover batch");

  // per-group invariant inputs and conditioning tokens
  std::vector<Var<S>> pe_blocks;
  std::vector<Var<S>> tokens;  // N x hidden per group
  pe_blocks.reserve(groups.size());
  tokens.reserve(groups.size());
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const Eigen::Matrix3Xd block = dirs.middleCols(groups[i].begin, groups[i].count);
    InvariantInputsVar<S> inv =
        invariant_inputs_graph(tape, cfg.mode, block, latents[i], f.vn_frame);
    pe_blocks.push_back(positional_encode_graph(tape, inv.dir_features, cfg.pe_frequencies));
    Var<S> tok = matmul(transpose(inv.cond_features), f.w_cond_in);  // N x hidden
    tok = add_rowvec(tok, f.b_cond_in);
    tokens.push_back(add(tok, f.channel_embed));
  }

  Var<S> h = pe_blocks.size() == 1 ? pe_blocks[0] : concat_rows(pe_blocks);
  h = add_rowvec(matmul(h, f.w_query_in), f.b_query_in);  // P x hidden

  for (const auto& layer : f.layers) {
    Var<S> q = matmul(h, layer.wq);
    std::vector<Var<S>> attn_blocks;
    attn_blocks.reserve(groups.size());
    for (std::size_t i = 0; i < groups.size(); ++i) {
      Var<S> k = matmul(tokens[i], layer.wk);
      Var<S> v = matmul(tokens[i], layer.wv);
      Var<S> qi = groups.size() == 1 ? q : slice_rows(q, groups[i].begin, groups[i].count);
      attn_blocks.push_back(multihead_attention(qi, k, v, cfg.heads));
    }
    Var<S> attn = attn_blocks.size() == 1 ? attn_blocks[0] : concat_rows(attn_blocks);
    Var<S> u = add(matmul(attn, layer.wo), q);  // MHA residual adds the projected query
    Var<S> ln = layer_norm_rows(u, layer.ln_gain, layer.ln_bias);
    Var<S> ffn = add_rowvec(matmul(relu(add_rowvec(matmul(ln, layer.w1), layer.b1)), layer.w2),
                            layer.b2);
    h = add(cfg.standard_ffn_residual ? u : ln, ffn);
  }

  Var<S> out = add_rowvec(matmul(h, f.w_out), f.b_out);  // P x 3
  if (cfg.output_activation == OutputActivation::softplus_shift) out = softplus_shift(out);
  return out;
}

// Forward pass of a batch that shares a single latent. Returns 3 x P.
template <typename S>
Mat<S> field_forward_batch(const FieldModel<S>& model, const Eigen::Matrix3Xd& dirs,
                           const Mat<S>& z) {
  model.validate_finite();
  if (z.rows() != 3 || z.cols() != model.config.latent_channels)
    throw std::invalid_argument("field_forward_batch: latent must be 3 x N");
  Tape<S> tape;
  FieldVars<S> f = bind_field(tape, model, false);
  Var<S> zv = tape.constant(z);
  Var<S> out = field_forward_graph(tape, f, dirs,
                                   {LatentGroup{0, static_cast<int>(dirs.cols())}}, {zv});
  return tape.value(out).transpose();
}

template <typename S>
Eigen::Matrix<S, 3, 1> field_forward(const FieldModel<S>& model, const Vec3& d, const Mat<S>& z) {
  if (!is_unit(d)) throw std::invalid_argument("field_forward: direction must be unit");
  Eigen::Matrix3Xd dirs(3, 1);
  dirs.col(0) << d.x, d.y, d.z;
  return field_forward_batch(model, dirs, z).col(0);
}

// Unit directions of every pixel center of an equirectangular grid, 3 x H*W.
inline Eigen::Matrix3Xd field_grid_directions(int height, int width) {
  Eigen::Matrix3Xd dirs(3, static_cast<Eigen::Index>(height) * width);
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c) {
      const Vec3 d = pixel_to_direction(r, c, height, width);
      dirs.col(static_cast<Eigen::Index>(r) * width + c) << d.x, d.y, d.z;
    }
  return dirs;
}

}  // namespace lumifield
