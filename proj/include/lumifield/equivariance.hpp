#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>
#include <vector>

#include "lumifield/autodiff.hpp"
#include "lumifield/geometry.hpp"

namespace lumifield {

enum class EquivarianceMode { so2, so3, none };

inline std::string to_string(EquivarianceMode m) {
  switch (m) {
    case EquivarianceMode::so2: return "so2";
    case EquivarianceMode::so3: return "so3";
    case EquivarianceMode::none: return "none";
  }
  throw std::logic_error("unreachable");
}

inline EquivarianceMode parse_equivariance_mode(const std::string& s) {
  if (s == "so2") return EquivarianceMode::so2;
  if (s == "so3") return EquivarianceMode::so3;
  if (s == "none") return EquivarianceMode::none;
  throw std::invalid_argument("unknown equivariance mode '" + s + "' (expected so2|so3|none)");
}

// Latent codes are ordered lists of d-dimensional vectors stored as d x N
// matrices; rotations act by left multiplication.

template <typename S>
Mat<S> rotate_latent(const Mat<S>& z, const Mat3& r) {
  if (z.rows() != 3) throw std::invalid_argument("rotate_latent: latent must be 3 x N");
  if (!is_rotation(r)) throw std::invalid_argument("rotate_latent: matrix is not in SO(3)");
  Mat<S> rm(3, 3);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) rm(i, j) = static_cast<S>(r.m[i][j]);
  return rm * z;
}

// Learned invariant layer: frame F = Z * W_f (d x d), output F^T Z. Exactly
// invariant to any orthogonal Q applied to Z, and homogeneous of degree 2 in
// Z. W_f has shape N x d for a d x N input.
template <typename S>
Mat<S> vn_invariant(const Mat<S>& z, const Mat<S>& w_frame) {
  if (w_frame.rows() != z.cols() || w_frame.cols() != z.rows())
    throw std::invalid_argument("vn_invariant: frame weights must be N x d for a d x N input");
  const Mat<S> frame = z * w_frame;  // d x d
  return frame.transpose() * z;
}

template <typename S>
Var<S> vn_invariant(Tape<S>& tape, Var<S> z, Var<S> w_frame) {
  Var<S> frame = matmul(z, w_frame);
  (void)tape;
  return matmul(transpose(frame), z);
}

template <typename S>
struct InvariantInputs {
  Eigen::Matrix<S, Eigen::Dynamic, 1> dir_features;
  Mat<S> cond_features;
};

// SO(3): dir = Z^T d (the norm of d carries no information and is dropped);
// conditioning = VN-invariant of Z.
template <typename S>
InvariantInputs<S> so3_invariant_inputs(const Vec3& d, const Mat<S>& z, const Mat<S>& w_frame) {
  if (!is_unit(d)) throw std::invalid_argument("so3_invariant_inputs: direction must be unit");
  Eigen::Matrix<S, 3, 1> dv;
  dv << static_cast<S>(d.x), static_cast<S>(d.y), static_cast<S>(d.z);
  InvariantInputs<S> out;
  out.dir_features = z.transpose() * dv;
  out.cond_features = vn_invariant(z, w_frame);
  return out;
}

// SO(2) about a unit axis (default e_y): dir = (proj_a d, <d_perp, Z_perp>,
// |d_perp|) in R^{N+2}; conditioning stacks proj_a Z over the planar
// VN-invariant of Z_perp, 3 x N.
template <typename S>
InvariantInputs<S> so2_invariant_inputs(const Vec3& d, const Mat<S>& z, const Mat<S>& w_frame_2d,
                                        const Vec3& axis = {0.0, 1.0, 0.0}) {
  if (!is_unit(d)) throw std::invalid_argument("so2_invariant_inputs: direction must be unit");
  if (!is_unit(axis)) throw std::invalid_argument("so2_invariant_inputs: axis must be unit");
  const Mat3 r = rotation_a_to_ex(axis);
  Mat<S> proj_row(1, 3), perp_rows(2, 3);
  for (int j = 0; j < 3; ++j) {
    proj_row(0, j) = static_cast<S>(r.m[0][j]);
    perp_rows(0, j) = static_cast<S>(r.m[1][j]);
    perp_rows(1, j) = static_cast<S>(r.m[2][j]);
  }
  Eigen::Matrix<S, 3, 1> dv;
  dv << static_cast<S>(d.x), static_cast<S>(d.y), static_cast<S>(d.z);

  const Eigen::Matrix<S, 2, 1> d_perp = perp_rows * dv;
  const Mat<S> z_perp = perp_rows * z;  // 2 x N
  const Eigen::Index n = z.cols();

  InvariantInputs<S> out;
  out.dir_features.resize(n + 2);
  out.dir_features(0) = (proj_row * dv)(0, 0);
  out.dir_features.segment(1, n) = z_perp.transpose() * d_perp;
  out.dir_features(n + 1) = d_perp.norm();

  out.cond_features.resize(3, n);
  out.cond_features.row(0) = proj_row * z;
  out.cond_features.bottomRows(2) = vn_invariant(z_perp, w_frame_2d);
  return out;
}

// ---------------------------------------------------------------------------
// batched tape builders (one latent shared by a block of directions)
// ---------------------------------------------------------------------------

template <typename S>
struct InvariantInputsVar {
  Var<S> dir_features;   // P x k
  Var<S> cond_features;  // 3 x N
};

namespace detail {

// Constant per-sample geometry pieces for the SO(2) transform under a = e_y:
// R_{e_y -> e_x} maps (x, y, z) -> (y, -x, z), so the projection row is y and
// the rejection plane coordinates are (-x, z).
template <typename S>
struct So2DirConstants {
  Mat<S> proj;    // P x 1
  Mat<S> perp;    // P x 2
  Mat<S> norm;    // P x 1
};

template <typename S>
So2DirConstants<S> so2_dir_constants(const Eigen::Matrix3Xd& dirs) {
  const Eigen::Index p = dirs.cols();
  So2DirConstants<S> out;
  out.proj.resize(p, 1);
  out.perp.resize(p, 2);
  out.norm.resize(p, 1);
  for (Eigen::Index i = 0; i < p; ++i) {
    out.proj(i, 0) = static_cast<S>(dirs(1, i));
    out.perp(i, 0) = static_cast<S>(-dirs(0, i));
    out.perp(i, 1) = static_cast<S>(dirs(2, i));
    out.norm(i, 0) = static_cast<S>(std::sqrt(dirs(0, i) * dirs(0, i) + dirs(2, i) * dirs(2, i)));
  }
  return out;
}

template <typename S>
Var<S> z_perp_graph(Tape<S>& tape, Var<S> z) {
  // [-Z.row(0); Z.row(2)], the rejection-plane coordinates of each column.
  (void)tape;
  Var<S> top = neg(slice_rows(z, 0, 1));
  Var<S> bottom = slice_rows(z, 2, 1);
  return concat_rows<S>({top, bottom});
}

}  // namespace detail

// Invariant inputs for a block of directions conditioned on one latent Z.
// `w_frame` is the N x 3 (so3) or N x 2 (so2) VN frame variable; unused in
// none mode.
template <typename S>
InvariantInputsVar<S> invariant_inputs_graph(Tape<S>& tape, EquivarianceMode mode,
                                             const Eigen::Matrix3Xd& dirs, Var<S> z,
                                             Var<S> w_frame) {
  const Eigen::Index p = dirs.cols();
  InvariantInputsVar<S> out;
  switch (mode) {
    case EquivarianceMode::so3: {
      Mat<S> d(p, 3);
      for (Eigen::Index i = 0; i < p; ++i)
        d.row(i) << static_cast<S>(dirs(0, i)), static_cast<S>(dirs(1, i)),
            static_cast<S>(dirs(2, i));
      out.dir_features = matmul(tape.constant(std::move(d)), z);  // P x N
      out.cond_features = vn_invariant(tape, z, w_frame);
      break;
    }
    case EquivarianceMode::so2: {
      auto consts = detail::so2_dir_constants<S>(dirs);
      Var<S> z_perp = detail::z_perp_graph(tape, z);
      Var<S> inner = matmul(tape.constant(std::move(consts.perp)), z_perp);  // P x N
      out.dir_features = concat_cols<S>(
          {tape.constant(std::move(consts.proj)), inner, tape.constant(std::move(consts.norm))});
      Var<S> proj_z = slice_rows(z, 1, 1);  // 1 x N
      out.cond_features = concat_rows<S>({proj_z, vn_invariant(tape, z_perp, w_frame)});
      break;
    }
    case EquivarianceMode::none: {
      Mat<S> d(p, 3);
      for (Eigen::Index i = 0; i < p; ++i)
        d.row(i) << static_cast<S>(dirs(0, i)), static_cast<S>(dirs(1, i)),
            static_cast<S>(dirs(2, i));
      out.dir_features = tape.constant(std::move(d));
      out.cond_features = z;
      break;
    }
  }
  return out;
}

}  // namespace lumifield
