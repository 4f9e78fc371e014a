#include <catch2/catch_amalgamated.hpp>

#include "lumifield/equivariance.hpp"
#include "lumifield/geometry.hpp"
#include "lumifield/rng.hpp"

using namespace lumifield;

namespace {

template <typename S>
Mat<S> random_latent(Rng& rng, int n) {
  Mat<S> z(3, n);
  for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = static_cast<S>(rng.normal());
  return z;
}

template <typename S>
Mat<S> random_frame(Rng& rng, int n, int d) {
  Mat<S> w(n, d);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<S>(rng.normal());
  return w;
}

Mat3 random_rotation(Rng& rng) {
  return rotation_about_axis(sample_direction(rng), rng.uniform(0.0, 2 * M_PI));
}

template <typename S>
Mat<S> to_mat(const Mat3& r) {
  Mat<S> m(3, 3);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) m(i, j) = static_cast<S>(r.m[i][j]);
  return m;
}

}  // namespace

TEST_CASE("vn_invariant") {
  SECTION("identity frame passes the latent through") {
    const int n = 5;
    Mat<double> z = Mat<double>::Zero(3, n);
    z(0, 0) = z(1, 1) = z(2, 2) = 1.0;  // first three columns are e_x, e_y, e_z
    z(0, 3) = 0.3;
    z(2, 4) = -1.7;
    Mat<double> wf = Mat<double>::Zero(n, 3);
    wf(0, 0) = wf(1, 1) = wf(2, 2) = 1.0;  // F = Z W_f = I
    CHECK((vn_invariant(z, wf) - z).cwiseAbs().maxCoeff() < 1e-12);
  }

  SECTION("float32 invariance under a single rotation") {
    Rng rng(2);
    Mat<float> z = random_latent<float>(rng, 8);
    Mat<float> wf = random_frame<float>(rng, 8, 3);
    const Mat<float> r = to_mat<float>(rotation_y(1.234));
    const Mat<float> a = vn_invariant(z, wf);
    const Mat<float> b = vn_invariant<float>((r * z).eval(), wf);
    CHECK((a - b).cwiseAbs().maxCoeff() < 1e-5f);
  }

  SECTION("brute-force rotation sweep") {
    Rng rng(3);
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
      const int n = 4 + rng.uniform_int(6);
      Mat<double> z = random_latent<double>(rng, n);
      Mat<double> wf = random_frame<double>(rng, n, 3);
      const Mat<double> r = to_mat<double>(random_rotation(rng));
      const Mat<double> a = vn_invariant(z, wf);
      const Mat<double> b = vn_invariant<double>((r * z).eval(), wf);
      worst = std::max(worst, (a - b).cwiseAbs().maxCoeff());
    }
    CHECK(worst < 1e-4);
  }

  SECTION("homogeneity of degree 2") {
    Rng rng(4);
    Mat<double> z = random_latent<double>(rng, 6);
    Mat<double> wf = random_frame<double>(rng, 6, 3);
    const double s = 1.7;
    const Mat<double> scaled = vn_invariant<double>((s * z).eval(), wf);
    const Mat<double> base = vn_invariant(z, wf);
    CHECK((scaled - s * s * base).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("so3 invariant inputs") {
  Rng rng(5);

  SECTION("orthonormal latent reproduces the direction") {
    Mat<double> z = Mat<double>::Identity(3, 3);
    Mat<double> wf = random_frame<double>(rng, 3, 3);
    const Vec3 d = sample_direction(rng);
    const auto inv = so3_invariant_inputs(d, z, wf);
    CHECK(inv.dir_features(0) == Catch::Approx(d.x));
    CHECK(inv.dir_features(1) == Catch::Approx(d.y));
    CHECK(inv.dir_features(2) == Catch::Approx(d.z));
  }

  SECTION("zero latent gives zero features") {
    Mat<double> z = Mat<double>::Zero(3, 7);
    Mat<double> wf = random_frame<double>(rng, 7, 3);
    const auto inv = so3_invariant_inputs(sample_direction(rng), z, wf);
    CHECK(inv.dir_features.cwiseAbs().maxCoeff() == 0.0);
  }

  SECTION("joint rotation leaves features unchanged") {
    for (int i = 0; i < 100; ++i) {
      const int n = 5;
      Mat<double> z = random_latent<double>(rng, n);
      Mat<double> wf = random_frame<double>(rng, n, 3);
      const Vec3 d = sample_direction(rng);
      const Mat3 r = random_rotation(rng);
      const Vec3 rd = r * d;
      const Mat<double> rz = to_mat<double>(r) * z;
      const auto a = so3_invariant_inputs(d, z, wf);
      const auto b = so3_invariant_inputs(normalized(rd), rz, wf);
      CHECK((a.dir_features - b.dir_features).cwiseAbs().maxCoeff() < 1e-10);
      CHECK((a.cond_features - b.cond_features).cwiseAbs().maxCoeff() < 1e-10);
    }
  }
}

TEST_CASE("so2 invariant inputs") {
  Rng rng(6);
  const int n = 6;

  SECTION("direction along the axis") {
    Mat<double> z = random_latent<double>(rng, n);
    Mat<double> wf = random_frame<double>(rng, n, 2);
    const auto inv = so2_invariant_inputs({0, 1, 0}, z, wf);
    REQUIRE(inv.dir_features.size() == n + 2);
    CHECK(inv.dir_features(0) == Catch::Approx(1.0));
    CHECK(inv.dir_features(n + 1) == Catch::Approx(0.0).margin(1e-12));
    for (int j = 1; j <= n; ++j) CHECK(inv.dir_features(j) == Catch::Approx(0.0).margin(1e-12));
  }

  SECTION("direction in the equatorial plane") {
    Mat<double> z = random_latent<double>(rng, n);
    Mat<double> wf = random_frame<double>(rng, n, 2);
    const double t = rng.uniform(0.0, 2 * M_PI);
    const auto inv = so2_invariant_inputs({std::cos(t), 0.0, std::sin(t)}, z, wf);
    CHECK(inv.dir_features(0) == Catch::Approx(0.0).margin(1e-12));
    CHECK(inv.dir_features(n + 1) == Catch::Approx(1.0));
  }

  SECTION("joint y-rotation sweep in float32") {
    float worst = 0.0f;
    for (int i = 0; i < 100; ++i) {
      Mat<float> z = random_latent<float>(rng, n);
      Mat<float> wf = random_frame<float>(rng, n, 2);
      const Vec3 d = sample_direction(rng);
      const Mat3 r = rotation_y(rng.uniform(0.0, 2 * M_PI));
      const auto a = so2_invariant_inputs(d, z, wf);
      const auto b = so2_invariant_inputs(normalized(r * d), (to_mat<float>(r) * z).eval(), wf);
      worst = std::max(worst, (a.dir_features - b.dir_features).cwiseAbs().maxCoeff());
      worst = std::max(worst, (a.cond_features - b.cond_features).cwiseAbs().maxCoeff());
    }
    CHECK(worst < 1e-5f);
  }

  SECTION("cond features stack projection over planar invariant") {
    Mat<double> z = random_latent<double>(rng, n);
    Mat<double> wf = random_frame<double>(rng, n, 2);
    const auto inv = so2_invariant_inputs(sample_direction(rng), z, wf);
    REQUIRE(inv.cond_features.rows() == 3);
    REQUIRE(inv.cond_features.cols() == n);
    CHECK((inv.cond_features.row(0) - z.row(1)).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("rotate_latent") {
  Rng rng(7);
  Mat<double> z = random_latent<double>(rng, 9);

  CHECK((rotate_latent(z, Mat3::identity()) - z).cwiseAbs().maxCoeff() == 0.0);

  const Mat3 r = random_rotation(rng);
  const Mat<double> back = rotate_latent(rotate_latent(z, r), r.transposed());
  CHECK((back - z).cwiseAbs().maxCoeff() < 1e-6);

  const Mat<double> rz = rotate_latent(z, r);
  for (int j = 0; j < z.cols(); ++j)
    CHECK(rz.col(j).norm() == Catch::Approx(z.col(j).norm()).margin(1e-12));

  Mat3 not_rot = Mat3::identity();
  not_rot.m[0][0] = 2.0;
  CHECK_THROWS_AS(rotate_latent(z, not_rot), std::invalid_argument);
}

TEST_CASE("tape invariant inputs agree with the plain versions") {
  Rng rng(8);
  const int n = 5;
  Mat<double> z = random_latent<double>(rng, n);

  SECTION("so3") {
    Mat<double> wf = random_frame<double>(rng, n, 3);
    const Vec3 d = sample_direction(rng);
    Eigen::Matrix3Xd dirs(3, 1);
    dirs.col(0) << d.x, d.y, d.z;
    Tape<double> tape;
    auto inv = invariant_inputs_graph(tape, EquivarianceMode::so3, dirs, tape.constant(z),
                                      tape.constant(wf));
    const auto plain = so3_invariant_inputs(d, z, wf);
    CHECK((tape.value(inv.dir_features).row(0).transpose() - plain.dir_features)
              .cwiseAbs()
              .maxCoeff() < 1e-12);
    CHECK((tape.value(inv.cond_features) - plain.cond_features).cwiseAbs().maxCoeff() < 1e-12);
  }

  SECTION("so2") {
    Mat<double> wf = random_frame<double>(rng, n, 2);
    const Vec3 d = sample_direction(rng);
    Eigen::Matrix3Xd dirs(3, 1);
    dirs.col(0) << d.x, d.y, d.z;
    Tape<double> tape;
    auto inv = invariant_inputs_graph(tape, EquivarianceMode::so2, dirs, tape.constant(z),
                                      tape.constant(wf));
    const auto plain = so2_invariant_inputs(d, z, wf);
    CHECK((tape.value(inv.dir_features).row(0).transpose() - plain.dir_features)
              .cwiseAbs()
              .maxCoeff() < 1e-12);
    CHECK((tape.value(inv.cond_features) - plain.cond_features).cwiseAbs().maxCoeff() < 1e-12);
  }
}
