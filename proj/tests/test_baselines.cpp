#include <catch2/catch_amalgamated.hpp>

#include "lumifield/baselines.hpp"
#include "lumifield/synthetic.hpp"

using namespace lumifield;

TEST_CASE("solid angle quadrature") {
  const auto omega = equirect_solid_angles(64, 128);
  double total = 0.0;
  for (double w : omega) total += w;
  CHECK(total == Catch::Approx(4.0 * M_PI).margin(1e-9));
  for (double w : omega) CHECK(w > 0.0);
}

TEST_CASE("sh basis") {
  Rng rng(1);

  SECTION("constant band") {
    for (int i = 0; i < 10; ++i) {
      const Vec3 d = sample_direction(rng);
      CHECK(sh_basis(d, 0)(0) == Catch::Approx(1.0 / (2.0 * std::sqrt(M_PI))));
    }
  }

  SECTION("Monte Carlo orthonormality up to order 3") {
    const int lmax = 3, basis_n = (lmax + 1) * (lmax + 1);
    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(basis_n, basis_n);
    const int samples = 200000;
    for (int i = 0; i < samples; ++i) {
      const Eigen::VectorXd y = sh_basis(sample_direction(rng), lmax);
      gram += y * y.transpose();
    }
    gram *= 4.0 * M_PI / samples;
    for (int a = 0; a < basis_n; ++a)
      for (int b = 0; b < basis_n; ++b)
        CHECK(gram(a, b) == Catch::Approx(a == b ? 1.0 : 0.0).margin(0.02));
  }

  SECTION("grid quadrature orthonormality is near-exact") {
    const int lmax = 9;
    const Eigen::MatrixXd basis = sh_basis_grid(64, 128, lmax);
    const auto omega = equirect_solid_angles(64, 128);
    Eigen::VectorXd w(basis.rows());
    for (Eigen::Index i = 0; i < w.size(); ++i) w(i) = omega[static_cast<std::size_t>(i)];
    const Eigen::MatrixXd gram = basis.transpose() * w.asDiagonal() * basis;
    const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(gram.rows(), gram.cols());
    CHECK((gram - eye).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("sh fitting") {
  SECTION("constant image projects onto the constant band") {
    EnvironmentImage img = EnvironmentImage::zero(64, 128);
    const float v = 0.8f;
    for (float& p : img.pixels) p = v;
    const SHCoefficients sh = fit_sh(img, 2);
    CHECK(sh.dim() == 27);
    CHECK(sh.coeffs(0, 0) == Catch::Approx(v * 2.0 * std::sqrt(M_PI)).margin(1e-6));
    for (Eigen::Index i = 1; i < sh.coeffs.rows(); ++i)
      for (int ch = 0; ch < 3; ++ch) CHECK(std::abs(sh.coeffs(i, ch)) < 1e-3);
  }

  SECTION("band-limited round trip recovers coefficients") {
    Rng rng(5);
    SHCoefficients gt;
    gt.lmax = 2;
    gt.coeffs.resize(9, 3);
    for (Eigen::Index i = 0; i < gt.coeffs.size(); ++i) gt.coeffs.data()[i] = rng.normal();
    const Eigen::MatrixXd values = evaluate_sh_grid(gt, 64, 128);
    EnvironmentImage img = EnvironmentImage::zero(64, 128);
    for (Eigen::Index p = 0; p < values.rows(); ++p)
      for (int ch = 0; ch < 3; ++ch)
        img.pixels[static_cast<std::size_t>(p) * 3 + ch] = static_cast<float>(values(p, ch));
    const SHCoefficients refit = fit_sh(img, 2);
    CHECK((refit.coeffs - gt.coeffs).cwiseAbs().maxCoeff() < 1e-3);
  }

  SECTION("band-limited signals reproduce with high log-space fidelity") {
    Rng rng(6);
    SHCoefficients gt;
    gt.lmax = 2;
    gt.coeffs = Eigen::MatrixXd::Zero(9, 3);
    for (Eigen::Index i = 0; i < gt.coeffs.size(); ++i) gt.coeffs.data()[i] = 0.25 * rng.normal();
    gt.coeffs.row(0) << 4.0, 4.0, 4.0;  // keep the signal positive
    const EnvironmentImage img = rasterize_sh(gt, 64, 128);
    const SHCoefficients refit = fit_sh(img, 2);
    const EnvironmentImage recon = rasterize_sh(refit, 64, 128);
    double mse = 0.0, lo = 1e30, hi = -1e30;
    for (std::size_t p = 0; p < img.pixel_count() * 3; ++p) {
      const double a = std::log(std::max(static_cast<double>(img.pixels[p]), 1e-8));
      const double b = std::log(std::max(static_cast<double>(recon.pixels[p]), 1e-8));
      mse += (a - b) * (a - b);
      lo = std::min(lo, a);
      hi = std::max(hi, a);
    }
    mse /= static_cast<double>(img.pixel_count() * 3);
    const double psnr = 10.0 * std::log10((hi - lo) * (hi - lo) / std::max(mse, 1e-300));
    CHECK(psnr > 50.0);
  }

  SECTION("order-to-dimension mapping") {
    CHECK(sh_order_for_dim(27) == 2);
    CHECK(sh_order_for_dim(108) == 5);
    CHECK(sh_order_for_dim(147) == 6);
    CHECK(sh_order_for_dim(300) == 9);
    CHECK_THROWS_AS(sh_order_for_dim(28), std::invalid_argument);
  }
}

TEST_CASE("sg evaluation") {
  SGLobe lobe;
  lobe.amplitude << 2.0, 1.0, 0.5;
  lobe.axis = {0, 1, 0};
  lobe.sharpness = 7.0;

  SECTION("peak value at the axis") {
    const Eigen::Vector3d v = evaluate_sg({lobe}, {0, 1, 0});
    CHECK(v(0) == Catch::Approx(2.0));
    CHECK(v(2) == Catch::Approx(0.5));
  }

  SECTION("zero sharpness is constant") {
    SGLobe flat = lobe;
    flat.sharpness = 0.0;
    Rng rng(2);
    for (int i = 0; i < 10; ++i) {
      const Eigen::Vector3d v = evaluate_sg({flat}, sample_direction(rng));
      CHECK(v(0) == Catch::Approx(2.0));
    }
  }

  SECTION("orthogonal direction with unit sharpness") {
    SGLobe unit = lobe;
    unit.sharpness = 1.0;
    const Eigen::Vector3d v = evaluate_sg({unit}, {1, 0, 0});
    CHECK(v(0) == Catch::Approx(2.0 * std::exp(-1.0)));
  }

  SECTION("rotation equivariance by construction") {
    Rng rng(3);
    SGLobes lobes;
    for (int k = 0; k < 3; ++k) {
      SGLobe l;
      l.amplitude << rng.uniform(0.1, 2.0), rng.uniform(0.1, 2.0), rng.uniform(0.1, 2.0);
      l.axis = sample_direction(rng);
      l.sharpness = rng.uniform(0.0, 20.0);
      lobes.push_back(l);
    }
    const Mat3 r = rotation_about_axis(sample_direction(rng), rng.uniform(0.0, 2 * M_PI));
    SGLobes rotated = lobes;
    for (SGLobe& l : rotated) l.axis = normalized(r * l.axis);
    for (int i = 0; i < 20; ++i) {
      const Vec3 d = sample_direction(rng);
      const Eigen::Vector3d a = evaluate_sg(lobes, d);
      const Eigen::Vector3d b = evaluate_sg(rotated, normalized(r * d));
      CHECK((a - b).cwiseAbs().maxCoeff() < 1e-9);
    }
  }

  SECTION("lobe count for dimensionality biases upward") {
    CHECK(sg_lobe_count_for_dim(27) == 5);   // D = 30
    CHECK(sg_lobe_count_for_dim(108) == 18);
    CHECK(sg_lobe_count_for_dim(147) == 25); // D = 150
    CHECK(sg_lobe_count_for_dim(300) == 50);
  }
}

TEST_CASE("sg fitting") {
  const EnvironmentImage img = generate_synthetic_env(33, 32, 64);
  const SGFitResult fit = fit_sg(img, 5, 400, 3);

  SECTION("axes stay unit and parameters in range") {
    for (const SGLobe& l : fit.lobes) {
      CHECK(std::abs(l.axis.norm() - 1.0) < 1e-9);
      CHECK(l.sharpness >= 0.0);
      CHECK(l.amplitude.minCoeff() >= 0.0);
    }
  }

  SECTION("loss non-increasing on the 50-step moving average") {
    auto ma = [&fit](int begin) {
      double acc = 0.0;
      for (int i = begin; i < begin + 50; ++i)
        acc += fit.history[static_cast<std::size_t>(i)].loss;
      return acc / 50.0;
    };
    double prev = ma(0);
    for (int begin = 50; begin + 50 <= 400; begin += 50) {
      const double cur = ma(begin);
      CHECK(cur <= prev + 1e-4);
      prev = cur;
    }
  }
}
