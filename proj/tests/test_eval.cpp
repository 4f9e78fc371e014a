#include <catch2/catch_amalgamated.hpp>
#include <filesystem>

#include "lumifield/metrics.hpp"
#include "lumifield/synthetic.hpp"

using namespace lumifield;

namespace {

EnvironmentImage constant_env(int h, int w, float value) {
  EnvironmentImage img = EnvironmentImage::zero(h, w);
  for (float& v : img.pixels) v = value;
  return img;
}

}  // namespace

TEST_CASE("tone map") {
  EnvironmentImage img = constant_env(4, 8, 1.0f);
  CHECK(tone_map(img, 0.0).pixels[0] == Catch::Approx(1.0f));

  img.pixels[5] = 0.0f;
  CHECK(tone_map(img, 0.0).pixels[5] == 0.0f);

  for (float& v : img.pixels) v = 0.5f;
  CHECK(tone_map(img, 0.0).pixels[0] == Catch::Approx(std::pow(0.5, 1.0 / 2.2)).margin(1e-4));

  // values above 1 clamp before the gamma
  for (float& v : img.pixels) v = 7.0f;
  CHECK(tone_map(img, 0.0).pixels[0] == 1.0f);
}

TEST_CASE("psnr") {
  Eigen::MatrixXd a = Eigen::MatrixXd::Constant(4, 4, 0.25);
  CHECK(std::isinf(psnr(a, a, 1.0)));

  Eigen::MatrixXd b = a;
  b.array() += 0.1;  // mse = 0.01
  CHECK(psnr(a, b, 1.0) == Catch::Approx(20.0).margin(1e-9));
}

TEST_CASE("ssim") {
  Rng rng(2);
  Eigen::MatrixXd a(24, 32);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = rng.uniform();
  CHECK(ssim(a, a) == Catch::Approx(1.0).margin(1e-12));

  Eigen::MatrixXd b(24, 32);
  for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = rng.uniform();
  CHECK(ssim(a, b) == Catch::Approx(ssim(b, a)).margin(1e-9));
  CHECK(ssim(a, b) < 0.9);
}

TEST_CASE("hdr psnr is exposure invariant") {
  const EnvironmentImage gt = generate_synthetic_env(3, 32, 64);
  EnvironmentImage pred = generate_synthetic_env(4, 32, 64);
  const double base = psnr_hdr_log(pred, gt);
  for (float& v : pred.pixels) v *= 10.0f;
  const double scaled = psnr_hdr_log(pred, gt);
  CHECK(std::abs(scaled - base) < 1e-6);

  // identical environments score infinitely well
  CHECK(std::isinf(psnr_hdr_log(gt, gt)));
}

TEST_CASE("ldr metrics behave sensibly") {
  const EnvironmentImage gt = generate_synthetic_env(5, 32, 64);
  EnvironmentImage close = gt;
  for (float& v : close.pixels) v *= 1.02f;  // near-exposure copy
  const EnvironmentImage far = generate_synthetic_env(6, 32, 64);
  CHECK(psnr_ldr(close, gt) > psnr_ldr(far, gt));
  CHECK(ssim_ldr(close, gt) > ssim_ldr(far, gt));
  CHECK(ssim_ldr(close, gt) > 0.99);
}

TEST_CASE("equivariance audit separates the modes") {
  FieldConfig cfg;
  cfg.latent_channels = 4;
  cfg.heads = 2;
  cfg.layers = 2;
  cfg.hidden = 32;
  cfg.pe_frequencies = 4;

  cfg.mode = EquivarianceMode::so2;
  CHECK(equivariance_audit(FieldModel<float>::random_init(cfg, 1), 100, 9) < 1e-4);

  cfg.mode = EquivarianceMode::so3;
  CHECK(equivariance_audit(FieldModel<float>::random_init(cfg, 2), 100, 9) < 1e-4);

  cfg.mode = EquivarianceMode::none;
  CHECK(equivariance_audit(FieldModel<float>::random_init(cfg, 3), 100, 9) > 1e-2);
}

TEST_CASE("report emission") {
  MetricReport report;
  report.rows = {{"env0", 20.0, 30.0, 0.8}, {"env1", 24.0, 34.0, 0.9}};
  report.finalize();
  CHECK(report.mean.psnr_ldr == Catch::Approx(22.0));
  CHECK(report.mean.ssim == Catch::Approx(0.85));

  const auto dir = std::filesystem::temp_directory_path();
  const auto csv = (dir / "lumifield_report.csv").string();
  const auto md = (dir / "lumifield_report.md").string();
  write_metric_csv(report, csv);
  write_metric_markdown(report, md);
  std::ifstream f(csv);
  std::string first;
  std::getline(f, first);
  CHECK(first == "name,psnr_ldr,psnr_hdr,ssim");
  std::filesystem::remove(csv);
  std::filesystem::remove(md);

  const EnvironmentImage gt = generate_synthetic_env(11, 16, 32);
  const EnvironmentImage recon = generate_synthetic_env(12, 16, 32);
  const auto trip = (dir / "lumifield_triptych.png").string();
  save_png_triptych(gt, recon, trip);
  const PngImage png = read_png(trip);
  CHECK(png.height == 48);
  CHECK(png.width == 32);
  std::filesystem::remove(trip);
}

TEST_CASE("rotation table rows for an analytic latent pair") {
  // bypass fitting: the rotated latent is exactly R_y of the original
  Rng rng(13);
  Mat<double> z(3, 9);
  for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = rng.normal();
  for (double deg : {5.0, 20.0, 45.0, 90.0, 180.0, 270.0}) {
    const Mat<double> z_rot = rotate_latent(z, rotation_y(deg * M_PI / 180.0));
    const AlignmentResult res = rotation_alignment(z, z_rot);
    CHECK(res.error < 1e-6);
  }
}
