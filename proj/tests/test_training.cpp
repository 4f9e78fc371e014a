#include <catch2/catch_amalgamated.hpp>
#include <filesystem>
#include <numeric>

#include "lumifield/synthetic.hpp"
#include "lumifield/training.hpp"

using namespace lumifield;

namespace {

TrainConfig small_train_config() {
  TrainConfig cfg;
  cfg.field.latent_channels = 3;
  cfg.field.heads = 2;
  cfg.field.layers = 2;
  cfg.field.hidden = 32;
  cfg.field.pe_frequencies = 4;
  cfg.field.mode = EquivarianceMode::so2;
  cfg.steps = 40;
  cfg.warmup_steps = 10;
  cfg.batch_size = 64;
  cfg.seed = 7;
  return cfg;
}

double window_mean(const std::vector<TrainStepStats>& hist, int begin, int end,
                   double TrainStepStats::*member) {
  double acc = 0.0;
  int n = 0;
  for (int i = begin; i < end && i < static_cast<int>(hist.size()); ++i) {
    acc += hist[static_cast<std::size_t>(i)].*member;
    ++n;
  }
  return acc / std::max(1, n);
}

}  // namespace

TEST_CASE("lr schedule anchors") {
  CHECK(lr_schedule(500, 50000, 500, 1e-3, 0.05) == Catch::Approx(1e-3).epsilon(0));
  CHECK(lr_schedule(50000, 50000, 500, 1e-3, 0.05) == Catch::Approx(5e-5).margin(1e-18));
  CHECK(lr_schedule(250, 50000, 500, 1e-3, 0.05) == Catch::Approx(5e-4).epsilon(0));
  CHECK(lr_schedule(501, 50000, 500, 1e-3, 0.05) < 1e-3);
  CHECK_THROWS_AS(lr_schedule(0, 50000, 500, 1e-3, 0.05), std::invalid_argument);
  CHECK_THROWS_AS(lr_schedule(50001, 50000, 500, 1e-3, 0.05), std::invalid_argument);
}

TEST_CASE("reparameterization") {
  Eigen::VectorXd mu(6), logvar(6), eps(6);
  mu << 1, 2, 3, 4, 5, 6;
  logvar.setZero();
  eps.setZero();

  SECTION("zero noise returns the mean, reshaped column-major") {
    const Mat<double> z = reparameterize<double>(mu, logvar, eps);
    REQUIRE(z.rows() == 3);
    REQUIRE(z.cols() == 2);
    CHECK(z(0, 0) == 1);
    CHECK(z(1, 0) == 2);
    CHECK(z(2, 0) == 3);
    CHECK(z(0, 1) == 4);
    CHECK(z(2, 1) == 6);
    CHECK((latent_to_vec(z) - mu).cwiseAbs().maxCoeff() == 0.0);
  }

  SECTION("unit logvar shifts by eps") {
    eps.setOnes();
    const Mat<double> z = reparameterize<double>(mu, logvar, eps);
    CHECK((latent_to_vec(z) - (mu.array() + 1.0).matrix()).cwiseAbs().maxCoeff() < 1e-15);
  }

  SECTION("unit variance under Monte Carlo") {
    Rng rng(123);
    const int draws = 100000;
    double acc = 0.0, acc2 = 0.0;
    for (int i = 0; i < draws; ++i) {
      Eigen::VectorXd e(6);
      for (int j = 0; j < 6; ++j) e(j) = rng.normal();
      const double v = reparameterize<double>(mu, logvar, e)(1, 0);  // dim 1
      acc += v;
      acc2 += v * v;
    }
    const double mean = acc / draws;
    const double var = acc2 / draws - mean * mean;
    CHECK(var == Catch::Approx(1.0).margin(0.02));
  }
}

TEST_CASE("dataset expansion") {
  std::vector<EnvironmentImage> base = {generate_synthetic_env(1, 16, 32)};
  CHECK(expand_dataset(base, false, 0).size() == 1);
  CHECK(expand_dataset(base, true, 0).size() == 2);
  CHECK(expand_dataset(base, false, 8).size() == 8);
  CHECK(expand_dataset(base, true, 8).size() == 16);
  const auto expanded = expand_dataset(base, false, 4);
  for (const auto& img : expanded)
    CHECK(img.total_energy() == Catch::Approx(base[0].total_energy()).epsilon(0));
}

TEST_CASE("training is deterministic given the seed") {
  std::vector<EnvironmentImage> data = {generate_synthetic_env(2, 16, 32),
                                        generate_synthetic_env(3, 16, 32)};
  const TrainConfig cfg = small_train_config();
  const auto a = train<float>(data, cfg);
  const auto b = train<float>(data, cfg);
  REQUIRE(a.history.size() == b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    CHECK(a.history[i].total == b.history[i].total);
    CHECK(a.history[i].kld == b.history[i].kld);
  }
  CHECK((a.bank.mu - b.bank.mu).cwiseAbs().maxCoeff() == 0.0f);
}

TEST_CASE("degenerate fit of a constant image") {
  EnvironmentImage img = EnvironmentImage::zero(16, 32);
  for (float& v : img.pixels) v = 0.7f;

  TrainConfig cfg = small_train_config();
  cfg.steps = 1500;
  cfg.warmup_steps = 50;
  cfg.batch_size = 128;
  cfg.weights.beta = 0.0;
  const auto result = train<float>({img}, cfg);
  CHECK(window_mean(result.history, cfg.steps - 50, cfg.steps, &TrainStepStats::scale_inv) < 1e-3);
}

TEST_CASE("smoke training run converges") {
  std::vector<EnvironmentImage> data;
  for (std::uint64_t s = 0; s < 8; ++s) data.push_back(generate_synthetic_env(s + 10, 32, 64));

  TrainConfig cfg;
  cfg.field.latent_channels = 9;  // D = 27
  cfg.field.heads = 4;
  cfg.field.layers = 3;
  cfg.field.hidden = 64;
  cfg.field.mode = EquivarianceMode::so2;
  cfg.steps = 2000;
  cfg.warmup_steps = 100;
  cfg.batch_size = 512;
  cfg.seed = 11;

  const auto result = train<float>(data, cfg);

  // scale-invariant loss around step 100 vs the end of the run
  const double early = window_mean(result.history, 50, 150, &TrainStepStats::scale_inv);
  const double late = window_mean(result.history, cfg.steps - 100, cfg.steps,
                                  &TrainStepStats::scale_inv);
  CHECK(late < 0.25 * early);

  // 500-step moving averages of the total loss keep improving
  const double ma_1000 = window_mean(result.history, 500, 1000, &TrainStepStats::total);
  const double ma_end = window_mean(result.history, cfg.steps - 500, cfg.steps,
                                    &TrainStepStats::total);
  CHECK(ma_end < ma_1000);

  // KLD stays finite and non-negative
  for (const auto& s : result.history) {
    CHECK(std::isfinite(s.kld));
    CHECK(s.kld >= -1e-9);
  }

  // mean environment stays a function of elevation only
  Mat<float> z0 = Mat<float>::Zero(3, cfg.field.latent_channels);
  const double elev = -0.3;
  Eigen::Vector3f ref;
  float spread = 0.0f;
  for (int i = 0; i < 64; ++i) {
    const double theta = 2 * M_PI * i / 64.0;
    const Vec3 d{std::cos(elev) * std::cos(theta), std::sin(elev),
                 std::cos(elev) * std::sin(theta)};
    const auto out = field_forward(result.model, normalized(d), z0);
    if (i == 0)
      ref = out;
    else
      spread = std::max(spread, (out - ref).cwiseAbs().maxCoeff());
  }
  CHECK(spread < 1e-5f);

  // checkpoint with latent bank round-trips
  const auto path = (std::filesystem::temp_directory_path() / "lumifield_train.ckpt").string();
  save_training_checkpoint(path, result.model, result.bank);
  const Checkpoint ckpt = read_checkpoint(path);
  const auto bank = load_latent_bank<float>(ckpt);
  CHECK((bank.mu - result.bank.mu).cwiseAbs().maxCoeff() == 0.0f);
  CHECK(load_field_model<float>(ckpt).parameter_count() == result.model.parameter_count());
  std::filesystem::remove(path);
}

TEST_CASE("training aborts on divergence with a step index") {
  std::vector<EnvironmentImage> data = {generate_synthetic_env(4, 16, 32)};
  TrainConfig cfg = small_train_config();
  cfg.steps = 50;
  cfg.warmup_steps = 1;
  cfg.lr0 = 1e12;  // guaranteed blow-up
  try {
    train<float>(data, cfg);
    FAIL("expected divergence");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("step") != std::string::npos);
  }
}
