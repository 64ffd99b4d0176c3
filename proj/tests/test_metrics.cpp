#include "mvdpp/metrics.hpp"

#include "mvdpp/synthdata.hpp"

#include <nlohmann/json.hpp>

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

using namespace mvdpp;
namespace fs = std::filesystem;

namespace {

img::ImageRGB constant_image(int n, float v) {
  img::ImageRGB im;
  im.height = n;
  im.width = n;
  im.data.assign(static_cast<size_t>(n) * n * 3, v);
  return im;
}

img::ImageRGB random_image(int n, std::mt19937_64& rng) {
  auto im = constant_image(n, 0);
  std::uniform_real_distribution<float> u(0, 1);
  for (auto& v : im.data) v = u(rng);
  return im;
}

// Independent SSIM reference: separable 1-D Gaussian weights, covariance
// accumulated per window directly from the definition.
double ssim_reference(const img::ImageRGB& a, const img::ImageRGB& b) {
  const int win = 11, half = 5;
  std::vector<double> g(win);
  double gs = 0;
  for (int i = 0; i < win; ++i) {
    g[i] = std::exp(-(i - half) * (i - half) / (2.0 * 1.5 * 1.5));
    gs += g[i];
  }
  for (auto& v : g) v /= gs;

  double total = 0;
  long count = 0;
  for (int c = 0; c < 3; ++c)
    for (int y0 = 0; y0 + win <= a.height; ++y0)
      for (int x0 = 0; x0 + win <= a.width; ++x0) {
        double mx = 0, my = 0;
        for (int j = 0; j < win; ++j)
          for (int i = 0; i < win; ++i) {
            double w = g[j] * g[i];
            mx += w * a.at(y0 + j, x0 + i, c);
            my += w * b.at(y0 + j, x0 + i, c);
          }
        double vx = 0, vy = 0, cov = 0;
        for (int j = 0; j < win; ++j)
          for (int i = 0; i < win; ++i) {
            double w = g[j] * g[i];
            double da = a.at(y0 + j, x0 + i, c) - mx;
            double db = b.at(y0 + j, x0 + i, c) - my;
            vx += w * da * da;
            vy += w * db * db;
            cov += w * da * db;
          }
        const double c1 = 1e-4, c2 = 9e-4;
        total += ((2 * mx * my + c1) * (2 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        ++count;
      }
  return total / count;
}

}  // namespace

TEST_CASE("psnr closed forms") {
  auto a = constant_image(16, 0.5f);
  CHECK(std::isinf(metrics::psnr(a, a)));

  // 0.6f - 0.5f is not exactly 0.1 in float, so allow for that quantization.
  auto b = constant_image(16, 0.6f);
  CHECK(metrics::psnr(a, b) == doctest::Approx(20.0).epsilon(1e-5));

  auto z = constant_image(16, 0.0f);
  auto o = constant_image(16, 1.0f);
  CHECK(metrics::psnr(z, o) == doctest::Approx(0.0).epsilon(1e-12));

  CHECK_THROWS_AS(metrics::psnr(a, constant_image(8, 0.5f)), std::invalid_argument);
}

TEST_CASE("psnr decreases monotonically with noise level") {
  std::mt19937_64 rng(1);
  auto base = random_image(32, rng);
  double prev = std::numeric_limits<double>::infinity();
  std::normal_distribution<float> nd(0.0f, 1.0f);
  std::mt19937_64 noise_rng(2);
  std::vector<float> noise(base.data.size());
  for (auto& v : noise) v = nd(noise_rng);
  for (double sigma : {0.01, 0.03, 0.1, 0.3}) {
    auto noisy = base;
    for (size_t i = 0; i < noisy.data.size(); ++i)
      noisy.data[i] = std::clamp(noisy.data[i] + static_cast<float>(sigma) * noise[i], -10.0f, 10.0f);
    double p = metrics::psnr(base, noisy);
    CHECK(p < prev);
    prev = p;
  }
}

TEST_CASE("ssim closed forms and symmetry") {
  std::mt19937_64 rng(3);
  auto a = random_image(24, rng);
  CHECK(metrics::ssim(a, a) == doctest::Approx(1.0).epsilon(1e-9));

  auto z = constant_image(24, 0.0f);
  auto o = constant_image(24, 1.0f);
  CHECK(std::abs(metrics::ssim(z, o) - 1e-4 / 1.0001) < 1e-6);

  auto b = random_image(24, rng);
  CHECK(std::abs(metrics::ssim(a, b) - metrics::ssim(b, a)) < 1e-9);

  CHECK_THROWS_AS(metrics::ssim(constant_image(8, 0.5f), constant_image(8, 0.5f)),
                  std::invalid_argument);
  CHECK_THROWS_AS(metrics::ssim(a, constant_image(16, 0.5f)), std::invalid_argument);
}

TEST_CASE("ssim matches an independent reference implementation") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 3; ++trial) {
    auto a = random_image(20, rng);
    auto b = a;
    std::normal_distribution<float> nd(0.0f, 0.1f);
    for (auto& v : b.data) v += nd(rng);
    CHECK(std::abs(metrics::ssim(a, b) - ssim_reference(a, b)) < 1e-4);
  }
}

TEST_CASE("evaluate against ground truth copied into a run directory") {
  fs::path ds = fs::temp_directory_path() / "mvdpp_metrics_ds";
  fs::path run = fs::temp_directory_path() / "mvdpp_metrics_run";
  fs::remove_all(ds);
  fs::remove_all(run);
  fs::create_directories(run);

  synth::DatasetConfig cfg;
  cfg.n_objects = 1;
  cfg.grid_res = 16;
  cfg.seed = 3;
  auto m = synth::build_dataset(cfg, ds.string());

  nlohmann::json manifest;
  manifest["views"] = nlohmann::json::array();
  for (int idx : {0, 7, 19}) {
    std::string name = "view_" + std::to_string(idx) + ".png";
    fs::copy_file(ds / m.entries[0].target_views[idx].image_file, run / name);
    manifest["views"].push_back({{"index", idx}, {"image", name}});
  }
  {
    std::ofstream out(run / "manifest.json");
    out << manifest.dump(1);
  }

  auto r = metrics::evaluate(run.string(), ds.string(), 0);
  REQUIRE(r.per_view.size() == 3);
  for (const auto& s : r.per_view) {
    CHECK(std::isinf(s.psnr));
    CHECK(s.ssim == doctest::Approx(1.0).epsilon(1e-9));
  }
  CHECK(r.chamfer == -1);  // no reconstruction present
  CHECK(r.volume_iou == -1);

  // Report roundtrip (infinity becomes the 1e9 sentinel).
  auto rp = (run / "report.json").string();
  metrics::save_report(rp, r);
  auto loaded = metrics::load_report(rp);
  REQUIRE(loaded.per_view.size() == 3);
  CHECK(loaded.per_view[1].view == 7);
  CHECK(loaded.mean_psnr == doctest::Approx(1e9));
  CHECK(loaded.mean_ssim == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(loaded.volume_iou == -1);

  // Missing artifacts are named explicitly.
  fs::remove(run / "view_7.png");
  try {
    metrics::evaluate(run.string(), ds.string(), 0);
    FAIL("expected missing-artifact error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("view_7.png") != std::string::npos);
  }
  CHECK_THROWS_AS(metrics::evaluate((run / "nope").string(), ds.string(), 0), std::runtime_error);
  fs::remove_all(ds);
  fs::remove_all(run);
}
