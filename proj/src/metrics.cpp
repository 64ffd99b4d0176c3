#include "mvdpp/metrics.hpp"

#include "mvdpp/recon.hpp"
#include "mvdpp/synthdata.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace mvdpp::metrics {

double psnr(const img::ImageRGB& a, const img::ImageRGB& b) {
  if (a.width != b.width || a.height != b.height)
    throw std::invalid_argument("psnr: shape mismatch");
  double mse = 0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    double d = static_cast<double>(a.data[i]) - b.data[i];
    mse += d * d;
  }
  mse /= a.data.size();
  if (mse == 0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

namespace {

std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> w(static_cast<size_t>(size) * size);
  int half = size / 2;
  double sum = 0;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      double dx = x - half, dy = y - half;
      double v = std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
      w[static_cast<size_t>(y) * size + x] = v;
      sum += v;
    }
  for (auto& v : w) v /= sum;
  return w;
}

}  // namespace

double ssim(const img::ImageRGB& a, const img::ImageRGB& b) {
  if (a.width != b.width || a.height != b.height)
    throw std::invalid_argument("ssim: shape mismatch");
  constexpr int kWin = 11;
  if (a.width < kWin || a.height < kWin)
    throw std::invalid_argument("ssim: image smaller than the 11x11 window");
  constexpr double kC1 = 0.01 * 0.01, kC2 = 0.03 * 0.03;
  static const std::vector<double> w = gaussian_window(kWin, 1.5);

  double acc = 0;
  std::int64_t count = 0;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y + kWin <= a.height; ++y)
      for (int x = 0; x + kWin <= a.width; ++x) {
        double mx = 0, my = 0, mxx = 0, myy = 0, mxy = 0;
        for (int j = 0; j < kWin; ++j)
          for (int i = 0; i < kWin; ++i) {
            double wij = w[static_cast<size_t>(j) * kWin + i];
            double pa = a.at(y + j, x + i, c), pb = b.at(y + j, x + i, c);
            mx += wij * pa;
            my += wij * pb;
            mxx += wij * pa * pa;
            myy += wij * pb * pb;
            mxy += wij * pa * pb;
          }
        double vx = mxx - mx * mx, vy = myy - my * my, cov = mxy - mx * my;
        acc += ((2 * mx * my + kC1) * (2 * cov + kC2)) / ((mx * mx + my * my + kC1) * (vx + vy + kC2));
        ++count;
      }
  return acc / count;
}

EvalReport evaluate(const std::string& run_dir, const std::string& dataset_dir, int object_index) {
  std::vector<std::string> missing;
  fs::path run_manifest = fs::path(run_dir) / "manifest.json";
  if (!fs::exists(run_manifest)) missing.push_back(run_manifest.string());
  if (!fs::exists(fs::path(dataset_dir) / "manifest.json"))
    missing.push_back((fs::path(dataset_dir) / "manifest.json").string());
  if (!missing.empty()) {
    std::string msg = "evaluate: missing artifacts:";
    for (const auto& m : missing) msg += " " + m;
    throw std::runtime_error(msg);
  }

  synth::DatasetManifest ds = synth::load_manifest(dataset_dir);
  if (object_index < 0 || object_index >= static_cast<int>(ds.entries.size()))
    throw std::invalid_argument("evaluate: object index out of range");
  const auto& entry = ds.entries[object_index];

  std::ifstream in(run_manifest);
  json jm = json::parse(in);

  EvalReport report;
  for (const auto& jv : jm.at("views")) {
    int idx = jv.at("index").get<int>();
    fs::path gen_img = fs::path(run_dir) / jv.at("image").get<std::string>();
    if (!fs::exists(gen_img)) missing.push_back(gen_img.string());
    if (idx < 0 || idx >= static_cast<int>(entry.target_views.size()))
      throw std::invalid_argument("evaluate: generated view index out of range");
    if (!missing.empty()) continue;
    img::ImageRGB gen = img::read_png_rgb(gen_img.string());
    img::ImageRGB gt = img::read_png_rgb((fs::path(dataset_dir) / entry.target_views[idx].image_file).string());
    ViewScore s;
    s.view = idx;
    s.psnr = psnr(gen, gt);
    s.ssim = ssim(gen, gt);
    report.per_view.push_back(s);
  }
  if (!missing.empty()) {
    std::string msg = "evaluate: missing artifacts:";
    for (const auto& m : missing) msg += " " + m;
    throw std::runtime_error(msg);
  }
  if (report.per_view.empty()) throw std::runtime_error("evaluate: run contains no views");
  for (const auto& s : report.per_view) {
    report.mean_psnr += s.psnr;
    report.mean_ssim += s.ssim;
  }
  report.mean_psnr /= report.per_view.size();
  report.mean_ssim /= report.per_view.size();

  fs::path grid_path = fs::path(run_dir) / "recon_grid.bin";
  if (fs::exists(grid_path)) {
    recon::OccupancyGrid hull = recon::load_grid(grid_path.string());
    recon::OccupancyGrid gt = recon::load_grid((fs::path(dataset_dir) / entry.grid_file).string());
    if (hull.res != gt.res)
      throw std::runtime_error("evaluate: reconstruction resolution differs from ground truth");
    report.volume_iou = recon::volume_iou(hull, gt);
    auto pa = recon::sample_surface_points(hull, 8192, 0);
    auto pb = recon::sample_surface_points(gt, 8192, 0);
    report.chamfer = recon::chamfer(pa, pb);
  }
  return report;
}

namespace {

double json_safe(double v) {
  // JSON has no infinity literal; store a large sentinel.
  return std::isinf(v) ? 1e9 : v;
}

}  // namespace

void save_report(const std::string& path, const EvalReport& r) {
  json j;
  j["per_view"] = json::array();
  for (const auto& s : r.per_view)
    j["per_view"].push_back({{"view", s.view}, {"psnr", json_safe(s.psnr)}, {"ssim", s.ssim}});
  j["mean_psnr"] = json_safe(r.mean_psnr);
  j["mean_ssim"] = r.mean_ssim;
  if (r.volume_iou >= 0) {
    j["volume_iou"] = r.volume_iou;
    j["chamfer"] = r.chamfer;
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_report: cannot open " + path);
  out << j.dump(1) << '\n';
}

EvalReport load_report(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_report: cannot open " + path);
  json j = json::parse(in);
  EvalReport r;
  for (const auto& js : j.at("per_view")) {
    ViewScore s;
    s.view = js.at("view").get<int>();
    s.psnr = js.at("psnr").get<double>();
    s.ssim = js.at("ssim").get<double>();
    r.per_view.push_back(s);
  }
  r.mean_psnr = j.at("mean_psnr").get<double>();
  r.mean_ssim = j.at("mean_ssim").get<double>();
  r.volume_iou = j.value("volume_iou", -1.0);
  r.chamfer = j.value("chamfer", -1.0);
  return r;
}

}  // namespace mvdpp::metrics
