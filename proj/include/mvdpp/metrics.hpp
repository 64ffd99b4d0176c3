#pragma once

#include "mvdpp/image.hpp"

#include <string>
#include <vector>

namespace mvdpp::metrics {

// 10*log10(1/MSE) with MAX=1; identical images return +infinity.
double psnr(const img::ImageRGB& a, const img::ImageRGB& b);

// Single-scale SSIM: 11x11 Gaussian window sigma=1.5, K1=0.01, K2=0.03,
// L=1, valid window positions, averaged over channels.
double ssim(const img::ImageRGB& a, const img::ImageRGB& b);

struct ViewScore {
  int view = 0;
  double psnr = 0;
  double ssim = 0;
};

struct EvalReport {
  std::vector<ViewScore> per_view;
  double mean_psnr = 0;
  double mean_ssim = 0;
  double chamfer = -1;     // -1 when no reconstruction present
  double volume_iou = -1;
};

// Compares a generation run directory (images + manifest + optional
// reconstruction grid) against the ground truth of one dataset object.
EvalReport evaluate(const std::string& run_dir, const std::string& dataset_dir, int object_index);

void save_report(const std::string& path, const EvalReport& r);
EvalReport load_report(const std::string& path);

}  // namespace mvdpp::metrics
