#pragma once

#include <string>
#include <vector>

#include "risemar/ctphys/ctphys.hpp"

namespace risemar::models {
class CQANet;
}

namespace risemar::metrics {

using ctphys::Grid;

// Mean absolute error over pixels where include_mask is nonzero.
double mae(const Grid& pred, const Grid& gt, const Grid& include_mask);

// 10*log10(1/MSE) on normalized [0,1] images, metal pixels excluded
// (peak = 1.0). Identical images return +infinity.
double psnr(const Grid& pred, const Grid& gt, const Grid& metal_mask);

// Single-scale SSIM, 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03,
// dynamic range 1.0, averaged over windows lying fully outside metal.
double ssim(const Grid& pred, const Grid& gt, const Grid& metal_mask);

// Spearman rank correlation with mean ranks for ties. Constant input gives
// a quiet-NaN sentinel.
double srcc(const std::vector<double>& a, const std::vector<double>& b);

// Pearson linear correlation; NaN sentinel for constant input.
double plcc(const std::vector<double>& a, const std::vector<double>& b);

// Mean prob2qua score of a frozen CQA network over an image set.
double cqa_quality_metric(const models::CQANet& net,
                          const std::vector<Grid>& images);

struct SampleMetrics {
  std::string sample_id;
  std::string domain;
  double psnr = 0.0;
  double ssim = 0.0;
  double mae = 0.0;
  double cqa_quality = 0.0;
};

// CSV with one row per sample plus a final aggregate row; infinite PSNR is
// written as the literal "inf".
void write_report_csv(const std::string& path,
                      const std::vector<SampleMetrics>& rows);

}  // namespace risemar::metrics
