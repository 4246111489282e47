#include "risemar/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "risemar/models/cqanet.hpp"
#include "risemar/nn/tensor.hpp"

namespace risemar::metrics {

namespace {
constexpr int kWin = 11;
constexpr int kHalf = kWin / 2;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;  // (K1*L)^2 with L=1
constexpr double kC2 = 0.03 * 0.03;

std::vector<double> gauss_kernel() {
  std::vector<double> k(kWin);
  double s = 0.0;
  for (int i = 0; i < kWin; ++i) {
    const double d = i - kHalf;
    k[i] = std::exp(-d * d / (2.0 * kSigma * kSigma));
    s += k[i];
  }
  for (auto& v : k) v /= s;
  return k;
}

// Separable Gaussian filter; only interior pixels (full support) are valid.
Grid gauss_filter(const Grid& img) {
  static const std::vector<double> k = gauss_kernel();
  Grid tmp(img.rows, img.cols), out(img.rows, img.cols);
  for (int r = 0; r < img.rows; ++r)
    for (int c = kHalf; c < img.cols - kHalf; ++c) {
      double s = 0.0;
      for (int i = 0; i < kWin; ++i) s += k[i] * img.at(r, c - kHalf + i);
      tmp.at(r, c) = s;
    }
  for (int r = kHalf; r < img.rows - kHalf; ++r)
    for (int c = kHalf; c < img.cols - kHalf; ++c) {
      double s = 0.0;
      for (int i = 0; i < kWin; ++i) s += k[i] * tmp.at(r - kHalf + i, c);
      out.at(r, c) = s;
    }
  return out;
}

void check_shapes(const Grid& a, const Grid& b, const Grid& m,
                  const char* who) {
  if (!a.same_shape(b) || !a.same_shape(m))
    throw std::invalid_argument(std::string(who) + ": shape mismatch");
}
}  // namespace

double mae(const Grid& pred, const Grid& gt, const Grid& include_mask) {
  check_shapes(pred, gt, include_mask, "mae");
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (include_mask.v[i] != 0.0) {
      s += std::abs(pred.v[i] - gt.v[i]);
      ++n;
    }
  if (n == 0) throw std::invalid_argument("mae: empty mask");
  return s / static_cast<double>(n);
}

double psnr(const Grid& pred, const Grid& gt, const Grid& metal_mask) {
  check_shapes(pred, gt, metal_mask, "psnr");
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (metal_mask.v[i] == 0.0) {
      const double d = pred.v[i] - gt.v[i];
      s += d * d;
      ++n;
    }
  if (n == 0) throw std::invalid_argument("psnr: no non-metal pixels");
  const double mse = s / static_cast<double>(n);
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

double ssim(const Grid& pred, const Grid& gt, const Grid& metal_mask) {
  check_shapes(pred, gt, metal_mask, "ssim");
  if (pred.rows < kWin || pred.cols < kWin)
    throw std::invalid_argument("ssim: image smaller than the 11x11 window");

  Grid xx(pred.rows, pred.cols), yy(pred.rows, pred.cols),
      xy(pred.rows, pred.cols);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    xx.v[i] = pred.v[i] * pred.v[i];
    yy.v[i] = gt.v[i] * gt.v[i];
    xy.v[i] = pred.v[i] * gt.v[i];
  }
  const Grid mx = gauss_filter(pred), my = gauss_filter(gt);
  const Grid mxx = gauss_filter(xx), myy = gauss_filter(yy),
             mxy = gauss_filter(xy);

  // integral image of the metal mask for O(1) window-purity queries
  Grid integ(pred.rows + 1, pred.cols + 1);
  for (int r = 0; r < pred.rows; ++r)
    for (int c = 0; c < pred.cols; ++c)
      integ.at(r + 1, c + 1) = metal_mask.at(r, c) + integ.at(r, c + 1) +
                               integ.at(r + 1, c) - integ.at(r, c);
  auto window_has_metal = [&](int r, int c) {
    const int r0 = r - kHalf, c0 = c - kHalf;
    return integ.at(r0 + kWin, c0 + kWin) - integ.at(r0, c0 + kWin) -
               integ.at(r0 + kWin, c0) + integ.at(r0, c0) >
           0.0;
  };

  double acc = 0.0;
  std::size_t n = 0;
  for (int r = kHalf; r < pred.rows - kHalf; ++r)
    for (int c = kHalf; c < pred.cols - kHalf; ++c) {
      if (window_has_metal(r, c)) continue;
      const double ux = mx.at(r, c), uy = my.at(r, c);
      const double vx = mxx.at(r, c) - ux * ux;
      const double vy = myy.at(r, c) - uy * uy;
      const double cov = mxy.at(r, c) - ux * uy;
      acc += ((2 * ux * uy + kC1) * (2 * cov + kC2)) /
             ((ux * ux + uy * uy + kC1) * (vx + vy + kC2));
      ++n;
    }
  if (n == 0)
    throw std::invalid_argument("ssim: no metal-free windows to average");
  return acc / static_cast<double>(n);
}

namespace {
std::vector<double> mean_ranks(const std::vector<double>& x) {
  const std::size_t n = x.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> rank(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && x[order[j + 1]] == x[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;  // mean rank, 1-based
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = r;
    i = j + 1;
  }
  return rank;
}
}  // namespace

double plcc(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2)
    throw std::invalid_argument("plcc: need two equal-length vectors, n >= 2");
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0)
    return std::numeric_limits<double>::quiet_NaN();
  return sab / std::sqrt(saa * sbb);
}

double srcc(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2)
    throw std::invalid_argument("srcc: need two equal-length vectors, n >= 2");
  return plcc(mean_ranks(a), mean_ranks(b));
}

double cqa_quality_metric(const models::CQANet& net,
                          const std::vector<Grid>& images) {
  if (images.empty()) throw std::invalid_argument("cqa_quality_metric: empty set");
  nn::NoGradGuard ng;
  double total = 0.0;
  for (const auto& img : images) {
    nn::Tensor x = nn::Tensor::from_vector({1, 1, img.rows, img.cols}, img.v);
    models::CQAOut out = net.forward(x);
    double q = 0.0;  // expectation of the class index, i.e. prob2qua
    for (int k = 0; k < 10; ++k)
      q += (k + 1) * out.prob.values()[static_cast<std::size_t>(k)];
    total += q;
  }
  return total / static_cast<double>(images.size());
}

namespace {
std::string fmt(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}
}  // namespace

void write_report_csv(const std::string& path,
                      const std::vector<SampleMetrics>& rows) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open report for write: " + path);
  os << "sample_id,domain,psnr,ssim,mae,cqa_quality\n";
  SampleMetrics agg{"aggregate", "all", 0, 0, 0, 0};
  std::size_t n_finite_psnr = 0;
  for (const auto& r : rows) {
    os << r.sample_id << ',' << r.domain << ',' << fmt(r.psnr) << ','
       << fmt(r.ssim) << ',' << fmt(r.mae) << ',' << fmt(r.cqa_quality)
       << '\n';
    if (std::isfinite(r.psnr)) {
      agg.psnr += r.psnr;
      ++n_finite_psnr;
    }
    agg.ssim += r.ssim;
    agg.mae += r.mae;
    agg.cqa_quality += r.cqa_quality;
  }
  if (!rows.empty()) {
    const double n = static_cast<double>(rows.size());
    agg.psnr = n_finite_psnr
                   ? agg.psnr / static_cast<double>(n_finite_psnr)
                   : std::numeric_limits<double>::infinity();
    agg.ssim /= n;
    agg.mae /= n;
    agg.cqa_quality /= n;
  }
  os << agg.sample_id << ',' << agg.domain << ',' << fmt(agg.psnr) << ','
     << fmt(agg.ssim) << ',' << fmt(agg.mae) << ',' << fmt(agg.cqa_quality)
     << '\n';
}

}  // namespace risemar::metrics
