#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "risemar/core/random.hpp"
#include "risemar/metrics/metrics.hpp"
#include "risemar/models/cqanet.hpp"

using namespace risemar;
using namespace risemar::metrics;
using ctphys::Grid;

namespace {

Grid random_image(int n, Rng& rng, double lo = 0.0, double hi = 1.0) {
  Grid g(n, n);
  for (auto& v : g.v) v = rng.uniform(lo, hi);
  return g;
}

// Direct 11x11 windowed SSIM, written independently of the separable-filter
// implementation in the library.
double ssim_reference(const Grid& x, const Grid& y, const Grid& metal) {
  const int W = 11, H = W / 2;
  const double sig = 1.5, C1 = 1e-4, C2 = 9e-4;
  std::vector<double> w(static_cast<std::size_t>(W) * W);
  double wsum = 0.0;
  for (int i = 0; i < W; ++i)
    for (int j = 0; j < W; ++j) {
      const double d2 = (i - H) * (i - H) + (j - H) * (j - H);
      w[static_cast<std::size_t>(i) * W + j] = std::exp(-d2 / (2 * sig * sig));
      wsum += w[static_cast<std::size_t>(i) * W + j];
    }
  for (auto& v : w) v /= wsum;

  double acc = 0.0;
  int n = 0;
  for (int r = H; r < x.rows - H; ++r)
    for (int c = H; c < x.cols - H; ++c) {
      bool has_metal = false;
      for (int i = -H; i <= H; ++i)
        for (int j = -H; j <= H; ++j)
          if (metal.at(r + i, c + j) != 0.0) has_metal = true;
      if (has_metal) continue;
      double ux = 0, uy = 0;
      for (int i = -H; i <= H; ++i)
        for (int j = -H; j <= H; ++j) {
          const double wk = w[static_cast<std::size_t>(i + H) * W + (j + H)];
          ux += wk * x.at(r + i, c + j);
          uy += wk * y.at(r + i, c + j);
        }
      double vx = 0, vy = 0, cov = 0;
      for (int i = -H; i <= H; ++i)
        for (int j = -H; j <= H; ++j) {
          const double wk = w[static_cast<std::size_t>(i + H) * W + (j + H)];
          const double dx = x.at(r + i, c + j) - ux;
          const double dy = y.at(r + i, c + j) - uy;
          vx += wk * dx * dx;
          vy += wk * dy * dy;
          cov += wk * dx * dy;
        }
      // the library expands E[x^2]-E[x]^2; this path subtracts means first
      acc += ((2 * ux * uy + C1) * (2 * cov + C2)) /
             ((ux * ux + uy * uy + C1) * (vx + vy + C2));
      ++n;
    }
  return acc / n;
}

}  // namespace

TEST_CASE("psnr closed forms and inf sentinel") {
  Rng rng(41);
  Grid gt = random_image(32, rng);
  Grid metal(32, 32, 0.0);
  metal.at(5, 5) = 1.0;

  CHECK(std::isinf(psnr(gt, gt, metal)));

  Grid p1 = gt;
  for (std::size_t i = 0; i < p1.size(); ++i)
    if (metal.v[i] == 0.0) p1.v[i] += 0.1;  // MSE 0.01
  CHECK(psnr(p1, gt, metal) == doctest::Approx(20.0).epsilon(1e-9));

  Grid p2 = gt;
  for (std::size_t i = 0; i < p2.size(); ++i)
    if (metal.v[i] == 0.0) p2.v[i] += 0.01;  // MSE 1e-4
  CHECK(psnr(p2, gt, metal) == doctest::Approx(40.0).epsilon(1e-9));

  // metal pixel excluded: corrupting it does not change psnr
  Grid p3 = p1;
  p3.at(5, 5) += 100.0;
  CHECK(psnr(p3, gt, metal) == doctest::Approx(psnr(p1, gt, metal)));
}

TEST_CASE("psnr strictly decreases with noise amplitude") {
  Rng rng(42);
  Grid gt = random_image(32, rng, 0.2, 0.8);
  Grid metal(32, 32, 0.0);
  double prev = std::numeric_limits<double>::infinity();
  for (double amp : {0.01, 0.02, 0.05}) {
    Rng noise(7);
    Grid p = gt;
    for (auto& v : p.v) v += amp * noise.normal();
    const double val = psnr(p, gt, metal);
    CHECK(val < prev);
    prev = val;
  }
}

TEST_CASE("ssim trivial values, symmetry, and brute-force agreement") {
  Rng rng(43);
  Grid gt = random_image(24, rng);
  Grid metal(24, 24, 0.0);
  metal.at(12, 12) = 1.0;

  CHECK(ssim(gt, gt, metal) == doctest::Approx(1.0).epsilon(1e-12));

  Grid ca(24, 24, 0.37), cb(24, 24, 0.37), none(24, 24, 0.0);
  CHECK(ssim(ca, cb, none) == doctest::Approx(1.0).epsilon(1e-12));

  Grid inv = gt;
  for (auto& v : inv.v) v = 1.0 - v;
  const double s = ssim(inv, gt, metal);
  CHECK(s < 1.0);
  CHECK(s == doctest::Approx(ssim_reference(inv, gt, metal)).epsilon(1e-6));
  CHECK(ssim(inv, gt, metal) == doctest::Approx(ssim(gt, inv, metal)).epsilon(1e-12));

  Grid small(8, 8, 0.5);
  CHECK_THROWS_AS(ssim(small, small, Grid(8, 8, 0.0)), std::invalid_argument);
}

TEST_CASE("srcc examples, ties, and monotone-transform invariance") {
  CHECK(srcc({0.1, 0.2, 0.3}, {1, 2, 3}) == doctest::Approx(1.0));
  CHECK(srcc({0.3, 0.2, 0.1}, {1, 2, 3}) == doctest::Approx(-1.0));
  CHECK(srcc({1, 1, 2}, {3, 3, 5}) == doctest::Approx(1.0));
  CHECK(std::isnan(srcc({2, 2, 2}, {1, 2, 3})));

  Rng rng(44);
  std::vector<double> a(50), b(50);
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] = rng.normal();
    b[i] = rng.normal();
  }
  const double base = srcc(a, b);
  std::vector<double> a2 = a;
  for (auto& v : a2) v = std::exp(3.0 * v) + 1.0;  // strictly increasing
  CHECK(srcc(a2, b) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("plcc affine invariance and covariance oracle") {
  CHECK(plcc({1, 2, 3, 4}, {3, 5, 7, 9}) == doctest::Approx(1.0));
  CHECK(plcc({1, 2, 3}, {-1, -2, -3}) == doctest::Approx(-1.0));
  CHECK(std::isnan(plcc({5, 5}, {1, 2})));

  Rng rng(45);
  std::vector<double> a(100), b(100);
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] = rng.uniform(-2, 2);
    b[i] = 0.4 * a[i] + rng.normal(0, 0.5);
  }
  // alternative formula: (E[ab] - E[a]E[b]) / (std_a * std_b)
  double sa = 0, sb = 0, sab = 0, saa = 0, sbb = 0;
  const double n = 100.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sa += a[i];
    sb += b[i];
    sab += a[i] * b[i];
    saa += a[i] * a[i];
    sbb += b[i] * b[i];
  }
  const double expect =
      (sab / n - sa / n * sb / n) /
      (std::sqrt(saa / n - sa / n * sa / n) * std::sqrt(sbb / n - sb / n * sb / n));
  CHECK(plcc(a, b) == doctest::Approx(expect).epsilon(1e-9));
}

TEST_CASE("cqa_quality_metric is deterministic and averages per-image scores") {
  Rng rng(46);
  models::CQAConfig cfg;
  cfg.input_size = 64;
  cfg.dims = {4, 8, 8};
  cfg.heads = {1, 2, 2};
  cfg.blocks = 1;
  cfg.head_hidden = 16;
  models::CQANet net(cfg, rng);

  std::vector<Grid> set;
  for (int i = 0; i < 3; ++i) set.push_back(random_image(64, rng));
  const double m1 = cqa_quality_metric(net, set);
  const double m2 = cqa_quality_metric(net, set);
  CHECK(m1 == m2);
  CHECK(m1 >= 1.0);
  CHECK(m1 <= 10.0);

  double per = 0.0;
  for (const auto& img : set) per += cqa_quality_metric(net, {img});
  CHECK(m1 == doctest::Approx(per / 3.0).epsilon(1e-6));
}

TEST_CASE("report csv layout and inf sentinel") {
  const std::string path = "metrics_report_test.csv";
  std::vector<SampleMetrics> rows{
      {"s0", "sim", std::numeric_limits<double>::infinity(), 1.0, 0.0, 9.5},
      {"s1", "cli", 25.0, 0.9, 0.01, 7.0},
  };
  write_report_csv(path, rows);
  std::ifstream is(path);
  std::string line;
  std::getline(is, line);
  CHECK(line == "sample_id,domain,psnr,ssim,mae,cqa_quality");
  std::getline(is, line);
  CHECK(line.find("s0,sim,inf,") == 0);
  std::getline(is, line);
  CHECK(line.find("s1,cli,25.0") == 0);
  std::getline(is, line);
  CHECK(line.find("aggregate,all,25.0") == 0);  // mean over finite psnr only
  std::remove(path.c_str());
}
