#include <algorithm>
#include <cmath>

#include "risemar/ctphys/ctphys.hpp"
#include "risemar/nn/fft.hpp"

namespace risemar::ctphys {

namespace {

constexpr double kRayStep = 0.5;  // in pixel units, <= 0.5 px sampling

bool all_finite(const Grid& g) {
  for (double x : g.v)
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace

Sinogram forward_project(const Grid& image, const ScanGeometry& geometry) {
  geometry.validate();
  if (image.rows != image.cols)
    throw std::invalid_argument("forward_project: image must be square");
  if (image.rows != geometry.image_size)
    throw std::invalid_argument("forward_project: image/geometry size mismatch");
  if (!all_finite(image))
    throw std::invalid_argument("forward_project: non-finite image");

  const int n = image.rows;
  const double px = geometry.pixel_spacing;
  const double half = (n - 1) / 2.0;
  const double t_max = 0.5 * std::sqrt(2.0) * n * px + px;
  const double step = kRayStep * px;
  const int n_steps = static_cast<int>(std::ceil(2.0 * t_max / step));

  Sinogram out;
  out.geometry = geometry;
  out.data = Grid(geometry.n_angles, geometry.n_detectors, 0.0);

  for (int a = 0; a < geometry.n_angles; ++a) {
    const double th = geometry.angle(a);
    const double nx = std::cos(th), ny = std::sin(th);   // detector axis
    const double dx = -std::sin(th), dy = std::cos(th);  // ray direction
    for (int d = 0; d < geometry.n_detectors; ++d) {
      const double s = (d - (geometry.n_detectors - 1) / 2.0) * geometry.detector_spacing;
      const double ox = s * nx, oy = s * ny;
      double acc = 0.0;
      for (int k = 0; k < n_steps; ++k) {
        const double t = -t_max + (k + 0.5) * step;
        // bilinear sample at physical point (ox + t*dx, oy + t*dy)
        const double xi = (ox + t * dx) / px + half;
        const double yi = (oy + t * dy) / px + half;
        const int x0 = static_cast<int>(std::floor(xi));
        const int y0 = static_cast<int>(std::floor(yi));
        if (x0 < -1 || x0 > n - 1 || y0 < -1 || y0 > n - 1) continue;
        const double fx = xi - x0, fy = yi - y0;
        auto sample = [&](int yy, int xx) -> double {
          return (xx >= 0 && xx < n && yy >= 0 && yy < n) ? image.at(yy, xx) : 0.0;
        };
        acc += (1 - fx) * (1 - fy) * sample(y0, x0) +
               fx * (1 - fy) * sample(y0, x0 + 1) +
               (1 - fx) * fy * sample(y0 + 1, x0) +
               fx * fy * sample(y0 + 1, x0 + 1);
      }
      out.data.at(a, d) = acc * step;
    }
  }
  return out;
}

Grid fbp_reconstruct(const Sinogram& sino) {
  const ScanGeometry& g = sino.geometry;
  g.validate();
  if (sino.data.rows != g.n_angles || sino.data.cols != g.n_detectors)
    throw std::invalid_argument("fbp_reconstruct: sinogram/geometry mismatch");
  if (!all_finite(sino.data))
    throw std::invalid_argument("fbp_reconstruct: non-finite sinogram");

  const int nd = g.n_detectors;
  const std::size_t nfft = risemar::nn::next_pow2(static_cast<std::size_t>(2 * nd));
  // Ram-Lak ramp in cycles per unit length
  std::vector<double> ramp(nfft);
  const double df = 1.0 / (static_cast<double>(nfft) * g.detector_spacing);
  for (std::size_t k = 0; k < nfft; ++k) {
    const std::size_t kk = std::min(k, nfft - k);
    ramp[k] = static_cast<double>(kk) * df;
  }

  Grid filtered(g.n_angles, nd, 0.0);
  std::vector<risemar::nn::cplx> row(nfft);
  for (int a = 0; a < g.n_angles; ++a) {
    std::fill(row.begin(), row.end(), risemar::nn::cplx(0.0, 0.0));
    for (int d = 0; d < nd; ++d) row[static_cast<std::size_t>(d)] = sino.data.at(a, d);
    risemar::nn::fft_inplace(row, false);
    for (std::size_t k = 0; k < nfft; ++k) row[k] *= ramp[k];
    risemar::nn::fft_inplace(row, true);
    for (int d = 0; d < nd; ++d) filtered.at(a, d) = row[static_cast<std::size_t>(d)].real();
  }

  const int n = g.image_size;
  const double px = g.pixel_spacing;
  const double half = (n - 1) / 2.0;
  const double dcenter = (nd - 1) / 2.0;
  Grid img(n, n, 0.0);
  const double scale = g.angle_range / g.n_angles;
  for (int a = 0; a < g.n_angles; ++a) {
    const double th = g.angle(a);
    const double nx = std::cos(th), ny = std::sin(th);
    for (int y = 0; y < n; ++y) {
      const double py = (y - half) * px;
      for (int x = 0; x < n; ++x) {
        const double pxx = (x - half) * px;
        const double s = pxx * nx + py * ny;
        const double di = s / g.detector_spacing + dcenter;
        const int d0 = static_cast<int>(std::floor(di));
        if (d0 < 0 || d0 >= nd - 1) continue;
        const double fd = di - d0;
        img.at(y, x) += scale * ((1 - fd) * filtered.at(a, d0) + fd * filtered.at(a, d0 + 1));
      }
    }
  }
  return img;
}

TraceMask metal_trace(const Grid& metal_mask, const ScanGeometry& geometry) {
  if (metal_mask.rows != geometry.image_size || metal_mask.cols != geometry.image_size)
    throw std::invalid_argument("metal_trace: mask/geometry mismatch");
  Sinogram proj = forward_project(metal_mask, geometry);
  TraceMask trace(geometry.n_angles, geometry.n_detectors, 0.0);
  for (std::size_t i = 0; i < proj.data.v.size(); ++i)
    trace.v[i] = proj.data.v[i] > 1e-12 ? 1.0 : 0.0;
  return trace;
}

Sinogram li_interpolate(const Sinogram& sino, const TraceMask& trace) {
  if (!sino.data.same_shape(trace))
    throw std::invalid_argument("li_interpolate: shape mismatch");
  Sinogram out = sino;
  const int nd = sino.data.cols;
  for (int a = 0; a < sino.data.rows; ++a) {
    int d = 0;
    while (d < nd) {
      if (trace.at(a, d) == 0.0) {
        ++d;
        continue;
      }
      int d1 = d;
      while (d < nd && trace.at(a, d) != 0.0) ++d;
      int d2 = d - 1;  // maximal traced run [d1, d2]
      const int left = d1 - 1, right = d2 + 1;
      if (left < 0 && right >= nd)
        throw UnrecoverableViewError("li_interpolate: view " + std::to_string(a) +
                                     " entirely traced");
      if (left < 0) {
        for (int i = d1; i <= d2; ++i) out.data.at(a, i) = sino.data.at(a, right);
      } else if (right >= nd) {
        for (int i = d1; i <= d2; ++i) out.data.at(a, i) = sino.data.at(a, left);
      } else {
        const double vl = sino.data.at(a, left), vr = sino.data.at(a, right);
        for (int i = d1; i <= d2; ++i) {
          const double f = static_cast<double>(i - left) / (right - left);
          out.data.at(a, i) = (1.0 - f) * vl + f * vr;
        }
      }
    }
  }
  return out;
}

double hu_normalize(double hu) {
  const double c = std::clamp(hu, -1024.0, 3072.0);
  return (c + 1024.0) / 4096.0;
}

double hu_denormalize(double t) {
  return std::clamp(t, 0.0, 1.0) * 4096.0 - 1024.0;
}

Grid hu_normalize(const Grid& hu) {
  Grid out = hu;
  for (auto& x : out.v) {
    if (!std::isfinite(x)) throw std::invalid_argument("hu_normalize: non-finite input");
    x = hu_normalize(x);
  }
  return out;
}

Grid hu_denormalize(const Grid& t) {
  Grid out = t;
  for (auto& x : out.v) x = hu_denormalize(x);
  return out;
}

}  // namespace risemar::ctphys
