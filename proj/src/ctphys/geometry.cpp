#include <cmath>
#include <numeric>
#include <stdexcept>

#include "risemar/ctphys/ctphys.hpp"

namespace risemar::ctphys {

void ScanGeometry::validate() const {
  if (n_angles < 1) throw std::invalid_argument("geometry: n_angles < 1");
  if (n_detectors < 1) throw std::invalid_argument("geometry: n_detectors < 1");
  if (detector_spacing <= 0 || pixel_spacing <= 0 || image_size < 1)
    throw std::invalid_argument("geometry: non-positive sizes");
  const double diag = std::sqrt(2.0) * image_size * pixel_spacing;
  if (n_detectors * detector_spacing < 0.99 * diag)
    throw std::invalid_argument(
        "geometry: detector array does not cover the image diagonal");
  if (angle_range <= 0) throw std::invalid_argument("geometry: empty angle range");
}

ScanGeometry ScanGeometry::desk_default(int image_size, int n_angles,
                                        int n_detectors) {
  ScanGeometry g;
  g.image_size = image_size;
  g.n_angles = n_angles;
  g.n_detectors = n_detectors;
  g.pixel_spacing = 1.0;
  const double diag = std::sqrt(2.0) * image_size * g.pixel_spacing;
  g.detector_spacing = 1.03 * diag / n_detectors;
  g.validate();
  return g;
}

double SpectrumModel::mu_reference() const {
  double s = 0.0;
  for (int b = 0; b < bins(); ++b) s += weights[static_cast<std::size_t>(b)] * mu_water[static_cast<std::size_t>(b)];
  return s;
}

void SpectrumModel::validate() const {
  const std::size_t nb = energies.size();
  if (nb == 0 || weights.size() != nb || mu_water.size() != nb ||
      mu_metal.size() != nb)
    throw std::invalid_argument("spectrum: inconsistent bin tables");
  double wsum = 0.0;
  for (double w : weights) {
    if (w < 0) throw std::invalid_argument("spectrum: negative weight");
    wsum += w;
  }
  if (std::abs(wsum - 1.0) > 1e-9)
    throw std::invalid_argument("spectrum: weights must sum to 1");
  for (std::size_t b = 0; b < nb; ++b) {
    if (mu_water[b] < 0 || mu_metal[b] < 0)
      throw std::invalid_argument("spectrum: negative attenuation");
    // densest bone is ~1500 HU, i.e. 2.5x water
    if (mu_metal[b] <= 2.6 * mu_water[b])
      throw std::invalid_argument("spectrum: metal must dominate bone");
  }
  if (photon_count <= 0) throw std::invalid_argument("spectrum: photon_count <= 0");
}

SpectrumModel SpectrumModel::simulated_default() {
  SpectrumModel s;
  s.id = "sim-3bin-40-70-100";
  s.energies = {40.0, 70.0, 100.0};
  s.weights = {0.3, 0.5, 0.2};
  s.mu_water = {0.028, 0.020, 0.017};  // per pixel length
  s.mu_metal = {0.60, 0.35, 0.25};
  s.photon_count = 1e5;
  s.validate();
  return s;
}

SpectrumModel SpectrumModel::clinical_default() {
  SpectrumModel s;
  s.id = "cli-3bin-50-80-110";
  s.energies = {50.0, 80.0, 110.0};
  s.weights = {0.2, 0.5, 0.3};
  s.mu_water = {0.024, 0.0185, 0.016};
  s.mu_metal = {0.85, 0.55, 0.40};
  s.photon_count = 3e4;
  s.validate();
  return s;
}

}  // namespace risemar::ctphys
