#include <algorithm>
#include <cmath>

#include "risemar/core/random.hpp"
#include "risemar/ctphys/ctphys.hpp"

namespace risemar::ctphys {

Grid mu_image_for_bin(const Grid& hu, const Grid& material_map,
                      const SpectrumModel& spectrum, int bin) {
  if (!hu.same_shape(material_map))
    throw std::invalid_argument("mu_image_for_bin: shape mismatch");
  const double mu_w = spectrum.mu_water[static_cast<std::size_t>(bin)];
  const double mu_m = spectrum.mu_metal[static_cast<std::size_t>(bin)];
  Grid mu(hu.rows, hu.cols, 0.0);
  for (std::size_t i = 0; i < hu.v.size(); ++i) {
    if (material_map.v[i] == static_cast<double>(Material::metal))
      mu.v[i] = mu_m;
    else
      mu.v[i] = std::max(0.0, mu_w * (1.0 + hu.v[i] / 1000.0));
  }
  return mu;
}

namespace {

// mu reconstruction -> HU -> [0,1]
Grid mu_to_normalized(const Grid& mu, double mu_ref) {
  Grid out = mu;
  for (auto& x : out.v) x = hu_normalize(1000.0 * (x / mu_ref - 1.0));
  return out;
}

}  // namespace

ArtifactPair simulate_metal_artifact(const Phantom& phantom,
                                     const SpectrumModel& spectrum,
                                     const ScanGeometry& geometry,
                                     std::uint64_t noise_seed, DomainTag tag) {
  spectrum.validate();
  geometry.validate();
  if (phantom.hu_image.rows != geometry.image_size)
    throw std::invalid_argument("simulate_metal_artifact: phantom/geometry mismatch");

  const int bins = spectrum.bins();
  std::vector<Sinogram> line_integrals;
  line_integrals.reserve(static_cast<std::size_t>(bins));
  for (int b = 0; b < bins; ++b)
    line_integrals.push_back(forward_project(
        mu_image_for_bin(phantom.hu_image, phantom.material_map, spectrum, b),
        geometry));

  // polychromatic detection with Poisson counting noise, floored at 1 photon
  Rng rng(noise_seed);
  Sinogram measured;
  measured.geometry = geometry;
  measured.data = Grid(geometry.n_angles, geometry.n_detectors, 0.0);
  const double n0 = spectrum.photon_count;
  for (std::size_t i = 0; i < measured.data.v.size(); ++i) {
    double expected = 0.0;
    for (int b = 0; b < bins; ++b)
      expected += spectrum.weights[static_cast<std::size_t>(b)] * n0 *
                  std::exp(-line_integrals[static_cast<std::size_t>(b)].data.v[i]);
    const double detected = std::max(1.0, rng.poisson(expected));
    measured.data.v[i] = std::log(n0 / detected);
  }

  const double mu_ref = spectrum.mu_reference();
  Grid artifact = mu_to_normalized(fbp_reconstruct(measured), mu_ref);

  // clean side: monochromatic, noise-free, metal-free projection
  Grid mu_clean(phantom.hu_background.rows, phantom.hu_background.cols, 0.0);
  for (std::size_t i = 0; i < mu_clean.v.size(); ++i)
    mu_clean.v[i] =
        std::max(0.0, mu_ref * (1.0 + phantom.hu_background.v[i] / 1000.0));
  Grid clean = mu_to_normalized(fbp_reconstruct(forward_project(mu_clean, geometry)), mu_ref);

  // metal pixels carry the phantom's true values in both images, so they are
  // identical across the pair and can be excluded downstream
  for (std::size_t i = 0; i < clean.v.size(); ++i)
    if (phantom.metal_mask.v[i] != 0.0) {
      const double m = hu_normalize(phantom.hu_image.v[i]);
      clean.v[i] = m;
      artifact.v[i] = m;
    }

  ArtifactPair pair;
  pair.artifact_image = std::move(artifact);
  pair.clean_image = std::move(clean);
  pair.metal_mask = phantom.metal_mask;
  pair.roi_mask = phantom.roi_mask;
  pair.domain_tag = tag;
  pair.measured_sino = std::move(measured);
  return pair;
}

Grid li_image_for_pair(const ArtifactPair& pair, const SpectrumModel& spectrum) {
  const ScanGeometry& g = pair.measured_sino.geometry;
  TraceMask trace = metal_trace(pair.metal_mask, g);
  Sinogram corrected = li_interpolate(pair.measured_sino, trace);
  Grid li = fbp_reconstruct(corrected);
  const double mu_ref = spectrum.mu_reference();
  for (auto& x : li.v) x = hu_normalize(1000.0 * (x / mu_ref - 1.0));
  for (std::size_t i = 0; i < li.v.size(); ++i)
    if (pair.metal_mask.v[i] != 0.0) li.v[i] = pair.clean_image.v[i];
  return li;
}

}  // namespace risemar::ctphys
