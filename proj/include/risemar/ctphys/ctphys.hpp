#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace risemar::ctphys {

// Row-major 2-D grid of doubles; used for images, masks and sinograms.
struct Grid {
  int rows = 0, cols = 0;
  std::vector<double> v;

  Grid() = default;
  Grid(int r, int c, double fill = 0.0)
      : rows(r), cols(c), v(static_cast<std::size_t>(r) * c, fill) {}
  double& at(int r, int c) { return v[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const { return v[static_cast<std::size_t>(r) * cols + c]; }
  std::size_t size() const { return v.size(); }
  bool same_shape(const Grid& o) const { return rows == o.rows && cols == o.cols; }
};

struct ScanGeometry {
  int n_angles = 180;
  int n_detectors = 192;
  double detector_spacing = 1.0;
  int image_size = 128;
  double pixel_spacing = 1.0;
  double angle_start = 0.0;
  double angle_range = M_PI;  // parallel beam over [0, pi)

  double angle(int i) const {
    return angle_start + angle_range * static_cast<double>(i) / n_angles;
  }
  // Detector array must span the image diagonal (1% slack allowed).
  void validate() const;
  static ScanGeometry desk_default(int image_size, int n_angles, int n_detectors);
};

enum class Material : std::uint8_t { air = 0, soft = 1, bone = 2, metal = 3 };

struct MetalInsert {
  double cx = 0.0, cy = 0.0;  // pixel coordinates
  double rx = 0.0, ry = 0.0;  // ellipse semi-axes in pixels
  double hu = 3000.0;
};

struct Phantom {
  Grid hu_image;       // with metal inserts applied
  Grid hu_background;  // same anatomy, metal-free
  Grid metal_mask;     // binary
  Grid roi_mask;       // body region excluding metal
  Grid material_map;   // Material enum values
  std::vector<MetalInsert> placement_log;
};

struct SpectrumModel {
  std::string id;
  std::vector<double> energies;               // keV, per bin
  std::vector<double> weights;                // photon fractions, sum to 1
  std::vector<double> mu_water;               // 1/length, per bin
  std::vector<double> mu_metal;               // 1/length, per bin
  double photon_count = 1e5;

  int bins() const { return static_cast<int>(energies.size()); }
  double mu_reference() const;  // spectrum-weighted water attenuation
  void validate() const;

  static SpectrumModel simulated_default();
  static SpectrumModel clinical_default();
};

struct Sinogram {
  Grid data;  // n_angles x n_detectors
  ScanGeometry geometry;
};

using TraceMask = Grid;  // n_angles x n_detectors, binary

enum class DomainTag { simulated, clinical };

struct ArtifactPair {
  Grid artifact_image;  // X, normalized [0,1]
  Grid clean_image;     // Y, normalized [0,1], metal values re-inserted
  Grid metal_mask;
  Grid roi_mask;
  DomainTag domain_tag = DomainTag::simulated;
  // measured polychromatic sinogram, kept so LI images can be derived
  Sinogram measured_sino;
};

class UnrecoverableViewError : public std::runtime_error {
 public:
  explicit UnrecoverableViewError(const std::string& what)
      : std::runtime_error(what) {}
};

enum class PhantomProfile { torso_like, dental_like };

// Deterministic procedural phantom. metal_count < 0 draws 1..3 inserts from
// the seed; pass an explicit count (0..4) to pin it.
Phantom make_phantom(std::uint64_t seed, PhantomProfile profile, int size,
                     int metal_count = -1);

Sinogram forward_project(const Grid& image, const ScanGeometry& geometry);
Grid fbp_reconstruct(const Sinogram& sino);

ArtifactPair simulate_metal_artifact(const Phantom& phantom,
                                     const SpectrumModel& spectrum,
                                     const ScanGeometry& geometry,
                                     std::uint64_t noise_seed,
                                     DomainTag tag = DomainTag::simulated);

TraceMask metal_trace(const Grid& metal_mask, const ScanGeometry& geometry);
Sinogram li_interpolate(const Sinogram& sino, const TraceMask& trace);

double hu_normalize(double hu);
double hu_denormalize(double t);
Grid hu_normalize(const Grid& hu);
Grid hu_denormalize(const Grid& t);

// Reconstructs the LI-corrected image for a pair: interpolate the metal trace
// in the measured sinogram, FBP, convert to normalized range, re-insert metal.
Grid li_image_for_pair(const ArtifactPair& pair, const SpectrumModel& spectrum);

// mu image (1/length) for one spectral bin from HU + material data
Grid mu_image_for_bin(const Grid& hu, const Grid& material_map,
                      const SpectrumModel& spectrum, int bin);

}  // namespace risemar::ctphys
