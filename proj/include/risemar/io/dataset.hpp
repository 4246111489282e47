#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "risemar/ctphys/ctphys.hpp"

namespace risemar::io {

// Header-free little-endian float32 arrays, row-major; the shape lives in
// the split manifest.
void write_f32(const std::string& path, const ctphys::Grid& g);
ctphys::Grid read_f32(const std::string& path, int rows, int cols);

struct SplitMeta {
  std::string split;  // e.g. "sim_train"
  ctphys::DomainTag domain = ctphys::DomainTag::simulated;
  ctphys::ScanGeometry geometry;
  ctphys::SpectrumModel spectrum;
  std::uint64_t seed = 0;
  std::string config_hash;
};

// One directory per split: manifest.json plus five arrays per sample
// (artifact, clean, metal, roi, measured sinogram). The sinogram is kept so
// interpolation-corrected inputs can be derived after loading.
void save_split(const std::string& dir, const SplitMeta& meta,
                const std::vector<ctphys::ArtifactPair>& pairs);

struct LoadedSplit {
  SplitMeta meta;
  std::vector<ctphys::ArtifactPair> pairs;
  std::vector<std::string> ids;
};

LoadedSplit load_split(const std::string& dir);

std::string to_string(ctphys::DomainTag t);
ctphys::DomainTag domain_from_string(const std::string& s);

}  // namespace risemar::io
