#include "risemar/io/dataset.hpp"

#include <bit>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "risemar/io/config.hpp"

static_assert(std::endian::native == std::endian::little,
              "sample arrays are stored little-endian");

namespace fs = std::filesystem;
using nlohmann::json;

namespace risemar::io {

void write_f32(const std::string& path, const ctphys::Grid& g) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CliError("io", "cannot write " + path);
  std::vector<float> buf(g.v.begin(), g.v.end());
  os.write(reinterpret_cast<const char*>(buf.data()),
           static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!os) throw CliError("io", "short write to " + path);
}

ctphys::Grid read_f32(const std::string& path, int rows, int cols) {
  std::ifstream is(path, std::ios::binary | std::ios::ate);
  if (!is) throw CliError("io", "cannot open " + path);
  const auto bytes = static_cast<std::size_t>(is.tellg());
  const std::size_t expect =
      static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols) * sizeof(float);
  if (bytes != expect)
    throw CliError("data", path + ": size " + std::to_string(bytes) +
                               " does not match manifest shape");
  is.seekg(0);
  std::vector<float> buf(static_cast<std::size_t>(rows) * cols);
  is.read(reinterpret_cast<char*>(buf.data()),
          static_cast<std::streamsize>(expect));
  ctphys::Grid g(rows, cols);
  std::copy(buf.begin(), buf.end(), g.v.begin());
  return g;
}

std::string to_string(ctphys::DomainTag t) {
  return t == ctphys::DomainTag::simulated ? "simulated" : "clinical";
}

ctphys::DomainTag domain_from_string(const std::string& s) {
  if (s == "simulated") return ctphys::DomainTag::simulated;
  if (s == "clinical") return ctphys::DomainTag::clinical;
  throw CliError("data", "unknown domain tag: " + s);
}

namespace {

json geometry_json(const ctphys::ScanGeometry& g) {
  return {{"n_angles", g.n_angles},
          {"n_detectors", g.n_detectors},
          {"detector_spacing", g.detector_spacing},
          {"image_size", g.image_size},
          {"pixel_spacing", g.pixel_spacing},
          {"angle_start", g.angle_start},
          {"angle_range", g.angle_range}};
}

ctphys::ScanGeometry geometry_from_json(const json& j) {
  ctphys::ScanGeometry g;
  g.n_angles = j.at("n_angles").get<int>();
  g.n_detectors = j.at("n_detectors").get<int>();
  g.detector_spacing = j.at("detector_spacing").get<double>();
  g.image_size = j.at("image_size").get<int>();
  g.pixel_spacing = j.at("pixel_spacing").get<double>();
  g.angle_start = j.at("angle_start").get<double>();
  g.angle_range = j.at("angle_range").get<double>();
  return g;
}

json spectrum_json(const ctphys::SpectrumModel& s) {
  return {{"id", s.id},           {"energies", s.energies},
          {"weights", s.weights}, {"mu_water", s.mu_water},
          {"mu_metal", s.mu_metal}, {"photon_count", s.photon_count}};
}

ctphys::SpectrumModel spectrum_from_json(const json& j) {
  ctphys::SpectrumModel s;
  s.id = j.at("id").get<std::string>();
  s.energies = j.at("energies").get<std::vector<double>>();
  s.weights = j.at("weights").get<std::vector<double>>();
  s.mu_water = j.at("mu_water").get<std::vector<double>>();
  s.mu_metal = j.at("mu_metal").get<std::vector<double>>();
  s.photon_count = j.at("photon_count").get<double>();
  return s;
}

const char* kArrays[5] = {"artifact", "clean", "metal", "roi", "sino"};

}  // namespace

void save_split(const std::string& dir, const SplitMeta& meta,
                const std::vector<ctphys::ArtifactPair>& pairs) {
  fs::create_directories(dir);
  json samples = json::array();
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& p = pairs[i];
    char idbuf[32];
    std::snprintf(idbuf, sizeof(idbuf), "%s_%05zu", meta.split.c_str(), i);
    const std::string id = idbuf;
    const ctphys::Grid* grids[5] = {&p.artifact_image, &p.clean_image,
                                    &p.metal_mask, &p.roi_mask,
                                    &p.measured_sino.data};
    json files;
    for (int a = 0; a < 5; ++a) {
      const std::string fname = id + "_" + kArrays[a] + ".f32";
      write_f32((fs::path(dir) / fname).string(), *grids[a]);
      files[kArrays[a]] = fname;
    }
    samples.push_back({{"id", id},
                       {"rows", p.artifact_image.rows},
                       {"cols", p.artifact_image.cols},
                       {"sino_rows", p.measured_sino.data.rows},
                       {"sino_cols", p.measured_sino.data.cols},
                       {"files", files}});
  }
  json manifest{{"split", meta.split},
                {"domain", to_string(meta.domain)},
                {"seed", meta.seed},
                {"config_hash", meta.config_hash},
                {"geometry", geometry_json(meta.geometry)},
                {"spectrum", spectrum_json(meta.spectrum)},
                {"dtype", "float32-le"},
                {"samples", samples}};
  std::ofstream os(fs::path(dir) / "manifest.json", std::ios::trunc);
  if (!os) throw CliError("io", "cannot write manifest in " + dir);
  os << manifest.dump(2) << '\n';
}

LoadedSplit load_split(const std::string& dir) {
  std::ifstream is(fs::path(dir) / "manifest.json");
  if (!is) throw CliError("data", "missing manifest.json in " + dir);
  json manifest;
  try {
    is >> manifest;
  } catch (const json::exception& e) {
    throw CliError("data", dir + "/manifest.json: " + e.what());
  }
  LoadedSplit out;
  out.meta.split = manifest.at("split").get<std::string>();
  out.meta.domain = domain_from_string(manifest.at("domain").get<std::string>());
  out.meta.seed = manifest.at("seed").get<std::uint64_t>();
  out.meta.config_hash = manifest.at("config_hash").get<std::string>();
  out.meta.geometry = geometry_from_json(manifest.at("geometry"));
  out.meta.spectrum = spectrum_from_json(manifest.at("spectrum"));
  for (const auto& s : manifest.at("samples")) {
    const int rows = s.at("rows").get<int>(), cols = s.at("cols").get<int>();
    const auto& files = s.at("files");
    auto arr = [&](const char* name, int r, int c) {
      return read_f32(
          (fs::path(dir) / files.at(name).get<std::string>()).string(), r, c);
    };
    ctphys::ArtifactPair p;
    p.artifact_image = arr("artifact", rows, cols);
    p.clean_image = arr("clean", rows, cols);
    p.metal_mask = arr("metal", rows, cols);
    p.roi_mask = arr("roi", rows, cols);
    p.domain_tag = out.meta.domain;
    p.measured_sino.data =
        arr("sino", s.at("sino_rows").get<int>(), s.at("sino_cols").get<int>());
    p.measured_sino.geometry = out.meta.geometry;
    out.pairs.push_back(std::move(p));
    out.ids.push_back(s.at("id").get<std::string>());
  }
  return out;
}

}  // namespace risemar::io
