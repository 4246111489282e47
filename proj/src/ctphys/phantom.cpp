#include <algorithm>
#include <cmath>

#include "risemar/core/random.hpp"
#include "risemar/ctphys/ctphys.hpp"

namespace risemar::ctphys {

namespace {

struct Ellipse {
  double cx, cy, rx, ry;
  bool contains(double x, double y) const {
    const double dx = (x - cx) / rx, dy = (y - cy) / ry;
    return dx * dx + dy * dy <= 1.0;
  }
};

void paint_ellipse(Grid& hu, Grid& mat, const Ellipse& e, double value,
                   Material m) {
  const int x0 = std::max(0, static_cast<int>(std::floor(e.cx - e.rx - 1)));
  const int x1 = std::min(hu.cols - 1, static_cast<int>(std::ceil(e.cx + e.rx + 1)));
  const int y0 = std::max(0, static_cast<int>(std::floor(e.cy - e.ry - 1)));
  const int y1 = std::min(hu.rows - 1, static_cast<int>(std::ceil(e.cy + e.ry + 1)));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x)
      if (e.contains(x, y)) {
        hu.at(y, x) = value;
        mat.at(y, x) = static_cast<double>(m);
      }
}

void add_gaussian_blob(Grid& hu, const Grid& mat, double cx, double cy,
                       double sx, double sy, double amp) {
  for (int y = 0; y < hu.rows; ++y)
    for (int x = 0; x < hu.cols; ++x) {
      if (mat.at(y, x) != static_cast<double>(Material::soft)) continue;
      const double dx = (x - cx) / sx, dy = (y - cy) / sy;
      hu.at(y, x) += amp * std::exp(-(dx * dx + dy * dy));
    }
}

}  // namespace

Phantom make_phantom(std::uint64_t seed, PhantomProfile profile, int size,
                     int metal_count) {
  if (size < 32) throw std::invalid_argument("make_phantom: size < 32");
  Rng rng(seed * 2u + (profile == PhantomProfile::dental_like ? 1u : 0u));

  Phantom ph;
  ph.hu_background = Grid(size, size, -1000.0);
  ph.material_map = Grid(size, size, static_cast<double>(Material::air));
  Grid& hu = ph.hu_background;
  Grid& mat = ph.material_map;
  const double c = (size - 1) / 2.0;

  Ellipse body;
  if (profile == PhantomProfile::torso_like) {
    body = {c, c, 0.42 * size * rng.uniform(0.95, 1.05),
            0.34 * size * rng.uniform(0.95, 1.05)};
  } else {
    body = {c, c, 0.36 * size * rng.uniform(0.95, 1.05),
            0.40 * size * rng.uniform(0.95, 1.05)};
  }
  paint_ellipse(hu, mat, body, 35.0, Material::soft);

  // internal soft-tissue structures
  const int n_organs = static_cast<int>(rng.randint(2, 4));
  for (int i = 0; i < n_organs; ++i) {
    Ellipse organ{body.cx + rng.uniform(-0.4, 0.4) * body.rx,
                  body.cy + rng.uniform(-0.4, 0.4) * body.ry,
                  rng.uniform(0.08, 0.22) * size, rng.uniform(0.08, 0.18) * size};
    paint_ellipse(hu, mat, organ, rng.uniform(-90.0, 80.0), Material::soft);
  }
  // gentle large-scale shading keeps tissue non-constant
  for (int i = 0; i < 3; ++i)
    add_gaussian_blob(hu, mat, body.cx + rng.uniform(-0.5, 0.5) * body.rx,
                      body.cy + rng.uniform(-0.5, 0.5) * body.ry,
                      rng.uniform(0.2, 0.5) * size, rng.uniform(0.2, 0.5) * size,
                      rng.uniform(-40.0, 40.0));

  // bone
  std::vector<Ellipse> bones;
  if (profile == PhantomProfile::torso_like) {
    Ellipse spine{body.cx + rng.uniform(-0.05, 0.05) * size,
                  body.cy + 0.55 * body.ry, 0.07 * size, 0.07 * size};
    bones.push_back(spine);
    const int extra = static_cast<int>(rng.randint(1, 2));
    for (int i = 0; i < extra; ++i) {
      const double ang = rng.uniform(0.0, 2.0 * M_PI);
      bones.push_back({body.cx + 0.75 * body.rx * std::cos(ang),
                       body.cy + 0.75 * body.ry * std::sin(ang),
                       rng.uniform(0.03, 0.05) * size,
                       rng.uniform(0.03, 0.05) * size});
    }
  } else {
    // dental arch: row of teeth along a lower arc
    const int n_teeth = static_cast<int>(rng.randint(8, 11));
    for (int i = 0; i < n_teeth; ++i) {
      const double t = static_cast<double>(i) / (n_teeth - 1);  // 0..1
      const double ang = M_PI * (0.15 + 0.7 * t);               // open arc
      bones.push_back({body.cx + 0.62 * body.rx * std::cos(ang),
                       body.cy + 0.62 * body.ry * std::sin(ang),
                       0.035 * size, 0.035 * size});
    }
  }
  for (const auto& b : bones)
    paint_ellipse(hu, mat, b, rng.uniform(700.0, 1300.0), Material::bone);

  // metal-free copy finished; overlay metal on a fresh copy
  ph.hu_image = ph.hu_background;
  ph.metal_mask = Grid(size, size, 0.0);

  int n_metal = metal_count;
  if (n_metal < 0) n_metal = static_cast<int>(rng.randint(1, 3));
  n_metal = std::min(n_metal, 4);
  for (int i = 0; i < n_metal; ++i) {
    Ellipse m;
    double hu_metal = rng.uniform(3000.0, 7000.0);
    if (profile == PhantomProfile::dental_like && !bones.empty()) {
      // filling sits on a tooth
      const auto& tooth = bones[static_cast<std::size_t>(rng.randint(0, static_cast<std::int64_t>(bones.size()) - 1))];
      m = {tooth.cx + rng.uniform(-0.3, 0.3) * tooth.rx,
           tooth.cy + rng.uniform(-0.3, 0.3) * tooth.ry,
           rng.uniform(0.012, 0.025) * size, rng.uniform(0.012, 0.025) * size};
    } else {
      // implant somewhere inside the body
      for (int attempt = 0; attempt < 32; ++attempt) {
        m = {body.cx + rng.uniform(-0.6, 0.6) * body.rx,
             body.cy + rng.uniform(-0.6, 0.6) * body.ry,
             rng.uniform(0.02, 0.045) * size, rng.uniform(0.02, 0.045) * size};
        if (body.contains(m.cx, m.cy)) break;
      }
    }
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x)
        if (m.contains(x, y)) {
          ph.hu_image.at(y, x) = hu_metal;
          ph.metal_mask.at(y, x) = 1.0;
          mat.at(y, x) = static_cast<double>(Material::metal);
        }
    ph.placement_log.push_back({m.cx, m.cy, m.rx, m.ry, hu_metal});
  }

  // roi: body region minus metal
  ph.roi_mask = Grid(size, size, 0.0);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      if (body.contains(x, y) && ph.metal_mask.at(y, x) == 0.0)
        ph.roi_mask.at(y, x) = 1.0;
  return ph;
}

}  // namespace risemar::ctphys
