// One-off calibration for the quality oracle. The frozen threshold table
// should spread the ten classes over the errors the oracle actually sees in
// the pipeline: raw artifact images, convex clean/artifact blends, and
// reduction-network outputs at several training stages, over both domains
// and a range of corruption severities. Simulates that population and prints
// its nine equal-population roi error deciles.
#include <algorithm>
#include <cstdio>
#include <vector>

#include "risemar/core/random.hpp"
#include "risemar/ctphys/ctphys.hpp"
#include "risemar/metrics/metrics.hpp"
#include "risemar/selftrain/selftrain.hpp"

using namespace risemar;
using namespace risemar::ctphys;

namespace {

std::vector<ArtifactPair> make_pairs(int count, std::uint64_t seed,
                                     bool clinical) {
  const ScanGeometry geom =
      ScanGeometry::desk_default(64, clinical ? 72 : 90, clinical ? 80 : 96);
  const SpectrumModel base = clinical ? SpectrumModel::clinical_default()
                                      : SpectrumModel::simulated_default();
  const double severity[4] = {1.0, 0.6, 0.35, 0.2};
  std::vector<ArtifactPair> out;
  for (int i = 0; i < count; ++i) {
    SpectrumModel spec = base;
    spec.photon_count *= severity[i % 4];
    const bool torso = clinical ? (i % 3 == 0) : (i % 3 != 0);
    Phantom ph = make_phantom(
        seed + static_cast<std::uint64_t>(i),
        torso ? PhantomProfile::torso_like : PhantomProfile::dental_like, 64,
        clinical ? 1 + (i % 4) / 3 : -1);
    out.push_back(simulate_metal_artifact(
        ph, spec, geom, seed + 900000 + static_cast<std::uint64_t>(i),
        clinical ? DomainTag::clinical : DomainTag::simulated));
  }
  return out;
}

}  // namespace

int main() {
  Rng rng(20240817);
  auto sim = make_pairs(16, 1000, false);
  auto cli = make_pairs(16, 2000, true);
  std::vector<const ArtifactPair*> all;
  for (const auto& p : sim) all.push_back(&p);
  for (const auto& p : cli) all.push_back(&p);

  // reduction nets at three training stages (epoch 1, 6, 20)
  selftrain::RiseTrainConfig tc;
  tc.arch = {.depth = 3, .base_width = 8};
  tc.seed = 7;
  tc.warm_epochs = 20;
  auto long_run = selftrain::pretrain_supervised(sim, tc);
  tc.warm_epochs = 6;
  auto short_run = selftrain::pretrain_supervised(sim, tc);
  const models::MARNet* nets[3] = {&long_run.undertrained, &short_run.student,
                                   &long_run.student};

  std::vector<double> errors;
  for (const ArtifactPair* p : all) {
    errors.push_back(
        metrics::mae(p->artifact_image, p->clean_image, p->roi_mask));
    for (double alpha : {0.25, 0.5, 0.75}) {
      Grid blend(64, 64);
      for (std::size_t k = 0; k < blend.size(); ++k)
        blend.v[k] = alpha * p->clean_image.v[k] +
                     (1.0 - alpha) * p->artifact_image.v[k];
      errors.push_back(metrics::mae(blend, p->clean_image, p->roi_mask));
    }
    nn::NoGradGuard ng;
    for (const models::MARNet* net : nets) {
      nn::Tensor y = net->forward(
          nn::Tensor::from_vector({1, 1, 64, 64}, p->artifact_image.v));
      Grid img(64, 64);
      for (std::size_t k = 0; k < img.size(); ++k)
        img.v[k] = std::clamp(y.values()[k], 0.0, 1.0);
      errors.push_back(metrics::mae(img, p->clean_image, p->roi_mask));
    }
  }

  std::sort(errors.begin(), errors.end());
  std::printf("n = %zu  min %.6f  max %.6f\n", errors.size(), errors.front(),
              errors.back());
  std::printf("boundaries = {");
  for (int d = 1; d <= 9; ++d) {
    const std::size_t idx = errors.size() * static_cast<std::size_t>(d) / 10;
    std::printf("%s%.6f", d > 1 ? ", " : "", errors[idx]);
  }
  std::printf("}\n");
  return 0;
}
