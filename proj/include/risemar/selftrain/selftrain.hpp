#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "risemar/core/random.hpp"
#include "risemar/ctphys/ctphys.hpp"
#include "risemar/models/cqanet.hpp"
#include "risemar/models/marnet.hpp"
#include "risemar/nn/tensor.hpp"

namespace risemar::selftrain {

using ctphys::ArtifactPair;
using ctphys::Grid;
using nn::Tensor;

struct QualityRange {
  double lower = 7.0;
  double upper = 10.0;

  QualityRange() = default;
  QualityRange(double lo, double hi) : lower(lo), upper(hi) { validate(); }
  void validate() const {
    if (!(1.0 <= lower && lower <= upper && upper <= 10.0))
      throw std::invalid_argument("QualityRange: need 1 <= lower <= upper <= 10");
  }
  bool contains(double q) const { return lower <= q && q <= upper; }
};

// Clinical-domain pseudo pairs: the teacher output paired with its input,
// and the residual transplanted onto an unpaired artifact-free image.
struct PseudoPairSet {
  Grid x_cli, y_tilde;       // pair 1
  Grid residual;             // R = X - Ytilde, stored explicitly
  Grid y_prime, x_prime;     // pair 2, x_prime clipped to [0,1]
  Grid x_prime_preclip;      // kept so the transfer identity is testable
  Grid metal_mask;           // of the clinical sample that produced R
  bool accepted = false;
  double q = 0.0;
};

struct RiseTrainConfig {
  QualityRange quality_range{7.0, 10.0};
  double ema_eta = 0.999;
  int warm_epochs = 10;
  int main_epochs = 10;
  models::MARNetConfig arch;  // includes input mode
  bool no_cli_loss = false;
  bool no_ema = false;
  bool no_cqa = false;
  std::uint64_t seed = 0;
  double lr = 1e-3;
  int sim_batch = 2;
  std::string stats_csv;  // optional
  // needed only for input modes that consume interpolation-corrected images
  const ctphys::SpectrumModel* sim_spectrum = nullptr;
  const ctphys::SpectrumModel* cli_spectrum = nullptr;
};

struct EpochStats {
  int epoch = 0;
  long accepted_count = 0;
  double mean_pseudo_quality = 0.0;
  double sim_loss = 0.0;
  double cli_loss = 0.0;
  double eval_psnr_in = 0.0;
  double eval_psnr_out = 0.0;
  double eval_ssim_out = 0.0;
  double eval_cqa_out = 0.0;
};

// Masked ell-1 on non-metal pixels. x, y: [N,1,H,W]; metal: same shape,
// 1 marks excluded pixels.
Tensor sim_loss(const models::MARNet& student, const Tensor& x,
                const Tensor& li, const Tensor& y, const Tensor& metal);

// Frozen teacher pass plus CQA scoring; no gradient reaches either network.
struct PseudoAssessment {
  Grid y_tilde;  // clipped to [0,1]
  double q = 0.0;
};
PseudoAssessment assess_pseudo(const models::MARNet& teacher,
                               const models::CQANet& cqa, const ArtifactPair& x_cli,
                               const Grid* li = nullptr);

PseudoPairSet build_pseudo_pairs(const ArtifactPair& x_cli, const Grid& y_tilde,
                                 const Grid& y_prime, double q,
                                 const QualityRange& range);

// Zero when the pair set is rejected; otherwise the mean of the two masked
// ell-1 terms. li inputs belong to x_cli and x_prime respectively (null for
// image-only input modes).
Tensor cli_loss(const models::MARNet& student, const PseudoPairSet& pairs,
                const Grid* li1 = nullptr, const Grid* li2 = nullptr);

Tensor total_loss(const Tensor& sim_term, const Tensor& cli_term,
                  bool no_cli_loss);

// phi <- eta*phi + (1-eta)*theta, matched by name and size.
void ema_update(nn::ParamList& teacher, const nn::ParamList& student,
                double eta);

// Deep parameter copy into a freshly constructed network.
models::MARNet clone_net(models::MARNet& net);

struct PretrainResult {
  models::MARNet student;
  models::MARNet teacher;       // copy of the converged student
  models::MARNet undertrained;  // snapshot after the first epoch
  std::vector<double> epoch_losses;
};

PretrainResult pretrain_supervised(const std::vector<ArtifactPair>& sim_train,
                                   const RiseTrainConfig& cfg);

struct RiseResult {
  std::vector<EpochStats> stats;
  // q of every pseudo pair whose clinical term entered the loss with a
  // nonzero value; lets callers audit the gate after the fact
  std::vector<double> contributing_q;
};

// The self-training loop. `cqa` may be null only with no_cqa set (the gate
// then accepts everything). Evaluation sets may be empty (metrics zeroed).
RiseResult train_rise(models::MARNet& student, models::MARNet& teacher,
                      const models::CQANet* cqa,
                      const std::vector<ArtifactPair>& sim_train,
                      const std::vector<ArtifactPair>& cli_train,
                      const std::vector<ArtifactPair>& sim_eval,
                      const std::vector<ArtifactPair>& cli_eval,
                      const RiseTrainConfig& cfg);

void write_stats_csv(const std::string& path,
                     const std::vector<EpochStats>& stats);

}  // namespace risemar::selftrain
