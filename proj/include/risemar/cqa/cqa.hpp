#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <string>
#include <vector>

#include "risemar/core/random.hpp"
#include "risemar/ctphys/ctphys.hpp"
#include "risemar/models/cqanet.hpp"
#include "risemar/models/marnet.hpp"
#include "risemar/nn/tensor.hpp"

namespace risemar::cqa {

using ctphys::Grid;
using nn::Tensor;

// Quality classes run 1 (worst) to 10 (best); throws outside that range.
int check_quality_label(int q);

// Expected class index of a 10-way distribution. Validates nonnegativity and
// unit sum (1e-6 slack).
double prob2qua(const std::vector<double>& p);
// Row-wise prob2qua of a [N,10] probability tensor.
std::vector<double> prob2qua_rows(const Tensor& prob);

// Mean cross-entropy of predicted distributions against hard labels (1..10).
Tensor ce_loss(const Tensor& prob, const std::vector<int>& labels);

struct BankEntry {
  std::vector<double> latent;  // detached unit vector
  int label = 1;
};

// Fixed-capacity FIFO of labeled latents for the contrastive term.
class MemoryBank {
 public:
  explicit MemoryBank(std::size_t capacity = 300, double tau = 0.5)
      : capacity_(capacity), tau_(tau) {}

  void push(std::vector<double> latent, int label);
  std::size_t size() const { return entries_.size(); }
  std::size_t capacity() const { return capacity_; }
  double tau() const { return tau_; }
  const std::deque<BankEntry>& entries() const { return entries_; }

 private:
  std::size_t capacity_;
  double tau_;
  std::deque<BankEntry> entries_;
};

// Supervised contrastive loss of a [N,D] latent batch against the bank.
// Samples whose label has no positives in the bank contribute zero; when that
// happens *empty_flag (if given) is set.
Tensor scl_loss(const Tensor& latent, const std::vector<int>& labels,
                const MemoryBank& bank, bool* empty_flag = nullptr);

// ce + lambda_scl * scl (default weight 0.01).
Tensor cqa_loss(const Tensor& prob, const Tensor& latent,
                const std::vector<int>& labels, const MemoryBank& bank,
                double lambda_scl = 0.01, bool* empty_flag = nullptr);

// Detaches each row of a [N,D] latent batch into the bank.
void bank_push(MemoryBank& bank, const Tensor& latent,
               const std::vector<int>& labels);

// Decreasing piecewise-constant map from roi mean absolute error to a
// quality class. boundaries are strictly increasing; error below
// boundaries[0] scores 10, at or above boundaries[8] scores 1.
struct OracleThresholds {
  std::array<double, 9> boundaries;
  static OracleThresholds defaults();
};

int quality_oracle(const Grid& pred, const Grid& gt, const Grid& roi_mask,
                   const OracleThresholds& th = OracleThresholds::defaults());

struct LabeledImage {
  Grid image;
  int label = 1;
};

// Runs a deliberately under-trained reduction network on the artifact image
// and scores the output with the oracle, producing mid-quality samples.
LabeledImage dqaug_moderate(
    const ctphys::ArtifactPair& pair, const models::MARNet& undertrained,
    const ctphys::SpectrumModel& spectrum,
    const OracleThresholds& th = OracleThresholds::defaults());

// Pixel-wise convex blend with a rounded, clamped label blend.
LabeledImage dqaug_mixup(const LabeledImage& a, const LabeledImage& b,
                         double lambda);
double draw_mixup_lambda(Rng& rng);  // Beta(0.4, 0.4)

enum class Provenance { oracle_paired, oracle_rule, mixup_derived };
std::string to_string(Provenance p);

struct AnnotationRecord {
  std::string id;
  int quality = 1;
  Provenance provenance = Provenance::oracle_paired;
};

void write_annotations_jsonl(const std::string& path,
                             const std::vector<AnnotationRecord>& records);
std::vector<AnnotationRecord> read_annotations_jsonl(const std::string& path);

struct CqaTrainConfig {
  models::CQAConfig arch;
  int epochs = 20;
  double lr = 1e-3;
  int batch = 8;
  double tau = 0.5;
  double lambda_scl = 0.01;
  std::size_t bank_capacity = 300;
  bool use_dqaug = true;
  double dqaug_fraction = 0.5;  // fraction of each batch drawn from DQAug
  double val_fraction = 0.2;
  std::uint64_t seed = 0;
  std::string log_csv;  // optional
  // reduction networks at different training stages; their outputs on the
  // artifact images populate the moderate quality range
  std::vector<const models::MARNet*> undertrained;
  const ctphys::SpectrumModel* spectrum = nullptr;  // needed with `undertrained`
};

struct CqaEpochRow {
  int epoch = 0;
  double ce = 0.0, scl = 0.0, srcc = 0.0, plcc = 0.0;
};

struct CqaTrainResult {
  models::CQANet net;
  std::vector<CqaEpochRow> log;
  std::vector<AnnotationRecord> annotations;
  long dqaug_invocations = 0;
  double final_srcc = 0.0, final_plcc = 0.0;
};

// Trains the quality network on oracle-labeled pairs with on-the-fly DQAug.
// Per-epoch SRCC/PLCC are measured on a held-out fraction of the pairs.
CqaTrainResult train_cqa(const std::vector<ctphys::ArtifactPair>& dataset,
                         const CqaTrainConfig& cfg);

}  // namespace risemar::cqa
