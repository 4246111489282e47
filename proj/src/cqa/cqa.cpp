#include "risemar/cqa/cqa.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "risemar/metrics/metrics.hpp"

namespace risemar::cqa {

using namespace risemar::nn;

int check_quality_label(int q) {
  if (q < 1 || q > 10)
    throw std::invalid_argument("quality label must be in 1..10");
  return q;
}

double prob2qua(const std::vector<double>& p) {
  if (p.size() != 10) throw std::invalid_argument("prob2qua: need 10 classes");
  double sum = 0.0, q = 0.0;
  for (std::size_t k = 0; k < 10; ++k) {
    if (p[k] < 0.0) throw std::invalid_argument("prob2qua: negative probability");
    sum += p[k];
    q += static_cast<double>(k + 1) * p[k];
  }
  if (std::abs(sum - 1.0) > 1e-6)
    throw std::invalid_argument("prob2qua: probabilities must sum to 1");
  return q;
}

std::vector<double> prob2qua_rows(const Tensor& prob) {
  if (prob.ndim() != 2 || prob.dim(1) != 10)
    throw std::invalid_argument("prob2qua_rows: expect [N,10]");
  std::vector<double> out(static_cast<std::size_t>(prob.dim(0)));
  for (int n = 0; n < prob.dim(0); ++n) {
    std::vector<double> row(10);
    for (int k = 0; k < 10; ++k)
      row[static_cast<std::size_t>(k)] =
          prob.values()[static_cast<std::size_t>(n) * 10 + k];
    out[static_cast<std::size_t>(n)] = prob2qua(row);
  }
  return out;
}

Tensor ce_loss(const Tensor& prob, const std::vector<int>& labels) {
  if (prob.ndim() != 2 || prob.dim(0) != static_cast<int>(labels.size()))
    throw std::invalid_argument("ce_loss: batch size mismatch");
  std::vector<int> idx;
  idx.reserve(labels.size());
  for (int q : labels) idx.push_back(check_quality_label(q) - 1);
  return mean(nll_pick(prob, idx));
}

void MemoryBank::push(std::vector<double> latent, int label) {
  check_quality_label(label);
  entries_.push_back({std::move(latent), label});
  while (entries_.size() > capacity_) entries_.pop_front();
}

Tensor scl_loss(const Tensor& latent, const std::vector<int>& labels,
                const MemoryBank& bank, bool* empty_flag) {
  if (latent.ndim() != 2 || latent.dim(0) != static_cast<int>(labels.size()))
    throw std::invalid_argument("scl_loss: batch size mismatch");
  if (empty_flag) *empty_flag = false;
  const int N = latent.dim(0), D = latent.dim(1);
  const auto& entries = bank.entries();
  const int M = static_cast<int>(entries.size());
  if (M == 0) {
    if (empty_flag) *empty_flag = true;
    return Tensor::scalar(0.0);
  }
  for (const auto& e : entries)
    if (static_cast<int>(e.latent.size()) != D)
      throw std::invalid_argument("scl_loss: bank latent dimension mismatch");

  // positives per sample; the per-row weight realizes 1/|M_q| * sum over M_q
  std::vector<double> weights(static_cast<std::size_t>(N) * M, 0.0);
  bool any_positive = false;
  for (int i = 0; i < N; ++i) {
    int count = 0;
    for (int j = 0; j < M; ++j)
      if (entries[static_cast<std::size_t>(j)].label == labels[static_cast<std::size_t>(i)]) ++count;
    if (count == 0) {
      if (empty_flag) *empty_flag = true;
      continue;
    }
    any_positive = true;
    for (int j = 0; j < M; ++j)
      if (entries[static_cast<std::size_t>(j)].label == labels[static_cast<std::size_t>(i)])
        weights[static_cast<std::size_t>(i) * M + j] = 1.0 / count;
  }
  if (!any_positive) return Tensor::scalar(0.0);

  std::vector<double> zt(static_cast<std::size_t>(D) * M);
  for (int j = 0; j < M; ++j)
    for (int d = 0; d < D; ++d)
      zt[static_cast<std::size_t>(d) * M + j] =
          entries[static_cast<std::size_t>(j)].latent[static_cast<std::size_t>(d)];
  Tensor bank_t = Tensor::from_vector({D, M}, std::move(zt));  // constant

  Tensor logits = scale(matmul(latent, bank_t), 1.0 / bank.tau());  // [N,M]
  Tensor logp = log_(softmax_lastdim(logits), 1e-12);
  Tensor w = Tensor::from_vector({N, M}, std::move(weights));
  return scale(sum(mul(logp, w)), -1.0 / static_cast<double>(N));
}

Tensor cqa_loss(const Tensor& prob, const Tensor& latent,
                const std::vector<int>& labels, const MemoryBank& bank,
                double lambda_scl, bool* empty_flag) {
  Tensor ce = ce_loss(prob, labels);
  Tensor scl = scl_loss(latent, labels, bank, empty_flag);
  return add(ce, scale(scl, lambda_scl));
}

void bank_push(MemoryBank& bank, const Tensor& latent,
               const std::vector<int>& labels) {
  if (latent.ndim() != 2 || latent.dim(0) != static_cast<int>(labels.size()))
    throw std::invalid_argument("bank_push: batch size mismatch");
  const int D = latent.dim(1);
  for (int i = 0; i < latent.dim(0); ++i) {
    std::vector<double> row(
        latent.values().begin() + static_cast<std::ptrdiff_t>(i) * D,
        latent.values().begin() + static_cast<std::ptrdiff_t>(i + 1) * D);
    bank.push(std::move(row), labels[static_cast<std::size_t>(i)]);
  }
}

OracleThresholds OracleThresholds::defaults() {
  // Frozen once as the equal-population roi-error deciles of the image
  // population the oracle scores in practice: artifact images, clean/artifact
  // blends, and staged reduction-network outputs over both domains; see
  // tools/calibrate_oracle.
  return {{0.007483, 0.011779, 0.014459, 0.017361, 0.020618, 0.023752,
           0.026742, 0.029256, 0.035628}};
}

int quality_oracle(const Grid& pred, const Grid& gt, const Grid& roi_mask,
                   const OracleThresholds& th) {
  for (std::size_t i = 1; i < th.boundaries.size(); ++i)
    if (!(th.boundaries[i] > th.boundaries[i - 1]))
      throw std::invalid_argument("quality_oracle: boundaries must increase");
  const double e = metrics::mae(pred, gt, roi_mask);
  int below = 0;
  for (double b : th.boundaries)
    if (e >= b) ++below;
  return 10 - below;
}

LabeledImage dqaug_moderate(const ctphys::ArtifactPair& pair,
                            const models::MARNet& undertrained,
                            const ctphys::SpectrumModel& spectrum,
                            const OracleThresholds& th) {
  NoGradGuard ng;
  const Grid& x = pair.artifact_image;
  Tensor xt = Tensor::from_vector({1, 1, x.rows, x.cols}, x.v);
  Tensor li_t;
  if (undertrained.config().input_mode != models::InputMode::artifact) {
    Grid li = ctphys::li_image_for_pair(pair, spectrum);
    li_t = Tensor::from_vector({1, 1, li.rows, li.cols}, li.v);
  }
  Tensor y = undertrained.forward(xt, li_t);
  Grid out(x.rows, x.cols);
  for (std::size_t i = 0; i < out.size(); ++i)
    out.v[i] = std::clamp(y.values()[i], 0.0, 1.0);
  const int label = quality_oracle(out, pair.clean_image, pair.roi_mask, th);
  return {std::move(out), label};
}

LabeledImage dqaug_mixup(const LabeledImage& a, const LabeledImage& b,
                         double lambda) {
  if (!a.image.same_shape(b.image))
    throw std::invalid_argument("dqaug_mixup: shape mismatch");
  if (lambda < 0.0 || lambda > 1.0)
    throw std::invalid_argument("dqaug_mixup: lambda outside [0,1]");
  LabeledImage out;
  out.image = Grid(a.image.rows, a.image.cols);
  for (std::size_t i = 0; i < out.image.size(); ++i)
    out.image.v[i] = lambda * a.image.v[i] + (1.0 - lambda) * b.image.v[i];
  const double mixed = lambda * a.label + (1.0 - lambda) * b.label;
  out.label = std::clamp(static_cast<int>(std::lround(mixed)), 1, 10);
  return out;
}

double draw_mixup_lambda(Rng& rng) { return rng.beta(0.4, 0.4); }

std::string to_string(Provenance p) {
  switch (p) {
    case Provenance::oracle_paired: return "oracle-paired";
    case Provenance::oracle_rule: return "oracle-rule";
    case Provenance::mixup_derived: return "mixup-derived";
  }
  return "?";
}

namespace {
Provenance provenance_from_string(const std::string& s) {
  if (s == "oracle-paired") return Provenance::oracle_paired;
  if (s == "oracle-rule") return Provenance::oracle_rule;
  if (s == "mixup-derived") return Provenance::mixup_derived;
  throw std::invalid_argument("unknown provenance: " + s);
}
}  // namespace

void write_annotations_jsonl(const std::string& path,
                             const std::vector<AnnotationRecord>& records) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open annotations for write: " + path);
  for (const auto& r : records) {
    nlohmann::json j{{"id", r.id},
                     {"quality", r.quality},
                     {"provenance", to_string(r.provenance)}};
    os << j.dump() << '\n';
  }
}

std::vector<AnnotationRecord> read_annotations_jsonl(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open annotations: " + path);
  std::vector<AnnotationRecord> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    out.push_back({j.at("id").get<std::string>(),
                   check_quality_label(j.at("quality").get<int>()),
                   provenance_from_string(j.at("provenance").get<std::string>())});
  }
  return out;
}

}  // namespace risemar::cqa
