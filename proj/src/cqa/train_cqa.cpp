#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <stdexcept>

#include "risemar/cqa/cqa.hpp"
#include "risemar/metrics/metrics.hpp"
#include "risemar/nn/optim.hpp"

namespace risemar::cqa {

using namespace risemar::nn;

namespace {

Tensor batch_tensor(const std::vector<const Grid*>& images) {
  const int N = static_cast<int>(images.size());
  const int H = images[0]->rows, W = images[0]->cols;
  std::vector<double> v;
  v.reserve(static_cast<std::size_t>(N) * H * W);
  for (const Grid* g : images) {
    if (g->rows != H || g->cols != W)
      throw std::invalid_argument("train_cqa: inconsistent image sizes");
    v.insert(v.end(), g->v.begin(), g->v.end());
  }
  return Tensor::from_vector({N, 1, H, W}, std::move(v));
}

Grid blend(const Grid& clean, const Grid& artifact, double alpha) {
  Grid out(clean.rows, clean.cols);
  for (std::size_t i = 0; i < out.size(); ++i)
    out.v[i] = alpha * clean.v[i] + (1.0 - alpha) * artifact.v[i];
  return out;
}

}  // namespace

CqaTrainResult train_cqa(const std::vector<ctphys::ArtifactPair>& dataset,
                         const CqaTrainConfig& cfg) {
  if (dataset.empty()) throw std::invalid_argument("train_cqa: empty dataset");
  if (!cfg.undertrained.empty() && !cfg.spectrum)
    throw std::invalid_argument(
        "train_cqa: the moderate-MAR augmentation needs a spectrum model");
  Rng rng(cfg.seed * 7919 + 17);

  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  const std::size_t n_val = std::min(
      dataset.size() - 1,
      std::max<std::size_t>(1, static_cast<std::size_t>(
                                   std::llround(cfg.val_fraction * dataset.size()))));
  std::vector<std::size_t> val_idx(order.begin(), order.begin() + n_val);
  std::vector<std::size_t> train_idx(order.begin() + n_val, order.end());
  if (train_idx.empty())
    throw std::invalid_argument("train_cqa: no training pairs after split");

  CqaTrainResult res;
  const OracleThresholds th = OracleThresholds::defaults();

  // Base pool: the artifact image scored against its paired ground truth,
  // and the ground truth itself (artifact-free rule: class 10).
  std::vector<LabeledImage> pool;
  for (std::size_t idx : train_idx) {
    const auto& p = dataset[idx];
    const int qx = quality_oracle(p.artifact_image, p.clean_image, p.roi_mask, th);
    pool.push_back({p.artifact_image, qx});
    res.annotations.push_back(
        {"p" + std::to_string(idx) + ":artifact", qx, Provenance::oracle_paired});
    pool.push_back({p.clean_image, 10});
    res.annotations.push_back(
        {"p" + std::to_string(idx) + ":clean", 10, Provenance::oracle_rule});
  }

  // Held-out set with a label spread: endpoints plus convex blends.
  std::vector<LabeledImage> val;
  for (std::size_t idx : val_idx) {
    const auto& p = dataset[idx];
    val.push_back({p.artifact_image,
                   quality_oracle(p.artifact_image, p.clean_image, p.roi_mask, th)});
    val.push_back({p.clean_image, 10});
    for (double a : {0.3, 0.55, 0.8}) {
      Grid img = blend(p.clean_image, p.artifact_image, a);
      const int q = quality_oracle(img, p.clean_image, p.roi_mask, th);
      val.push_back({std::move(img), q});
    }
  }

  models::CQANet net(cfg.arch, rng);
  Adam opt(net.params(), {.lr = cfg.lr});
  MemoryBank bank(cfg.bank_capacity, cfg.tau);

  // moderate outputs are deterministic per (stage, pair); compute lazily
  std::map<std::pair<std::size_t, std::size_t>, LabeledImage> moderate_cache;
  auto moderate_for = [&](std::size_t stage,
                          std::size_t idx) -> const LabeledImage& {
    auto key = std::make_pair(stage, idx);
    auto it = moderate_cache.find(key);
    if (it == moderate_cache.end()) {
      it = moderate_cache
               .emplace(key, dqaug_moderate(dataset[idx],
                                            *cfg.undertrained[stage],
                                            *cfg.spectrum, th))
               .first;
    }
    return it->second;
  };

  auto draw_augmented = [&]() -> LabeledImage {
    ++res.dqaug_invocations;
    const bool can_moderate = !cfg.undertrained.empty();
    if (can_moderate && rng.uniform() < 0.34) {
      const std::size_t stage = static_cast<std::size_t>(
          rng.randint(0, static_cast<std::int64_t>(cfg.undertrained.size()) - 1));
      const std::size_t idx = train_idx[static_cast<std::size_t>(
          rng.randint(0, static_cast<std::int64_t>(train_idx.size()) - 1))];
      return moderate_for(stage, idx);
    }
    const auto& a = pool[static_cast<std::size_t>(
        rng.randint(0, static_cast<std::int64_t>(pool.size()) - 1))];
    const auto& b = pool[static_cast<std::size_t>(
        rng.randint(0, static_cast<std::int64_t>(pool.size()) - 1))];
    return dqaug_mixup(a, b, draw_mixup_lambda(rng));
  };

  std::vector<double> val_truth;
  for (const auto& s : val) val_truth.push_back(s.label);

  const int batch = std::max(1, cfg.batch);
  const int steps_per_epoch =
      static_cast<int>((pool.size() + batch - 1) / batch);

  std::ofstream log_os;
  if (!cfg.log_csv.empty()) {
    log_os.open(cfg.log_csv, std::ios::trunc);
    if (!log_os)
      throw std::runtime_error("train_cqa: cannot open log " + cfg.log_csv);
    log_os << "epoch,ce,scl,srcc,plcc\n";
  }

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    // halve the learning rate twice over the run; late-epoch validation
    // correlations are noisy at the full rate
    opt.set_lr(cfg.lr * (epoch > 2 * cfg.epochs / 3   ? 0.25
                         : epoch > cfg.epochs / 3 ? 0.5
                                                  : 1.0));
    std::vector<std::size_t> sched(pool.size());
    std::iota(sched.begin(), sched.end(), 0);
    rng.shuffle(sched);
    std::size_t cursor = 0;

    double ce_sum = 0.0, scl_sum = 0.0;
    for (int step = 0; step < steps_per_epoch; ++step) {
      std::vector<LabeledImage> samples;
      for (int b = 0; b < batch; ++b) {
        if (cfg.use_dqaug && rng.uniform() < cfg.dqaug_fraction)
          samples.push_back(draw_augmented());
        else
          samples.push_back(pool[sched[cursor++ % sched.size()]]);
      }
      std::vector<const Grid*> images;
      std::vector<int> labels;
      for (const auto& s : samples) {
        images.push_back(&s.image);
        labels.push_back(s.label);
      }
      Tensor x = batch_tensor(images);
      models::CQAOut out = net.forward(x);
      Tensor ce = ce_loss(out.prob, labels);
      Tensor scl = scl_loss(out.latent, labels, bank);
      Tensor loss = add(ce, scale(scl, cfg.lambda_scl));
      opt.zero_grad();
      backward(loss);
      opt.step();
      bank_push(bank, out.latent, labels);
      ce_sum += ce.item();
      scl_sum += scl.item();
    }

    // held-out rank alignment for this epoch
    std::vector<double> val_pred;
    {
      NoGradGuard ng;
      for (const auto& s : val) {
        Tensor x = batch_tensor({&s.image});
        val_pred.push_back(prob2qua_rows(net.forward(x).prob)[0]);
      }
    }
    CqaEpochRow row;
    row.epoch = epoch;
    row.ce = ce_sum / steps_per_epoch;
    row.scl = scl_sum / steps_per_epoch;
    row.srcc = metrics::srcc(val_pred, val_truth);
    row.plcc = metrics::plcc(val_pred, val_truth);
    res.log.push_back(row);
    if (log_os.is_open())
      log_os << row.epoch << ',' << row.ce << ',' << row.scl << ',' << row.srcc
             << ',' << row.plcc << '\n';
  }

  if (!res.log.empty()) {
    res.final_srcc = res.log.back().srcc;
    res.final_plcc = res.log.back().plcc;
  }
  res.net = std::move(net);
  return res;
}

}  // namespace risemar::cqa
