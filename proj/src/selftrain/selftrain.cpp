#include "risemar/selftrain/selftrain.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "risemar/cqa/cqa.hpp"
#include "risemar/metrics/metrics.hpp"
#include "risemar/nn/optim.hpp"

namespace risemar::selftrain {

using namespace risemar::nn;

namespace {

Tensor grid_tensor(const Grid& g) {
  return Tensor::from_vector({1, 1, g.rows, g.cols}, g.v);
}

Grid clip01(const std::vector<double>& v, int rows, int cols) {
  Grid out(rows, cols);
  for (std::size_t i = 0; i < out.size(); ++i)
    out.v[i] = std::clamp(v[i], 0.0, 1.0);
  return out;
}

bool needs_li(const models::MARNetConfig& cfg) {
  return cfg.input_mode != models::InputMode::artifact;
}

// Interpolation-corrected companions for every pair, when the input mode
// consumes them; empty otherwise.
std::vector<Grid> precompute_li(const std::vector<ArtifactPair>& data,
                                const ctphys::SpectrumModel* spectrum,
                                const models::MARNetConfig& arch,
                                const char* who) {
  std::vector<Grid> out;
  if (!needs_li(arch)) return out;
  if (!spectrum)
    throw std::invalid_argument(std::string(who) +
                                ": input mode needs a spectrum model for LI");
  out.reserve(data.size());
  for (const auto& p : data) out.push_back(ctphys::li_image_for_pair(p, *spectrum));
  return out;
}

struct Batch {
  Tensor x, li, y, metal;
};

Batch make_batch(const std::vector<ArtifactPair>& data,
                 const std::vector<Grid>& li_images,
                 const std::vector<std::size_t>& idx) {
  const Grid& g0 = data[idx[0]].artifact_image;
  const int N = static_cast<int>(idx.size()), H = g0.rows, W = g0.cols;
  std::vector<double> xv, lv, yv, mv;
  for (std::size_t i : idx) {
    const auto& p = data[i];
    xv.insert(xv.end(), p.artifact_image.v.begin(), p.artifact_image.v.end());
    yv.insert(yv.end(), p.clean_image.v.begin(), p.clean_image.v.end());
    mv.insert(mv.end(), p.metal_mask.v.begin(), p.metal_mask.v.end());
    if (!li_images.empty())
      lv.insert(lv.end(), li_images[i].v.begin(), li_images[i].v.end());
  }
  Batch b;
  b.x = Tensor::from_vector({N, 1, H, W}, std::move(xv));
  b.y = Tensor::from_vector({N, 1, H, W}, std::move(yv));
  b.metal = Tensor::from_vector({N, 1, H, W}, std::move(mv));
  if (!lv.empty()) b.li = Tensor::from_vector({N, 1, H, W}, std::move(lv));
  return b;
}

Tensor masked_l1(const Tensor& pred, const Tensor& target,
                 const Tensor& metal) {
  std::vector<double> w(metal.numel());
  for (std::size_t i = 0; i < w.size(); ++i)
    w[i] = metal.values()[i] != 0.0 ? 0.0 : 1.0;
  Tensor weight = Tensor::from_vector(metal.shape(), std::move(w));
  return masked_mean(abs_(sub(pred, target)), weight);
}

}  // namespace

Tensor sim_loss(const models::MARNet& student, const Tensor& x,
                const Tensor& li, const Tensor& y, const Tensor& metal) {
  if (x.shape() != y.shape() || x.shape() != metal.shape())
    throw std::invalid_argument("sim_loss: shape mismatch");
  return masked_l1(student.forward(x, li), y, metal);
}

PseudoAssessment assess_pseudo(const models::MARNet& teacher,
                               const models::CQANet& cqa,
                               const ArtifactPair& x_cli, const Grid* li) {
  NoGradGuard ng;
  Tensor li_t;
  if (li) li_t = grid_tensor(*li);
  Tensor out = teacher.forward(grid_tensor(x_cli.artifact_image), li_t);
  PseudoAssessment res;
  res.y_tilde = clip01(out.values(), x_cli.artifact_image.rows,
                       x_cli.artifact_image.cols);
  res.q = cqa::prob2qua_rows(cqa.forward(grid_tensor(res.y_tilde)).prob)[0];
  return res;
}

PseudoPairSet build_pseudo_pairs(const ArtifactPair& x_cli,
                                 const Grid& y_tilde, const Grid& y_prime,
                                 double q, const QualityRange& range) {
  range.validate();
  const Grid& x = x_cli.artifact_image;
  if (!x.same_shape(y_tilde) || !x.same_shape(y_prime))
    throw std::invalid_argument("build_pseudo_pairs: shape mismatch");
  PseudoPairSet ps;
  ps.x_cli = x;
  ps.y_tilde = y_tilde;
  ps.metal_mask = x_cli.metal_mask;
  ps.y_prime = y_prime;
  ps.residual = Grid(x.rows, x.cols);
  ps.x_prime_preclip = Grid(x.rows, x.cols);
  ps.x_prime = Grid(x.rows, x.cols);
  for (std::size_t i = 0; i < ps.residual.size(); ++i) {
    ps.residual.v[i] = x.v[i] - y_tilde.v[i];
    ps.x_prime_preclip.v[i] = y_prime.v[i] + ps.residual.v[i];
    ps.x_prime.v[i] = std::clamp(ps.x_prime_preclip.v[i], 0.0, 1.0);
  }
  ps.q = q;
  ps.accepted = range.contains(q);
  return ps;
}

Tensor cli_loss(const models::MARNet& student, const PseudoPairSet& pairs,
                const Grid* li1, const Grid* li2) {
  if (!pairs.accepted) return Tensor::scalar(0.0);
  Tensor metal = grid_tensor(pairs.metal_mask);
  Tensor li1_t, li2_t;
  if (li1) li1_t = grid_tensor(*li1);
  if (li2) li2_t = grid_tensor(*li2);
  Tensor t1 = masked_l1(student.forward(grid_tensor(pairs.x_cli), li1_t),
                        grid_tensor(pairs.y_tilde), metal);
  Tensor t2 = masked_l1(student.forward(grid_tensor(pairs.x_prime), li2_t),
                        grid_tensor(pairs.y_prime), metal);
  return scale(add(t1, t2), 0.5);
}

Tensor total_loss(const Tensor& sim_term, const Tensor& cli_term,
                  bool no_cli_loss) {
  if (no_cli_loss) return sim_term;
  return add(sim_term, cli_term);
}

void ema_update(ParamList& teacher, const ParamList& student, double eta) {
  if (eta < 0.0 || eta >= 1.0)
    throw std::invalid_argument("ema_update: eta must lie in [0,1)");
  if (teacher.size() != student.size())
    throw std::invalid_argument("ema_update: parameter structure mismatch");
  for (std::size_t i = 0; i < teacher.size(); ++i) {
    if (teacher[i].name != student[i].name ||
        teacher[i].tensor.numel() != student[i].tensor.numel())
      throw std::invalid_argument("ema_update: parameter structure mismatch");
    auto& phi = teacher[i].tensor.values();
    const auto& theta = student[i].tensor.values();
    for (std::size_t j = 0; j < phi.size(); ++j)
      phi[j] = eta * phi[j] + (1.0 - eta) * theta[j];
  }
}

models::MARNet clone_net(models::MARNet& net) {
  Rng scratch(0);
  models::MARNet copy(net.config(), scratch);
  ParamList src = net.params(), dst = copy.params();
  for (std::size_t i = 0; i < src.size(); ++i)
    dst[i].tensor.values() = src[i].tensor.values();
  return copy;
}

PretrainResult pretrain_supervised(const std::vector<ArtifactPair>& sim_train,
                                   const RiseTrainConfig& cfg) {
  if (sim_train.empty())
    throw std::invalid_argument("pretrain_supervised: empty dataset");
  Rng rng(cfg.seed * 6271 + 3);
  const std::vector<Grid> li =
      precompute_li(sim_train, cfg.sim_spectrum, cfg.arch, "pretrain_supervised");

  models::MARNet student(cfg.arch, rng);
  Adam opt(student.params(), {.lr = cfg.lr});
  PretrainResult res{models::MARNet(), models::MARNet(), models::MARNet(), {}};

  const int batch = std::max(1, cfg.sim_batch);
  std::vector<std::size_t> order(sim_train.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; epoch <= cfg.warm_epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    int steps = 0;
    for (std::size_t at = 0; at < order.size(); at += batch) {
      std::vector<std::size_t> idx(
          order.begin() + static_cast<std::ptrdiff_t>(at),
          order.begin() + static_cast<std::ptrdiff_t>(
                              std::min(at + batch, order.size())));
      Batch b = make_batch(sim_train, li, idx);
      Tensor loss = sim_loss(student, b.x, b.li, b.y, b.metal);
      opt.zero_grad();
      backward(loss);
      opt.step();
      loss_sum += loss.item();
      ++steps;
    }
    res.epoch_losses.push_back(loss_sum / std::max(1, steps));
    if (epoch == 1) res.undertrained = clone_net(student);
  }
  res.teacher = clone_net(student);
  res.student = std::move(student);
  return res;
}

namespace {

struct EvalOut {
  double psnr = 0.0, ssim = 0.0;
  std::vector<Grid> outputs;
};

EvalOut eval_student(models::MARNet& student,
                     const std::vector<ArtifactPair>& data,
                     const std::vector<Grid>& li) {
  EvalOut out;
  if (data.empty()) return out;
  NoGradGuard ng;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& p = data[i];
    Tensor li_t;
    if (!li.empty()) li_t = grid_tensor(li[i]);
    Tensor y = student.forward(grid_tensor(p.artifact_image), li_t);
    Grid img = clip01(y.values(), p.artifact_image.rows, p.artifact_image.cols);
    const double ps = metrics::psnr(img, p.clean_image, p.metal_mask);
    if (std::isfinite(ps)) out.psnr += ps;
    out.ssim += metrics::ssim(img, p.clean_image, p.metal_mask);
    out.outputs.push_back(std::move(img));
  }
  out.psnr /= static_cast<double>(data.size());
  out.ssim /= static_cast<double>(data.size());
  return out;
}

}  // namespace

RiseResult train_rise(models::MARNet& student, models::MARNet& teacher,
                      const models::CQANet* cqa,
                      const std::vector<ArtifactPair>& sim_train,
                      const std::vector<ArtifactPair>& cli_train,
                      const std::vector<ArtifactPair>& sim_eval,
                      const std::vector<ArtifactPair>& cli_eval,
                      const RiseTrainConfig& cfg) {
  if (sim_train.empty() || cli_train.empty())
    throw std::invalid_argument("train_rise: empty training set");
  if (!cqa && !cfg.no_cqa)
    throw std::invalid_argument("train_rise: CQA network required unless no_cqa");
  cfg.quality_range.validate();

  Rng rng(cfg.seed * 104729 + 41);
  const std::vector<Grid> sim_li =
      precompute_li(sim_train, cfg.sim_spectrum, cfg.arch, "train_rise");
  const std::vector<Grid> cli_li =
      precompute_li(cli_train, cfg.cli_spectrum, cfg.arch, "train_rise");
  const std::vector<Grid> sim_eval_li =
      precompute_li(sim_eval, cfg.sim_spectrum, cfg.arch, "train_rise");
  const std::vector<Grid> cli_eval_li =
      precompute_li(cli_eval, cfg.cli_spectrum, cfg.arch, "train_rise");

  Adam opt(student.params(), {.lr = cfg.lr});
  ParamList teacher_params = teacher.params();
  // gate is wide open without CQA, matching the ablation definition
  const QualityRange gate =
      cfg.no_cqa ? QualityRange(1.0, 10.0) : cfg.quality_range;

  RiseResult res;
  std::vector<std::size_t> cli_order(cli_train.size());
  std::iota(cli_order.begin(), cli_order.end(), 0);

  for (int epoch = 1; epoch <= cfg.main_epochs; ++epoch) {
    rng.shuffle(cli_order);
    EpochStats st;
    st.epoch = epoch;
    double q_sum = 0.0, sim_sum = 0.0, cli_sum = 0.0;
    long steps = 0;

    for (std::size_t ci : cli_order) {
      // simulated-domain batch
      std::vector<std::size_t> idx;
      for (int b = 0; b < std::max(1, cfg.sim_batch); ++b)
        idx.push_back(static_cast<std::size_t>(
            rng.randint(0, static_cast<std::int64_t>(sim_train.size()) - 1)));
      Batch sb = make_batch(sim_train, sim_li, idx);
      Tensor sim_term = sim_loss(student, sb.x, sb.li, sb.y, sb.metal);

      Tensor cli_term = Tensor::scalar(0.0);
      double q = 0.0;
      bool accepted = false;
      if (!cfg.no_cli_loss) {
        const ArtifactPair& sample = cli_train[ci];
        const Grid* li_ptr = cli_li.empty() ? nullptr : &cli_li[ci];
        Grid y_tilde;
        if (cqa) {
          PseudoAssessment pa = assess_pseudo(teacher, *cqa, sample, li_ptr);
          y_tilde = std::move(pa.y_tilde);
          q = pa.q;
        } else {
          NoGradGuard ng;
          Tensor li_t;
          if (li_ptr) li_t = grid_tensor(*li_ptr);
          Tensor out = teacher.forward(grid_tensor(sample.artifact_image), li_t);
          y_tilde = clip01(out.values(), sample.artifact_image.rows,
                           sample.artifact_image.cols);
          q = 10.0;  // ungated
        }
        // unpaired artifact-free image from another clinical sample
        std::size_t oj = static_cast<std::size_t>(
            rng.randint(0, static_cast<std::int64_t>(cli_train.size()) - 1));
        if (cli_train.size() > 1)
          while (oj == ci)
            oj = static_cast<std::size_t>(
                rng.randint(0, static_cast<std::int64_t>(cli_train.size()) - 1));
        PseudoPairSet pairs = build_pseudo_pairs(
            sample, y_tilde, cli_train[oj].clean_image, q, gate);
        const Grid* li2 = cli_li.empty() ? nullptr : &cli_li[oj];
        // pair 2 reuses the donor sample's LI companion as the closest
        // available precorrection for X'
        cli_term = cli_loss(student, pairs, li_ptr, li2);
        if (pairs.accepted) ++st.accepted_count;
        accepted = pairs.accepted;
        (void)accepted;
        if (cli_term.item() != 0.0) res.contributing_q.push_back(q);
        q_sum += q;
      }

      Tensor loss = total_loss(sim_term, cli_term, cfg.no_cli_loss);
      opt.zero_grad();
      backward(loss);
      opt.step();
      if (!cfg.no_ema) ema_update(teacher_params, opt.params(), cfg.ema_eta);

      sim_sum += sim_term.item();
      cli_sum += cli_term.item();
      ++steps;
    }

    st.mean_pseudo_quality = cfg.no_cli_loss ? 0.0 : q_sum / static_cast<double>(steps);
    st.sim_loss = sim_sum / static_cast<double>(steps);
    st.cli_loss = cli_sum / static_cast<double>(steps);

    EvalOut in = eval_student(student, sim_eval, sim_eval_li);
    EvalOut out = eval_student(student, cli_eval, cli_eval_li);
    st.eval_psnr_in = in.psnr;
    st.eval_psnr_out = out.psnr;
    st.eval_ssim_out = out.ssim;
    if (cqa && !out.outputs.empty())
      st.eval_cqa_out = metrics::cqa_quality_metric(*cqa, out.outputs);
    res.stats.push_back(st);
  }

  if (!cfg.stats_csv.empty()) write_stats_csv(cfg.stats_csv, res.stats);
  return res;
}

void write_stats_csv(const std::string& path,
                     const std::vector<EpochStats>& stats) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open stats csv: " + path);
  os << "epoch,accepted_count,mean_pseudo_quality,sim_loss,cli_loss,"
        "eval_psnr_in,eval_psnr_out,eval_ssim_out,eval_cqa_out\n";
  for (const auto& s : stats)
    os << s.epoch << ',' << s.accepted_count << ',' << s.mean_pseudo_quality
       << ',' << s.sim_loss << ',' << s.cli_loss << ',' << s.eval_psnr_in
       << ',' << s.eval_psnr_out << ',' << s.eval_ssim_out << ','
       << s.eval_cqa_out << '\n';
}

}  // namespace risemar::selftrain
