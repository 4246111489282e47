#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "gradcheck.hpp"
#include "risemar/cqa/cqa.hpp"
#include "risemar/ctphys/ctphys.hpp"
#include "risemar/metrics/metrics.hpp"

using namespace risemar;
using namespace risemar::cqa;
using namespace risemar::nn;
using ctphys::Grid;

namespace {

std::vector<double> onehot(int k /*1..10*/) {
  std::vector<double> p(10, 0.0);
  p[static_cast<std::size_t>(k - 1)] = 1.0;
  return p;
}

std::vector<double> unit_vec(std::vector<double> v) {
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  for (auto& x : v) x /= n;
  return v;
}

std::vector<ctphys::ArtifactPair> make_pairs(int count, std::uint64_t seed0) {
  const auto geom = ctphys::ScanGeometry::desk_default(64, 90, 96);
  const auto spec = ctphys::SpectrumModel::simulated_default();
  std::vector<ctphys::ArtifactPair> out;
  for (int i = 0; i < count; ++i) {
    auto prof = (i % 3 == 0) ? ctphys::PhantomProfile::dental_like
                             : ctphys::PhantomProfile::torso_like;
    auto ph = ctphys::make_phantom(seed0 + static_cast<std::uint64_t>(i), prof, 64);
    out.push_back(ctphys::simulate_metal_artifact(
        ph, spec, geom, seed0 + 700 + static_cast<std::uint64_t>(i)));
  }
  return out;
}

}  // namespace

TEST_CASE("prob2qua closed forms, bounds and monotonicity") {
  CHECK(prob2qua(onehot(10)) == doctest::Approx(10.0));
  std::vector<double> uni(10, 0.1);
  CHECK(prob2qua(uni) == doctest::Approx(5.5));
  std::vector<double> ends(10, 0.0);
  ends[0] = 0.5;
  ends[9] = 0.5;
  CHECK(prob2qua(ends) == doctest::Approx(5.5));

  CHECK_THROWS_AS(prob2qua({0.5, 0.5}), std::invalid_argument);
  std::vector<double> neg(10, 0.2);
  neg[0] = -0.8;
  CHECK_THROWS_AS(prob2qua(neg), std::invalid_argument);
  std::vector<double> bad(10, 0.2);
  CHECK_THROWS_AS(prob2qua(bad), std::invalid_argument);

  Rng rng(51);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> p(10);
    double s = 0.0;
    for (auto& x : p) s += (x = rng.uniform(0.0, 1.0));
    for (auto& x : p) x /= s;
    const double q = prob2qua(p);
    CHECK(q >= 1.0);
    CHECK(q <= 10.0);
    // move mass from a lower to a strictly higher class
    std::vector<double> p2 = p;
    const double delta = p2[2] * 0.5;
    p2[2] -= delta;
    p2[7] += delta;
    CHECK(prob2qua(p2) > q);
  }
}

TEST_CASE("ce_loss closed forms and clamping") {
  auto prob_of = [](const std::vector<double>& row) {
    return Tensor::from_vector({1, 10}, row);
  };
  CHECK(ce_loss(prob_of(onehot(4)), {4}).item() == doctest::Approx(0.0));
  CHECK(ce_loss(prob_of(std::vector<double>(10, 0.1)), {7}).item() ==
        doctest::Approx(std::log(10.0)).epsilon(1e-9));
  std::vector<double> half(10, 0.5 / 9.0);
  half[2] = 0.5;
  CHECK(ce_loss(prob_of(half), {3}).item() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-9));
  // zero probability at the label is clamped, not infinite
  const double v = ce_loss(prob_of(onehot(1)), {2}).item();
  CHECK(std::isfinite(v));
  CHECK(v == doctest::Approx(-std::log(1e-12)).epsilon(1e-6));
  CHECK_THROWS_AS(ce_loss(prob_of(onehot(1)), {11}), std::invalid_argument);
}

TEST_CASE("memory bank FIFO semantics") {
  MemoryBank bank(300, 0.5);
  for (int i = 0; i < 5; ++i)
    bank.push(unit_vec({1.0, static_cast<double>(i)}), 1 + i);
  CHECK(bank.size() == 5);
  for (int i = 0; i < 5; ++i) CHECK(bank.entries()[static_cast<std::size_t>(i)].label == 1 + i);

  for (int i = 0; i < 296; ++i) bank.push(unit_vec({1.0, 2.0}), 7);
  CHECK(bank.size() == 300);
  // oldest entry (label 1) was evicted; the fifth push (label 5) survives
  CHECK(bank.entries().front().label == 2);
  CHECK_THROWS_AS(bank.push({1.0, 0.0}, 0), std::invalid_argument);
}

TEST_CASE("scl_loss closed forms") {
  MemoryBank bank(300, 1.0);
  std::vector<double> z{1.0, 0.0, 0.0, 0.0};
  bank.push(z, 3);                      // positive, identical
  bank.push({0.0, 1.0, 0.0, 0.0}, 5);  // negative, orthogonal
  Tensor latent = Tensor::from_vector({1, 4}, z);
  const double got = scl_loss(latent, {3}, bank).item();
  const double expect = -std::log(std::exp(1.0) / (std::exp(1.0) + 1.0));
  CHECK(got == doctest::Approx(expect).epsilon(1e-9));
  CHECK(expect == doctest::Approx(0.313262).epsilon(1e-5));

  MemoryBank only_pos(300, 1.0);
  only_pos.push(z, 3);
  CHECK(scl_loss(latent, {3}, only_pos).item() == doctest::Approx(0.0));

  MemoryBank empty(300, 1.0);
  bool flag = false;
  CHECK(scl_loss(latent, {3}, empty, &flag).item() == 0.0);
  CHECK(flag);

  // positives absent for this label -> zero with flag
  flag = false;
  CHECK(scl_loss(latent, {9}, bank, &flag).item() == 0.0);
  CHECK(flag);
}

TEST_CASE("scl_loss matches a brute-force two-loop oracle and ignores bank order") {
  Rng rng(52);
  const int D = 6, M = 32, N = 3;
  const double tau = 0.5;
  MemoryBank bank(300, tau);
  std::vector<std::vector<double>> zs;
  std::vector<int> zl;
  for (int j = 0; j < M; ++j) {
    std::vector<double> v(D);
    for (auto& x : v) x = rng.normal();
    zs.push_back(unit_vec(v));
    zl.push_back(static_cast<int>(rng.randint(1, 10)));
    bank.push(zs.back(), zl.back());
  }
  std::vector<double> lat;
  std::vector<int> labels;
  for (int i = 0; i < N; ++i) {
    std::vector<double> v(D);
    for (auto& x : v) x = rng.normal();
    v = unit_vec(v);
    lat.insert(lat.end(), v.begin(), v.end());
    labels.push_back(zl[static_cast<std::size_t>(i)]);  // guarantee positives
  }
  Tensor latent = Tensor::from_vector({N, D}, lat);
  const double got = scl_loss(latent, labels, bank).item();

  double expect = 0.0;
  for (int i = 0; i < N; ++i) {
    double denom = 0.0;
    for (int j = 0; j < M; ++j) {
      double dot = 0.0;
      for (int d = 0; d < D; ++d) dot += lat[static_cast<std::size_t>(i) * D + d] * zs[static_cast<std::size_t>(j)][static_cast<std::size_t>(d)];
      denom += std::exp(dot / tau);
    }
    double acc = 0.0;
    int npos = 0;
    for (int j = 0; j < M; ++j) {
      if (zl[static_cast<std::size_t>(j)] != labels[static_cast<std::size_t>(i)]) continue;
      double dot = 0.0;
      for (int d = 0; d < D; ++d) dot += lat[static_cast<std::size_t>(i) * D + d] * zs[static_cast<std::size_t>(j)][static_cast<std::size_t>(d)];
      acc += std::log(std::exp(dot / tau) / denom);
      ++npos;
    }
    if (npos > 0) expect -= acc / npos;
  }
  expect /= N;
  CHECK(got == doctest::Approx(expect).epsilon(1e-6));

  // permuting the bank leaves the loss unchanged
  MemoryBank shuffled(300, tau);
  std::vector<std::size_t> order(M);
  for (std::size_t j = 0; j < order.size(); ++j) order[j] = j;
  rng.shuffle(order);
  for (std::size_t j : order) shuffled.push(zs[j], zl[j]);
  CHECK(scl_loss(latent, labels, shuffled).item() ==
        doctest::Approx(got).epsilon(1e-9));
}

TEST_CASE("scl_loss gradient w.r.t. latent matches finite differences") {
  Rng rng(53);
  const int D = 5, M = 16;
  MemoryBank bank(300, 0.5);
  for (int j = 0; j < M; ++j) {
    std::vector<double> v(D);
    for (auto& x : v) x = rng.normal();
    bank.push(unit_vec(v), 1 + (j % 4));
  }
  std::vector<double> lat(2 * D);
  for (auto& x : lat) x = rng.normal(0.0, 0.5);
  Tensor latent = Tensor::from_vector({2, D}, lat, true);
  auto loss = [&] { return scl_loss(latent, {2, 3}, bank); };
  CHECK(max_rel_grad_error(loss, {latent}) < 1e-4);
}

TEST_CASE("cqa_loss composition") {
  MemoryBank bank(300, 1.0);
  std::vector<double> z{1.0, 0.0, 0.0, 0.0};
  bank.push(z, 3);
  bank.push({0.0, 1.0, 0.0, 0.0}, 5);
  Tensor latent = Tensor::from_vector({1, 4}, z);
  Tensor prob = Tensor::from_vector({1, 10}, std::vector<double>(10, 0.1));
  const double expect =
      std::log(10.0) + 0.01 * (-std::log(std::exp(1.0) / (std::exp(1.0) + 1.0)));
  CHECK(cqa_loss(prob, latent, {3}, bank).item() ==
        doctest::Approx(expect).epsilon(1e-9));
  CHECK(cqa_loss(prob, latent, {3}, bank).item() ==
        doctest::Approx(2.302585 + 0.01 * 0.313262).epsilon(1e-5));

  MemoryBank empty(300, 1.0);
  CHECK(cqa_loss(prob, latent, {3}, empty).item() ==
        doctest::Approx(ce_loss(prob, {3}).item()).epsilon(1e-12));
}

TEST_CASE("bank_push detaches: gradients never reach stored latents") {
  Rng rng(54);
  std::vector<double> lat{0.6, 0.8};
  Tensor latent = Tensor::from_vector({1, 2}, lat, true);
  MemoryBank bank(300, 0.5);
  bank_push(bank, latent, {4});
  bank.push(unit_vec({1.0, -1.0}), 7);
  Tensor loss = scl_loss(latent, {4}, bank);
  backward(loss);
  // stored copy is plain data, unchanged by the backward pass
  CHECK(bank.entries().front().latent == lat);
}

TEST_CASE("quality_oracle bins, saturation and monotonicity") {
  auto pairs = make_pairs(1, 900);
  const auto& p = pairs[0];
  CHECK(quality_oracle(p.clean_image, p.clean_image, p.roi_mask) == 10);

  Grid offset = p.clean_image;
  for (auto& v : offset.v) v += 0.5;  // far beyond the top boundary
  CHECK(quality_oracle(offset, p.clean_image, p.roi_mask) == 1);

  CHECK_THROWS_AS(
      quality_oracle(p.clean_image, p.clean_image, Grid(64, 64, 0.0)),
      std::invalid_argument);

  // independent re-implementation of the threshold lookup on blends
  const auto th = OracleThresholds::defaults();
  int prev = 11;
  for (double alpha : {1.0, 0.9, 0.75, 0.6, 0.45, 0.3, 0.15, 0.0}) {
    Grid blend(64, 64);
    for (std::size_t i = 0; i < blend.size(); ++i)
      blend.v[i] = alpha * p.clean_image.v[i] + (1 - alpha) * p.artifact_image.v[i];
    const int got = quality_oracle(blend, p.clean_image, p.roi_mask);
    const double e = metrics::mae(blend, p.clean_image, p.roi_mask);
    int expect = 10;
    for (double b : th.boundaries)
      if (e >= b) --expect;
    CHECK(got == expect);
    CHECK(got <= prev);  // more corruption never raises the label
    prev = got;
  }
}

TEST_CASE("dqaug_mixup endpoints and arithmetic") {
  Rng rng(55);
  LabeledImage a{Grid(8, 8), 2}, b{Grid(8, 8), 8};
  for (auto& v : a.image.v) v = rng.uniform();
  for (auto& v : b.image.v) v = rng.uniform();

  LabeledImage e1 = dqaug_mixup(a, b, 1.0);
  CHECK(e1.label == 2);
  CHECK(e1.image.v == a.image.v);

  CHECK(dqaug_mixup(a, b, 0.5).label == 5);

  LabeledImage same = dqaug_mixup(a, a, 0.5);
  CHECK(same.image.v == a.image.v);  // bit-equal by convexity

  for (int t = 0; t < 20; ++t) {
    const double l = draw_mixup_lambda(rng);
    CHECK(l >= 0.0);
    CHECK(l <= 1.0);
  }
}

TEST_CASE("dqaug_moderate determinism and identity pass-through") {
  auto pairs = make_pairs(1, 910);
  const auto& p = pairs[0];
  const auto spec = ctphys::SpectrumModel::simulated_default();
  Rng rng(56);
  models::MARNet net({.depth = 3, .base_width = 4}, rng);

  LabeledImage m1 = dqaug_moderate(p, net, spec);
  LabeledImage m2 = dqaug_moderate(p, net, spec);
  CHECK(m1.label == m2.label);
  CHECK(m1.image.v == m2.image.v);

  // zeroing the residual head makes the network an identity map
  models::MARNet id_net({.depth = 3, .base_width = 4}, rng);
  for (auto& prm : id_net.params())
    if (prm.name.rfind("head", 0) == 0)
      std::fill(prm.tensor.values().begin(), prm.tensor.values().end(), 0.0);
  LabeledImage mid = dqaug_moderate(p, id_net, spec);
  CHECK(mid.label == quality_oracle(p.artifact_image, p.clean_image, p.roi_mask));
}

TEST_CASE("annotation jsonl round trip") {
  const std::string path = "annotations_test.jsonl";
  std::vector<AnnotationRecord> recs{
      {"p0:artifact", 3, Provenance::oracle_paired},
      {"p0:clean", 10, Provenance::oracle_rule},
      {"aug17", 6, Provenance::mixup_derived},
  };
  write_annotations_jsonl(path, recs);
  auto back = read_annotations_jsonl(path);
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back[i].id == recs[i].id);
    CHECK(back[i].quality == recs[i].quality);
    CHECK(back[i].provenance == recs[i].provenance);
  }
  std::remove(path.c_str());
}

TEST_CASE("train_cqa smoke: loss decreases; dqaug counter honors the config") {
  auto pairs = make_pairs(8, 920);
  CqaTrainConfig cfg;
  cfg.arch.input_size = 64;
  cfg.arch.dims = {4, 8, 8};
  cfg.arch.heads = {1, 2, 2};
  cfg.arch.blocks = 1;
  cfg.arch.head_hidden = 16;
  cfg.epochs = 2;
  cfg.batch = 4;
  cfg.lr = 2e-3;
  cfg.val_fraction = 0.25;

  int decreased = 0;
  for (std::uint64_t seed : {1, 2, 3}) {
    cfg.seed = seed;
    auto res = train_cqa(pairs, cfg);
    REQUIRE(res.log.size() == 2);
    const double l1 = res.log[0].ce + 0.01 * res.log[0].scl;
    const double l2 = res.log[1].ce + 0.01 * res.log[1].scl;
    if (l2 < l1) ++decreased;
    CHECK(res.dqaug_invocations > 0);
  }
  CHECK(decreased >= 2);  // flaky-guard across seeds

  cfg.seed = 1;
  cfg.use_dqaug = false;
  auto res = train_cqa(pairs, cfg);
  CHECK(res.dqaug_invocations == 0);

  CHECK_THROWS_AS(train_cqa({}, cfg), std::invalid_argument);
}
