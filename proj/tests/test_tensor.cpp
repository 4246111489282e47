#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "risemar/core/random.hpp"
#include "risemar/nn/fft.hpp"
#include "risemar/nn/layers.hpp"
#include "risemar/nn/optim.hpp"
#include "risemar/nn/tensor.hpp"

using namespace risemar;
using namespace risemar::nn;

namespace {

Tensor randn(const Shape& s, Rng& rng, double sigma = 1.0, bool rg = true) {
  std::vector<double> v(shape_numel(s));
  for (auto& x : v) x = rng.normal(0.0, sigma);
  return Tensor::from_vector(s, std::move(v), rg);
}

}  // namespace

TEST_CASE("elementwise chain gradients match finite differences") {
  Rng rng(1);
  Tensor a = randn({3, 4}, rng), b = randn({3, 4}, rng);
  auto loss = [&] {
    Tensor t = mul(sigmoid(a), tanh_(b));
    t = add(t, square(sub(a, b)));
    t = add(relu(t), leaky_relu(neg(t), 0.1));
    return mean(mul(t, exp_(scale(b, 0.1))));
  };
  CHECK(max_rel_grad_error(loss, {a, b}) < 1e-6);
}

TEST_CASE("abs and log gradients") {
  Rng rng(2);
  Tensor a = randn({10}, rng);
  // keep away from the |x| kink and log domain edge
  for (auto& x : a.values()) x = 0.5 + std::abs(x);
  auto loss = [&] { return sum(mul(abs_(a), log_(a))); };
  CHECK(max_rel_grad_error(loss, {a}) < 1e-6);
}

TEST_CASE("matmul and bmm gradients") {
  Rng rng(3);
  Tensor a = randn({4, 5}, rng), b = randn({5, 3}, rng);
  auto loss = [&] { return mean(square(matmul(a, b))); };
  CHECK(max_rel_grad_error(loss, {a, b}) < 1e-6);

  Tensor p = randn({2, 3, 4}, rng), q = randn({2, 4, 2}, rng);
  auto loss2 = [&] { return mean(square(bmm(p, transpose_last2(transpose_last2(q))))); };
  CHECK(max_rel_grad_error(loss2, {p, q}) < 1e-6);
}

TEST_CASE("shape ops route gradients correctly") {
  Rng rng(4);
  Tensor a = randn({2, 3, 4}, rng);
  Tensor b = randn({2, 5, 4}, rng);
  auto loss = [&] {
    Tensor cat = concat({a, b}, 1);              // [2,8,4]
    Tensor perm = permute(cat, {1, 0, 2});       // [8,2,4]
    Tensor s = slice_lastdim(perm, 1, 2);        // [8,2,2]
    return mean(square(reshape(s, {32})));
  };
  CHECK(max_rel_grad_error(loss, {a, b}) < 1e-6);
}

TEST_CASE("softmax, layer norm, l2 norm, nll gradients") {
  Rng rng(5);
  Tensor x = randn({3, 6}, rng);
  Tensor gm = randn({6}, rng, 0.3);
  for (auto& g : gm.values()) g += 1.0;
  Tensor bt = randn({6}, rng, 0.3);
  std::vector<int> labels{0, 3, 5};
  auto loss = [&] {
    Tensor h = layer_norm_lastdim(x, gm, bt);
    Tensor z = l2_normalize_lastdim(h);
    Tensor p = softmax_lastdim(z);
    return mean(nll_pick(p, labels));
  };
  CHECK(max_rel_grad_error(loss, {x, gm, bt}) < 1e-5);
}

TEST_CASE("softmax rows sum to one") {
  Rng rng(6);
  Tensor x = randn({7, 10}, rng, 3.0, false);
  Tensor p = softmax_lastdim(x);
  for (int r = 0; r < 7; ++r) {
    double s = 0.0;
    for (int k = 0; k < 10; ++k) s += p.values()[static_cast<std::size_t>(r) * 10 + k];
    CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("conv2d matches finite differences") {
  Rng rng(7);
  Tensor x = randn({2, 3, 6, 6}, rng);
  Tensor w = randn({4, 3, 3, 3}, rng, 0.4);
  Tensor b = randn({4}, rng, 0.2);
  auto loss = [&] { return mean(square(conv2d(x, w, b, 1, 1))); };
  CHECK(max_rel_grad_error(loss, {x, w, b}) < 1e-5);

  // strided
  auto loss2 = [&] { return mean(abs_(conv2d(x, w, b, 2, 1))); };
  CHECK(max_rel_grad_error(loss2, {w, b}) < 1e-5);
}

TEST_CASE("pooling and upsampling gradients") {
  Rng rng(8);
  Tensor x = randn({1, 2, 4, 4}, rng);
  auto loss = [&] { return mean(square(upsample_nearest2x(avg_pool2x2(x)))); };
  CHECK(max_rel_grad_error(loss, {x}) < 1e-6);
}

TEST_CASE("bias broadcasts") {
  Rng rng(9);
  Tensor x = randn({2, 3, 4, 4}, rng);
  Tensor cb = randn({3}, rng);
  Tensor t = randn({2, 5, 5}, rng);
  Tensor mb = randn({5, 5}, rng);
  auto loss = [&] {
    Tensor u = add_channel_bias(x, cb);
    Tensor v = add_broadcast_mat(t, mb);
    return add(mean(square(u)), mean(square(v)));
  };
  CHECK(max_rel_grad_error(loss, {x, cb, t, mb}) < 1e-6);
}

TEST_CASE("fft round trip and parseval") {
  Rng rng(10);
  std::vector<cplx> a(16);
  for (auto& z : a) z = cplx(rng.normal(), rng.normal());
  auto orig = a;
  fft_inplace(a, false);
  fft_inplace(a, true);
  for (std::size_t i = 0; i < a.size(); ++i)
    CHECK(std::abs(a[i] - orig[i]) < 1e-12);
}

TEST_CASE("freq_filter identity transfer function is the identity map") {
  Rng rng(11);
  Tensor x = randn({1, 2, 8, 8}, rng, 1.0, false);
  Tensor hr = Tensor::full({2, 8, 8}, 1.0);
  Tensor hi = Tensor::zeros({2, 8, 8});
  Tensor y = freq_filter(x, hr, hi);
  for (std::size_t i = 0; i < x.numel(); ++i)
    CHECK(y.values()[i] == doctest::Approx(x.values()[i]).epsilon(1e-10));
}

TEST_CASE("freq_filter gradients match finite differences") {
  Rng rng(12);
  Tensor x = randn({1, 1, 4, 4}, rng);
  Tensor hr = randn({1, 4, 4}, rng, 0.5);
  Tensor hi = randn({1, 4, 4}, rng, 0.5);
  auto loss = [&] { return mean(square(freq_filter(x, hr, hi))); };
  CHECK(max_rel_grad_error(loss, {x, hr, hi}) < 1e-6);
}

TEST_CASE("window attention gradcheck and shape") {
  Rng rng(13);
  WindowAttention wa(4, 2, 2, true, rng);
  Tensor x = randn({1, 4, 4, 4}, rng, 0.5);
  Tensor y = wa.forward(x);
  CHECK(y.shape() == Shape{1, 4, 4, 4});
  ParamList ps;
  wa.collect("wa", ps);
  std::vector<Tensor> leaves{x};
  for (auto& p : ps) leaves.push_back(p.tensor);
  auto loss = [&] { return mean(square(wa.forward(x))); };
  CHECK(max_rel_grad_error(loss, leaves, 1e-4) < 1e-4);
}

TEST_CASE("window attention is permutation-equivariant without positional terms") {
  Rng rng(14);
  WindowAttention wa(4, 2, 2, false, rng);
  // single 2x2 window; permute the 4 tokens and compare outputs
  Tensor x = randn({1, 4, 2, 2}, rng, 1.0, false);
  Tensor y = wa.forward(x);
  // swap tokens (0,0) <-> (1,1)
  Tensor xp = x.detach();
  for (int c = 0; c < 4; ++c) {
    std::swap(xp.values()[static_cast<std::size_t>(c) * 4 + 0],
              xp.values()[static_cast<std::size_t>(c) * 4 + 3]);
  }
  Tensor yp = wa.forward(xp);
  for (int c = 0; c < 4; ++c) {
    CHECK(yp.values()[static_cast<std::size_t>(c) * 4 + 0] ==
          doctest::Approx(y.values()[static_cast<std::size_t>(c) * 4 + 3]).epsilon(1e-10));
    CHECK(yp.values()[static_cast<std::size_t>(c) * 4 + 3] ==
          doctest::Approx(y.values()[static_cast<std::size_t>(c) * 4 + 0]).epsilon(1e-10));
  }
}

TEST_CASE("adam drives a quadratic toward its minimum") {
  Rng rng(15);
  Tensor w = randn({8}, rng);
  Adam opt({{"w", w}}, {.lr = 0.05});
  double first = 0.0, last = 0.0;
  for (int it = 0; it < 200; ++it) {
    opt.zero_grad();
    Tensor loss = mean(square(add_scalar(w, -3.0)));
    backward(loss);
    if (it == 0) first = loss.item();
    last = loss.item();
    opt.step();
  }
  CHECK(last < 1e-3);
  CHECK(first > last);
}

TEST_CASE("no-grad mode keeps the tape empty") {
  Rng rng(16);
  Tensor a = randn({4}, rng);
  NoGradGuard guard;
  Tensor y = mean(square(a));
  CHECK_FALSE(y.requires_grad());
}
