#include "risemar/nn/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace risemar::nn {

namespace {

Tensor randn_tensor(const Shape& s, double sigma, Rng& rng) {
  std::vector<double> v(shape_numel(s));
  for (auto& x : v) x = rng.normal(0.0, sigma);
  return Tensor::from_vector(s, std::move(v), true);
}

}  // namespace

Linear::Linear(int in_features, int out_features, Rng& rng)
    : in(in_features), out(out_features) {
  const double sigma = std::sqrt(2.0 / static_cast<double>(in_features));
  weight = randn_tensor({out_features, in_features}, sigma, rng);
  bias = Tensor::zeros({out_features}, true);
}

Tensor Linear::forward(const Tensor& x) const {
  const Shape& s = x.shape();
  if (s.back() != in)
    throw std::invalid_argument("Linear: feature size mismatch");
  const int rows = static_cast<int>(x.numel() / static_cast<std::size_t>(in));
  Tensor flat = reshape(x, {rows, in});
  Tensor y = matmul(flat, transpose_last2(weight));
  y = add_row_bias(y, bias);
  Shape outs = s;
  outs.back() = out;
  return reshape(y, outs);
}

void Linear::collect(const std::string& prefix, ParamList& out_list) {
  out_list.push_back({prefix + ".weight", weight});
  out_list.push_back({prefix + ".bias", bias});
}

Conv2d::Conv2d(int in_ch, int out_ch, int kernel, int stride_, int pad_,
               Rng& rng)
    : stride(stride_), pad(pad_) {
  const double fan_in = static_cast<double>(in_ch * kernel * kernel);
  weight = randn_tensor({out_ch, in_ch, kernel, kernel},
                        std::sqrt(2.0 / fan_in), rng);
  bias = Tensor::zeros({out_ch}, true);
}

Tensor Conv2d::forward(const Tensor& x) const {
  return conv2d(x, weight, bias, stride, pad);
}

void Conv2d::collect(const std::string& prefix, ParamList& out_list) {
  out_list.push_back({prefix + ".weight", weight});
  out_list.push_back({prefix + ".bias", bias});
}

LayerNorm::LayerNorm(int features) {
  gamma = Tensor::full({features}, 1.0, true);
  beta = Tensor::zeros({features}, true);
}

Tensor LayerNorm::forward(const Tensor& x) const {
  return layer_norm_lastdim(x, gamma, beta);
}

void LayerNorm::collect(const std::string& prefix, ParamList& out_list) {
  out_list.push_back({prefix + ".gamma", gamma});
  out_list.push_back({prefix + ".beta", beta});
}

WindowAttention::WindowAttention(int channels_, int heads_, int window_,
                                 bool use_positional_, Rng& rng)
    : channels(channels_), heads(heads_), window(window_),
      use_positional(use_positional_) {
  if (channels % heads != 0)
    throw std::invalid_argument("WindowAttention: channels % heads != 0");
  qkv = Linear(channels, 3 * channels, rng);
  proj = Linear(channels, channels, rng);
  const int t = window * window;
  pos_bias = randn_tensor({t, t}, 0.02, rng);
}

Tensor WindowAttention::forward(const Tensor& x) const {
  if (x.ndim() != 4) throw std::invalid_argument("WindowAttention: expect NCHW");
  const int N = x.dim(0), C = x.dim(1), Hg = x.dim(2), Wg = x.dim(3);
  if (C != channels) throw std::invalid_argument("WindowAttention: channel mismatch");
  const int w = std::min({window, Hg, Wg});
  if (Hg % w != 0 || Wg % w != 0)
    throw std::invalid_argument("WindowAttention: grid not divisible by window");
  const int nh = Hg / w, nw = Wg / w, T = w * w;
  const int B = N * nh * nw;

  // window partition: [N,C,Hg,Wg] -> [B, T, C]
  Tensor t = permute(x, {0, 2, 3, 1});                 // [N,Hg,Wg,C]
  t = reshape(t, {N, nh, w, nw, w, C});
  t = permute(t, {0, 1, 3, 2, 4, 5});                  // [N,nh,nw,w,w,C]
  t = reshape(t, {B, T, C});

  Tensor qkv_out = qkv.forward(t);                     // [B,T,3C]
  Tensor q = slice_lastdim(qkv_out, 0, C);
  Tensor k = slice_lastdim(qkv_out, C, C);
  Tensor v = slice_lastdim(qkv_out, 2 * C, C);
  const int dh = C / heads;
  auto split_heads = [&](const Tensor& a) {
    Tensor h = reshape(a, {B, T, heads, dh});
    h = permute(h, {0, 2, 1, 3});
    return reshape(h, {B * heads, T, dh});
  };
  q = split_heads(q);
  k = split_heads(k);
  v = split_heads(v);

  Tensor logits = scale(bmm(q, transpose_last2(k)), 1.0 / std::sqrt(dh));
  if (use_positional) {
    Tensor bias_w = pos_bias;
    if (T != pos_bias.dim(0)) {
      // grid smaller than the configured window: use the top-left sub-table
      Tensor rows = slice_lastdim(transpose_last2(pos_bias), 0, T);
      bias_w = slice_lastdim(transpose_last2(rows), 0, T);
    }
    logits = add_broadcast_mat(logits, bias_w);
  }
  Tensor attn = softmax_lastdim(logits);
  Tensor o = bmm(attn, v);                             // [B*h, T, dh]
  o = reshape(o, {B, heads, T, dh});
  o = permute(o, {0, 2, 1, 3});
  o = reshape(o, {B, T, C});
  o = proj.forward(o);

  // reverse window partition
  o = reshape(o, {N, nh, nw, w, w, C});
  o = permute(o, {0, 1, 3, 2, 4, 5});
  o = reshape(o, {N, Hg, Wg, C});
  return permute(o, {0, 3, 1, 2});
}

void WindowAttention::collect(const std::string& prefix, ParamList& out_list) {
  qkv.collect(prefix + ".qkv", out_list);
  proj.collect(prefix + ".proj", out_list);
  if (use_positional) out_list.push_back({prefix + ".pos_bias", pos_bias});
}

}  // namespace risemar::nn
