#include "risemar/models/cqanet.hpp"

#include <stdexcept>

namespace risemar::models {

using namespace risemar::nn;

namespace {

bool is_pow2(int n) { return n > 0 && (n & (n - 1)) == 0; }

// Layer norm across channels of an NCHW map.
Tensor ln_channels(const Tensor& x, const LayerNorm& ln) {
  Tensor t = permute(x, {0, 2, 3, 1});
  t = ln.forward(t);
  return permute(t, {0, 3, 1, 2});
}

}  // namespace

SFBlock::SFBlock(int channels, int heads, int window, int grid,
                 bool use_positional, bool use_freq_, Rng& rng)
    : ln1(channels), ln2(channels),
      attn(channels, heads, window, use_positional, rng),
      spconv(channels, channels, 3, 1, 1, rng),
      use_freq(use_freq_),
      mlp1(channels, 2 * channels, 1, 1, 0, rng),
      mlp2(2 * channels, channels, 1, 1, 0, rng) {
  if (use_freq) {
    // Below 4x4 every DFT bin is real, so the imaginary filter response is
    // structurally dead; refuse rather than carry untrainable parameters.
    if (!is_pow2(grid) || grid < 4)
      throw std::invalid_argument(
          "SFBlock: frequency stage needs a power-of-two grid of at least 4");
    fr = Tensor::full({channels, grid, grid}, 1.0, true);
    fi = Tensor::zeros({channels, grid, grid}, true);
  }
}

Tensor SFBlock::forward(const Tensor& x) const {
  Tensor xn = ln_channels(x, ln1);
  Tensor branch = spconv.forward(xn);
  if (use_freq) branch = freq_filter(branch, fr, fi);
  Tensor y = add(add(x, attn.forward(xn)), branch);
  Tensor yn = ln_channels(y, ln2);
  return add(y, mlp2.forward(relu(mlp1.forward(yn))));
}

void SFBlock::collect(const std::string& prefix, ParamList& out) {
  ln1.collect(prefix + ".ln1", out);
  ln2.collect(prefix + ".ln2", out);
  attn.collect(prefix + ".attn", out);
  spconv.collect(prefix + ".spconv", out);
  if (use_freq) {
    out.push_back({prefix + ".fr", fr});
    out.push_back({prefix + ".fi", fi});
  }
  mlp1.collect(prefix + ".mlp1", out);
  mlp2.collect(prefix + ".mlp2", out);
}

CQANet::CQANet(const CQAConfig& cfg, Rng& rng) : cfg_(cfg) {
  if (cfg.input_size % 16 != 0 || !is_pow2(cfg.input_size / 16))
    throw std::invalid_argument(
        "CQANet: input size must be 16 * a power of two");
  for (int s = 0; s < 3; ++s)
    if (cfg.dims[s] % cfg.heads[s] != 0)
      throw std::invalid_argument("CQANet: dims must divide by heads");

  embed_[0] = Conv2d(1, cfg.dims[0], 7, 4, 3, rng);
  embed_[1] = Conv2d(cfg.dims[0], cfg.dims[1], 3, 2, 1, rng);
  embed_[2] = Conv2d(cfg.dims[1], cfg.dims[2], 3, 2, 1, rng);

  int grid = cfg.input_size / 4;
  for (int s = 0; s < 3; ++s) {
    for (int b = 0; b < cfg.blocks; ++b)
      blocks_[s].emplace_back(cfg.dims[s], cfg.heads[s], cfg.window, grid,
                              cfg.use_positional, cfg.use_freq, rng);
    grid /= 2;
  }

  const int latent_dim = cfg.dims[0] + cfg.dims[1] + cfg.dims[2];
  head1_ = Linear(latent_dim, cfg.head_hidden, rng);
  head2_ = Linear(cfg.head_hidden, cfg.num_classes, rng);
}

CQAOut CQANet::forward(const Tensor& x) const {
  if (x.ndim() != 4 || x.dim(1) != 1 || x.dim(2) != x.dim(3))
    throw std::invalid_argument("CQANet: expect square [N,1,S,S] input");
  if (x.dim(2) != cfg_.input_size)
    throw std::invalid_argument(
        "CQANet: input side must equal the configured size (the frequency "
        "filters are resolution-bound)");

  Tensor h = x;
  std::vector<Tensor> pooled;
  for (int s = 0; s < 3; ++s) {
    h = relu(embed_[s].forward(h));
    for (const auto& blk : blocks_[s]) h = blk.forward(h);
    pooled.push_back(global_avg_pool(h));
  }
  Tensor latent = l2_normalize_lastdim(concat(pooled, 1));
  Tensor prob = softmax_lastdim(head2_.forward(relu(head1_.forward(latent))));
  return {prob, latent};
}

ParamList CQANet::params() {
  ParamList out;
  for (int s = 0; s < 3; ++s) {
    embed_[s].collect("embed" + std::to_string(s), out);
    for (std::size_t b = 0; b < blocks_[s].size(); ++b)
      blocks_[s][b].collect(
          "s" + std::to_string(s) + "b" + std::to_string(b), out);
  }
  head1_.collect("head1", out);
  head2_.collect("head2", out);
  return out;
}

std::size_t CQANet::param_count() {
  std::size_t n = 0;
  for (auto& p : params()) n += p.tensor.numel();
  return n;
}

CQAOut cqa_forward(const CQANet& net, const Tensor& x) {
  return net.forward(x);
}

}  // namespace risemar::models
