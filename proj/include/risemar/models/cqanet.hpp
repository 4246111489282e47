#pragma once

#include <array>
#include <string>
#include <vector>

#include "risemar/core/random.hpp"
#include "risemar/nn/layers.hpp"
#include "risemar/nn/tensor.hpp"

namespace risemar::models {

using nn::ParamList;
using nn::Tensor;

struct CQAConfig {
  int input_size = 128;              // the learned frequency filters bind the
                                     // network to one training resolution
  std::array<int, 3> dims{16, 32, 48};
  std::array<int, 3> heads{2, 4, 4};
  int blocks = 2;                    // transformer blocks per scale
  int window = 8;                    // W-MHSA window
  bool use_positional = true;
  bool use_freq = true;              // drop the frequency stage entirely when false
  int head_hidden = 256;
  int num_classes = 10;
};

// One token-mixing block: on the channel-normalized input, a windowed
// attention branch plus a 3x3 convolution branch whose output then passes
// through a learned per-channel transfer function in the Fourier domain.
// With the transfer function at identity the block collapses to its purely
// spatial form; with it zeroed the convolution branch is silenced.
struct SFBlock {
  nn::LayerNorm ln1, ln2;
  nn::WindowAttention attn;
  nn::Conv2d spconv;
  Tensor fr, fi;   // transfer function, [C, H, W]; identity-initialized
  bool use_freq = true;
  nn::Conv2d mlp1, mlp2;  // 1x1 channel MLP

  SFBlock() = default;
  SFBlock(int channels, int heads, int window, int grid, bool use_positional,
          bool use_freq, Rng& rng);
  Tensor forward(const Tensor& x) const;  // [N,C,Hg,Wg] -> same
  void collect(const std::string& prefix, ParamList& out);
};

struct CQAOut {
  Tensor prob;    // [N,10], rows sum to 1
  Tensor latent;  // [N,D], unit rows
};

// Three-scale encoder with overlapping patch embeddings (strides 4, 2, 2),
// followed by per-scale global pooling, concatenation, unit-normalization
// and a small classification head over 10 quality classes.
class CQANet {
 public:
  CQANet() = default;
  CQANet(const CQAConfig& cfg, Rng& rng);

  CQAOut forward(const Tensor& x) const;  // x: [N,1,S,S], S = cfg.input_size

  const CQAConfig& config() const { return cfg_; }
  ParamList params();
  std::size_t param_count();
  std::vector<SFBlock>& blocks(int scale) { return blocks_[scale]; }

 private:
  CQAConfig cfg_;
  std::array<nn::Conv2d, 3> embed_;
  std::array<std::vector<SFBlock>, 3> blocks_;
  nn::Linear head1_, head2_;
};

CQAOut cqa_forward(const CQANet& net, const Tensor& x);

}  // namespace risemar::models
