#pragma once

#include <string>
#include <vector>

#include "risemar/core/random.hpp"
#include "risemar/nn/layers.hpp"
#include "risemar/nn/tensor.hpp"

namespace risemar::models {

using nn::ParamList;
using nn::Tensor;

// What the reduction network sees at its input.
enum class InputMode { artifact, li, concat };

InputMode input_mode_from_string(const std::string& s);
std::string to_string(InputMode m);

struct MARNetConfig {
  int depth = 4;       // number of scales (encoder levels incl. bottleneck)
  int base_width = 32; // channels at the finest scale; doubled per level
  InputMode input_mode = InputMode::artifact;
};

// Gated skip connection: a spatial gate driven by the decoder feature picks
// where to pass the encoder feature through, then a squeeze/excite-style
// channel gate reweights it. Both gates end in a sigmoid, so their outputs
// stay inside [0,1].
struct SkipGate {
  nn::Conv2d theta_g, theta_s, psi;  // 1x1 convs for the spatial gate
  nn::Linear se1, se2;               // channel gate bottleneck

  SkipGate() = default;
  SkipGate(int channels, Rng& rng);
  // skip and gate must share [N,C,H,W]
  Tensor forward(const Tensor& skip, const Tensor& gate) const;
  void collect(const std::string& prefix, ParamList& out);
};

// Encoder/decoder with gated skips. Output is predicted as a residual on top
// of the reference channel (the artifact image, or the interpolation-corrected
// image when that is the only input).
class MARNet {
 public:
  MARNet() = default;
  MARNet(const MARNetConfig& cfg, Rng& rng);

  // x: artifact images [N,1,H,W]; li: precorrected images, required for
  // input modes li and concat. H and W must be divisible by 2^(depth-1).
  Tensor forward(const Tensor& x, const Tensor& li = Tensor()) const;

  const MARNetConfig& config() const { return cfg_; }
  ParamList params();
  std::size_t param_count();

 private:
  struct Block {
    nn::Conv2d c1, c2;
    Tensor run(const Tensor& x) const;
  };

  MARNetConfig cfg_;
  std::vector<Block> enc_;
  std::vector<nn::Conv2d> up_;     // after 2x upsampling, halve channels
  std::vector<SkipGate> gates_;
  std::vector<Block> dec_;
  nn::Conv2d head_;                // 1x1 to one channel
};

Tensor mar_forward(const MARNet& net, const Tensor& x,
                   const Tensor& li = Tensor());

}  // namespace risemar::models
