#pragma once

#include <string>
#include <vector>

#include "risemar/core/random.hpp"
#include "risemar/nn/tensor.hpp"

namespace risemar::nn {

struct Param {
  std::string name;
  Tensor tensor;
};

using ParamList = std::vector<Param>;

// Layers are plain structs holding parameter tensors; each exposes
// collect(prefix, out) so networks can enumerate a flat named parameter list
// for the optimizer, EMA updates and checkpointing.

struct Linear {
  Tensor weight;  // [out, in]
  Tensor bias;    // [out]
  int in = 0, out = 0;

  Linear() = default;
  Linear(int in_features, int out_features, Rng& rng);
  // x: [..., in] -> [..., out]
  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix, ParamList& out_list);
};

struct Conv2d {
  Tensor weight;  // [out, in, k, k]
  Tensor bias;    // [out]
  int stride = 1, pad = 0;

  Conv2d() = default;
  Conv2d(int in_ch, int out_ch, int kernel, int stride, int pad, Rng& rng);
  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix, ParamList& out_list);
};

struct LayerNorm {
  Tensor gamma;
  Tensor beta;

  LayerNorm() = default;
  explicit LayerNorm(int features);
  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix, ParamList& out_list);
};

// Windowed multi-head self-attention over a [N, C, Hg, Wg] token grid.
// An optional learned per-window logit bias acts as the positional term;
// with it disabled the layer is permutation-equivariant within a window.
struct WindowAttention {
  int channels = 0, heads = 1, window = 8;
  bool use_positional = true;
  Linear qkv;        // C -> 3C
  Linear proj;       // C -> C
  Tensor pos_bias;   // [w*w, w*w]

  WindowAttention() = default;
  WindowAttention(int channels, int heads, int window, bool use_positional,
                  Rng& rng);
  Tensor forward(const Tensor& x) const;  // [N,C,Hg,Wg] -> same
  void collect(const std::string& prefix, ParamList& out_list);
};

}  // namespace risemar::nn
