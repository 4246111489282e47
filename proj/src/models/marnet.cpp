#include "risemar/models/marnet.hpp"

#include <stdexcept>

namespace risemar::models {

using namespace risemar::nn;

InputMode input_mode_from_string(const std::string& s) {
  if (s == "artifact") return InputMode::artifact;
  if (s == "li") return InputMode::li;
  if (s == "concat") return InputMode::concat;
  throw std::invalid_argument("unknown input mode: " + s);
}

std::string to_string(InputMode m) {
  switch (m) {
    case InputMode::artifact: return "artifact";
    case InputMode::li: return "li";
    case InputMode::concat: return "concat";
  }
  return "?";
}

SkipGate::SkipGate(int channels, Rng& rng)
    : theta_g(channels, channels, 1, 1, 0, rng),
      theta_s(channels, channels, 1, 1, 0, rng),
      psi(channels, 1, 1, 1, 0, rng),
      se1(channels, std::max(1, channels / 4), rng),
      se2(std::max(1, channels / 4), channels, rng) {}

Tensor SkipGate::forward(const Tensor& skip, const Tensor& gate) const {
  Tensor a = relu(add(theta_g.forward(gate), theta_s.forward(skip)));
  Tensor m = sigmoid(psi.forward(a));            // [N,1,H,W] in [0,1]
  Tensor s1 = mul_spatial(skip, m);
  Tensor z = global_avg_pool(s1);                // [N,C]
  Tensor w = sigmoid(se2.forward(relu(se1.forward(z))));
  return mul_channel(s1, w);
}

void SkipGate::collect(const std::string& prefix, ParamList& out) {
  theta_g.collect(prefix + ".theta_g", out);
  theta_s.collect(prefix + ".theta_s", out);
  psi.collect(prefix + ".psi", out);
  se1.collect(prefix + ".se1", out);
  se2.collect(prefix + ".se2", out);
}

Tensor MARNet::Block::run(const Tensor& x) const {
  return relu(c2.forward(relu(c1.forward(x))));
}

MARNet::MARNet(const MARNetConfig& cfg, Rng& rng) : cfg_(cfg) {
  if (cfg.depth < 2) throw std::invalid_argument("MARNet: depth must be >= 2");
  if (cfg.base_width < 1) throw std::invalid_argument("MARNet: bad base width");
  const int in_ch = cfg.input_mode == InputMode::concat ? 2 : 1;
  auto width = [&](int level) { return cfg.base_width << level; };

  for (int i = 0; i < cfg.depth; ++i) {
    const int ci = i == 0 ? in_ch : width(i - 1);
    enc_.push_back({Conv2d(ci, width(i), 3, 1, 1, rng),
                    Conv2d(width(i), width(i), 3, 1, 1, rng)});
  }
  for (int i = cfg.depth - 2; i >= 0; --i) {
    up_.emplace_back(width(i + 1), width(i), 3, 1, 1, rng);
    gates_.emplace_back(width(i), rng);
    dec_.push_back({Conv2d(2 * width(i), width(i), 3, 1, 1, rng),
                    Conv2d(width(i), width(i), 3, 1, 1, rng)});
  }
  head_ = Conv2d(cfg.base_width, 1, 1, 1, 0, rng);
}

Tensor MARNet::forward(const Tensor& x, const Tensor& li) const {
  const bool need_li = cfg_.input_mode != InputMode::artifact;
  if (need_li && !li.defined())
    throw std::invalid_argument("MARNet: this input mode requires the precorrected image");
  if (x.ndim() != 4 || x.dim(1) != 1)
    throw std::invalid_argument("MARNet: expect [N,1,H,W] input");
  const int div = 1 << (cfg_.depth - 1);
  if (x.dim(2) % div != 0 || x.dim(3) % div != 0)
    throw std::invalid_argument("MARNet: spatial dims must be divisible by 2^(depth-1)");

  Tensor in;
  switch (cfg_.input_mode) {
    case InputMode::artifact: in = x; break;
    case InputMode::li: in = li; break;
    case InputMode::concat: in = concat({x, li}, 1); break;
  }
  // Residual base: the best available estimate of the clean image.
  const Tensor& base = cfg_.input_mode == InputMode::artifact ? x : li;

  std::vector<Tensor> feats;
  Tensor h = in;
  for (std::size_t i = 0; i < enc_.size(); ++i) {
    if (i > 0) h = avg_pool2x2(h);
    h = enc_[i].run(h);
    feats.push_back(h);
  }

  Tensor d = feats.back();
  for (std::size_t k = 0; k < dec_.size(); ++k) {
    const std::size_t level = enc_.size() - 2 - k;  // matching encoder scale
    Tensor u = relu(up_[k].forward(upsample_nearest2x(d)));
    Tensor s = gates_[k].forward(feats[level], u);
    d = dec_[k].run(concat({u, s}, 1));
  }
  return add(base, head_.forward(d));
}

ParamList MARNet::params() {
  ParamList out;
  for (std::size_t i = 0; i < enc_.size(); ++i) {
    enc_[i].c1.collect("enc" + std::to_string(i) + ".c1", out);
    enc_[i].c2.collect("enc" + std::to_string(i) + ".c2", out);
  }
  for (std::size_t k = 0; k < dec_.size(); ++k) {
    up_[k].collect("up" + std::to_string(k), out);
    gates_[k].collect("gate" + std::to_string(k), out);
    dec_[k].c1.collect("dec" + std::to_string(k) + ".c1", out);
    dec_[k].c2.collect("dec" + std::to_string(k) + ".c2", out);
  }
  head_.collect("head", out);
  return out;
}

std::size_t MARNet::param_count() {
  std::size_t n = 0;
  for (auto& p : params()) n += p.tensor.numel();
  return n;
}

Tensor mar_forward(const MARNet& net, const Tensor& x, const Tensor& li) {
  return net.forward(x, li);
}

}  // namespace risemar::models
