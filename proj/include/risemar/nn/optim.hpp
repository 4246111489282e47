#pragma once

#include <vector>

#include "risemar/nn/layers.hpp"

namespace risemar::nn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.5;  // Adam betas follow the training setup of the framework
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam(ParamList params, AdamConfig cfg);

  void zero_grad();
  void step();
  void set_lr(double lr) { cfg_.lr = lr; }
  double lr() const { return cfg_.lr; }
  long step_count() const { return t_; }

  // moment state access for checkpointing
  std::vector<std::vector<double>>& m() { return m_; }
  std::vector<std::vector<double>>& v() { return v_; }
  void set_step_count(long t) { t_ = t; }
  const ParamList& params() const { return params_; }

 private:
  ParamList params_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  long t_ = 0;
};

}  // namespace risemar::nn
