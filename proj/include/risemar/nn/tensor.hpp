#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace risemar::nn {

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) n *= static_cast<std::size_t>(d);
  return n;
}

std::string shape_str(const Shape& s);

// One node of the autodiff tape. Values and gradients are dense row-major
// double arrays; the backward closure pulls this node's gradient and
// accumulates into the parents'.
struct Node {
  Shape shape;
  std::vector<double> v;
  std::vector<double> g;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void()> backward;

  std::size_t size() const { return v.size(); }
  void ensure_grad() {
    if (g.size() != v.size()) g.assign(v.size(), 0.0);
  }
};

// Global switch: when disabled, ops produce leaf nodes (no tape growth).
// Used for teacher/CQA forward passes that must not receive gradients.
bool grad_enabled();
void set_grad_enabled(bool on);

struct NoGradGuard {
  NoGradGuard() : prev_(grad_enabled()) { set_grad_enabled(false); }
  ~NoGradGuard() { set_grad_enabled(prev_); }
 private:
  bool prev_;
};

// Value-semantic handle to a shared tape node.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> n) : n_(std::move(n)) {}

  static Tensor zeros(const Shape& s, bool requires_grad = false);
  static Tensor full(const Shape& s, double value, bool requires_grad = false);
  static Tensor from_vector(const Shape& s, std::vector<double> data,
                            bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return n_ != nullptr; }
  const Shape& shape() const { return node().shape; }
  std::size_t numel() const { return node().size(); }
  int dim(int i) const { return node().shape.at(static_cast<std::size_t>(i)); }
  int ndim() const { return static_cast<int>(node().shape.size()); }

  std::vector<double>& values() { return node().v; }
  const std::vector<double>& values() const { return node().v; }
  std::vector<double>& grad() { return node().g; }
  const std::vector<double>& grad() const { return node().g; }
  bool requires_grad() const { return node().requires_grad; }
  void set_requires_grad(bool rg) { node().requires_grad = rg; }

  double item() const;
  void zero_grad() {
    if (!node().g.empty()) std::fill(node().g.begin(), node().g.end(), 0.0);
  }

  // Leaf copy of the current values, cut off from the tape.
  Tensor detach() const;

  Node& node() const {
    if (!n_) throw std::logic_error("use of undefined Tensor");
    return *n_;
  }
  const std::shared_ptr<Node>& ptr() const { return n_; }

 private:
  std::shared_ptr<Node> n_;
};

// Reverse-mode sweep from `loss` (must be scalar). Seeds d(loss)/d(loss)=1.
void backward(const Tensor& loss);

// ---- elementwise / arithmetic ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor neg(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor leaky_relu(const Tensor& a, double slope = 0.01);
Tensor sigmoid(const Tensor& a);
Tensor tanh_(const Tensor& a);
Tensor exp_(const Tensor& a);
Tensor log_(const Tensor& a, double eps = 0.0);
Tensor abs_(const Tensor& a);
Tensor square(const Tensor& a);

// ---- reductions ----
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// Weighted mean: sum(a*w)/sum(w) with w a constant tensor (no grad into w).
Tensor masked_mean(const Tensor& a, const Tensor& mask);

// ---- shape ----
Tensor reshape(const Tensor& a, const Shape& s);
Tensor permute(const Tensor& a, const std::vector<int>& axes);
Tensor concat(const std::vector<Tensor>& xs, int axis);
Tensor slice_lastdim(const Tensor& a, int start, int len);

// ---- linear algebra ----
// a: [m,k], b: [k,n] -> [m,n]
Tensor matmul(const Tensor& a, const Tensor& b);
// a: [B,m,k], b: [B,k,n] -> [B,m,n]
Tensor bmm(const Tensor& a, const Tensor& b);
Tensor transpose_last2(const Tensor& a);
// x: [..., F] + b: [F]
Tensor add_row_bias(const Tensor& x, const Tensor& b);
// x: [N,C,H,W] + b: [C]
Tensor add_channel_bias(const Tensor& x, const Tensor& b);
// x: [B,T,T] + b: [T,T] broadcast over B
Tensor add_broadcast_mat(const Tensor& x, const Tensor& b);

// ---- normalization / activations over last dim ----
Tensor softmax_lastdim(const Tensor& a);
Tensor layer_norm_lastdim(const Tensor& a, const Tensor& gamma,
                          const Tensor& beta, double eps = 1e-5);
Tensor l2_normalize_lastdim(const Tensor& a, double eps = 1e-12);

// -log(p[index]) per row; p: [B,K], rows of probabilities. Returns [B].
Tensor nll_pick(const Tensor& p, const std::vector<int>& index,
                double eps = 1e-12);

// x: [N,C,H,W] -> [N,C] spatial average
Tensor global_avg_pool(const Tensor& x);
// x: [N,C,H,W] * s: [N,C] broadcast over H,W
Tensor mul_channel(const Tensor& x, const Tensor& s);
// x: [N,C,H,W] * m: [N,1,H,W] broadcast over C
Tensor mul_spatial(const Tensor& x, const Tensor& m);

// ---- conv / pooling / resampling (NCHW) ----
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
              int pad);
Tensor avg_pool2x2(const Tensor& x);
Tensor upsample_nearest2x(const Tensor& x);

// Per-channel complex transfer function applied in the 2-D Fourier domain.
// x: [N,C,H,W] (H, W powers of two); hr, hi: [C,H,W].
Tensor freq_filter(const Tensor& x, const Tensor& hr, const Tensor& hi);

}  // namespace risemar::nn
