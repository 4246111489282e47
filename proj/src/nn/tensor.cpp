#include "risemar/nn/tensor.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "risemar/nn/fft.hpp"

namespace risemar::nn {

using RowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }
void set_grad_enabled(bool on) { g_grad_enabled = on; }

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

Tensor Tensor::zeros(const Shape& s, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->shape = s;
  n->v.assign(shape_numel(s), 0.0);
  n->requires_grad = requires_grad;
  return Tensor(n);
}

Tensor Tensor::full(const Shape& s, double value, bool requires_grad) {
  Tensor t = zeros(s, requires_grad);
  std::fill(t.values().begin(), t.values().end(), value);
  return t;
}

Tensor Tensor::from_vector(const Shape& s, std::vector<double> data,
                           bool requires_grad) {
  if (data.size() != shape_numel(s))
    throw std::invalid_argument("from_vector: size mismatch for " + shape_str(s));
  auto n = std::make_shared<Node>();
  n->shape = s;
  n->v = std::move(data);
  n->requires_grad = requires_grad;
  return Tensor(n);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_vector({1}, {value}, requires_grad);
}

double Tensor::item() const {
  if (numel() != 1) throw std::logic_error("item() on non-scalar tensor");
  return values()[0];
}

Tensor Tensor::detach() const {
  auto n = std::make_shared<Node>();
  n->shape = shape();
  n->v = values();
  n->requires_grad = false;
  return Tensor(n);
}

namespace {

// Creates the output node of an op, wiring parents only when the result is
// part of the tape.
Tensor make_op(Shape shape, std::vector<std::shared_ptr<Node>> parents) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->v.resize(shape_numel(n->shape));
  bool rg = false;
  if (g_grad_enabled)
    for (auto& p : parents)
      if (p->requires_grad) rg = true;
  n->requires_grad = rg;
  if (rg) n->parents = std::move(parents);
  return Tensor(n);
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
}

}  // namespace

void backward(const Tensor& loss) {
  if (loss.numel() != 1) throw std::logic_error("backward: loss must be scalar");
  // iterative post-order DFS for topological order
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.push_back({&loss.node(), 0});
  visited.insert(&loss.node());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node* p = node->parents[idx++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (Node* n : order) n->ensure_grad();
  loss.node().g[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backward) (*it)->backward();
}

// ---------------- elementwise ----------------

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  Tensor out = make_op(a.shape(), {a.ptr(), b.ptr()});
  const auto &av = a.values(), &bv = b.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
  if (out.requires_grad()) {
    Node *self = &out.node(), *pa = &a.node(), *pb = &b.node();
    out.node().backward = [self, pa, pb] {
      if (pa->requires_grad) {
        pa->ensure_grad();
        for (std::size_t i = 0; i < self->g.size(); ++i) pa->g[i] += self->g[i];
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        for (std::size_t i = 0; i < self->g.size(); ++i) pb->g[i] += self->g[i];
      }
    };
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  Tensor out = make_op(a.shape(), {a.ptr(), b.ptr()});
  const auto &av = a.values(), &bv = b.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] - bv[i];
  if (out.requires_grad()) {
    Node *self = &out.node(), *pa = &a.node(), *pb = &b.node();
    out.node().backward = [self, pa, pb] {
      if (pa->requires_grad) {
        pa->ensure_grad();
        for (std::size_t i = 0; i < self->g.size(); ++i) pa->g[i] += self->g[i];
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        for (std::size_t i = 0; i < self->g.size(); ++i) pb->g[i] -= self->g[i];
      }
    };
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  Tensor out = make_op(a.shape(), {a.ptr(), b.ptr()});
  const auto &av = a.values(), &bv = b.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
  if (out.requires_grad()) {
    Node *self = &out.node(), *pa = &a.node(), *pb = &b.node();
    out.node().backward = [self, pa, pb] {
      if (pa->requires_grad) {
        pa->ensure_grad();
        for (std::size_t i = 0; i < self->g.size(); ++i)
          pa->g[i] += self->g[i] * pb->v[i];
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        for (std::size_t i = 0; i < self->g.size(); ++i)
          pb->g[i] += self->g[i] * pa->v[i];
      }
    };
  }
  return out;
}

Tensor scale(const Tensor& a, double s) {
  Tensor out = make_op(a.shape(), {a.ptr()});
  const auto& av = a.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * s;
  if (out.requires_grad()) {
    Node *self = &out.node(), *pa = &a.node();
    out.node().backward = [self, pa, s] {
      pa->ensure_grad();
      for (std::size_t i = 0; i < self->g.size(); ++i) pa->g[i] += self->g[i] * s;
    };
  }
  return out;
}

Tensor add_scalar(const Tensor& a, double s) {
  Tensor out = make_op(a.shape(), {a.ptr()});
  const auto& av = a.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + s;
  if (out.requires_grad()) {
    Node *self = &out.node(), *pa = &a.node();
    out.node().backward = [self, pa] {
      pa->ensure_grad();
      for (std::size_t i = 0; i < self->g.size(); ++i) pa->g[i] += self->g[i];
    };
  }
  return out;
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

namespace {

template <typename Fwd, typename Dfn>
Tensor unary_op(const Tensor& a, Fwd fwd, Dfn dfn) {
  Tensor out = make_op(a.shape(), {a.ptr()});
  const auto& av = a.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = fwd(av[i]);
  if (out.requires_grad()) {
    Node *self = &out.node(), *pa = &a.node();
    out.node().backward = [self, pa, dfn] {
      pa->ensure_grad();
      for (std::size_t i = 0; i < self->g.size(); ++i)
        pa->g[i] += self->g[i] * dfn(pa->v[i], self->v[i]);
    };
  }
  return out;
}

}  // namespace

Tensor relu(const Tensor& a) {
  return unary_op(
      a, [](double x) { return x > 0 ? x : 0.0; },
      [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(const Tensor& a, double slope) {
  return unary_op(
      a, [slope](double x) { return x > 0 ? x : slope * x; },
      [slope](double x, double) { return x > 0 ? 1.0 : slope; });
}

Tensor sigmoid(const Tensor& a) {
  return unary_op(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh_(const Tensor& a) {
  return unary_op(
      a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor exp_(const Tensor& a) {
  return unary_op(
      a, [](double x) { return std::exp(x); },
      [](double, double y) { return y; });
}

Tensor log_(const Tensor& a, double eps) {
  return unary_op(
      a, [eps](double x) { return std::log(std::max(x, eps)); },
      [eps](double x, double) { return 1.0 / std::max(x, eps); });
}

Tensor abs_(const Tensor& a) {
  return unary_op(
      a, [](double x) { return std::abs(x); },
      [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

Tensor square(const Tensor& a) {
  return unary_op(
      a, [](double x) { return x * x; },
      [](double x, double) { return 2.0 * x; });
}

// ---------------- reductions ----------------

Tensor sum(const Tensor& a) {
  Tensor out = make_op({1}, {a.ptr()});
  double s = 0.0;
  for (double x : a.values()) s += x;
  out.values()[0] = s;
  if (out.requires_grad()) {
    Node *self = &out.node(), *pa = &a.node();
    out.node().backward = [self, pa] {
      pa->ensure_grad();
      const double g = self->g[0];
      for (auto& gi : pa->g) gi += g;
    };
  }
  return out;
}

Tensor mean(const Tensor& a) {
  const double inv = 1.0 / static_cast<double>(a.numel());
  return scale(sum(a), inv);
}

Tensor masked_mean(const Tensor& a, const Tensor& mask) {
  check_same_shape(a, mask, "masked_mean");
  double wsum = 0.0;
  for (double m : mask.values()) wsum += m;
  if (wsum <= 0.0) return Tensor::scalar(0.0);
  Tensor out = make_op({1}, {a.ptr()});
  const auto &av = a.values(), &mv = mask.values();
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) s += av[i] * mv[i];
  out.values()[0] = s / wsum;
  if (out.requires_grad()) {
    Node *self = &out.node(), *pa = &a.node();
    std::vector<double> m = mask.values();
    out.node().backward = [self, pa, m, wsum] {
      pa->ensure_grad();
      const double g = self->g[0] / wsum;
      for (std::size_t i = 0; i < pa->g.size(); ++i) pa->g[i] += g * m[i];
    };
  }
  return out;
}

// ---------------- shape ----------------

Tensor reshape(const Tensor& a, const Shape& s) {
  if (shape_numel(s) != a.numel())
    throw std::invalid_argument("reshape: numel mismatch");
  Tensor out = make_op(s, {a.ptr()});
  out.values() = a.values();
  if (out.requires_grad()) {
    Node *self = &out.node(), *pa = &a.node();
    out.node().backward = [self, pa] {
      pa->ensure_grad();
      for (std::size_t i = 0; i < self->g.size(); ++i) pa->g[i] += self->g[i];
    };
  }
  return out;
}

Tensor permute(const Tensor& a, const std::vector<int>& axes) {
  const Shape& in = a.shape();
  const int nd = static_cast<int>(in.size());
  if (static_cast<int>(axes.size()) != nd)
    throw std::invalid_argument("permute: axes rank mismatch");
  Shape outs(in.size());
  for (int i = 0; i < nd; ++i) outs[static_cast<std::size_t>(i)] = in[static_cast<std::size_t>(axes[static_cast<std::size_t>(i)])];
  std::vector<std::size_t> in_strides(in.size()), out_strides(in.size());
  std::size_t st = 1;
  for (int i = nd - 1; i >= 0; --i) {
    in_strides[static_cast<std::size_t>(i)] = st;
    st *= static_cast<std::size_t>(in[static_cast<std::size_t>(i)]);
  }
  st = 1;
  for (int i = nd - 1; i >= 0; --i) {
    out_strides[static_cast<std::size_t>(i)] = st;
    st *= static_cast<std::size_t>(outs[static_cast<std::size_t>(i)]);
  }
  const std::size_t n = a.numel();
  // map[out_index] = in_index
  auto map = std::make_shared<std::vector<std::size_t>>(n);
  std::vector<int> idx(in.size(), 0);
  for (std::size_t o = 0; o < n; ++o) {
    std::size_t rem = o, in_off = 0;
    for (int i = 0; i < nd; ++i) {
      const std::size_t k = rem / out_strides[static_cast<std::size_t>(i)];
      rem %= out_strides[static_cast<std::size_t>(i)];
      in_off += k * in_strides[static_cast<std::size_t>(axes[static_cast<std::size_t>(i)])];
    }
    (*map)[o] = in_off;
  }
  Tensor out = make_op(outs, {a.ptr()});
  const auto& av = a.values();
  auto& ov = out.values();
  for (std::size_t o = 0; o < n; ++o) ov[o] = av[(*map)[o]];
  if (out.requires_grad()) {
    Node *self = &out.node(), *pa = &a.node();
    out.node().backward = [self, pa, map] {
      pa->ensure_grad();
      for (std::size_t o = 0; o < self->g.size(); ++o)
        pa->g[(*map)[o]] += self->g[o];
    };
  }
  return out;
}

Tensor concat(const std::vector<Tensor>& xs, int axis) {
  if (xs.empty()) throw std::invalid_argument("concat: empty input list");
  const Shape& s0 = xs[0].shape();
  const int nd = static_cast<int>(s0.size());
  if (axis < 0 || axis >= nd) throw std::invalid_argument("concat: bad axis");
  Shape outs = s0;
  int cat = 0;
  for (const auto& x : xs) {
    const Shape& s = x.shape();
    for (int i = 0; i < nd; ++i)
      if (i != axis && s[static_cast<std::size_t>(i)] != s0[static_cast<std::size_t>(i)])
        throw std::invalid_argument("concat: shape mismatch");
    cat += s[static_cast<std::size_t>(axis)];
  }
  outs[static_cast<std::size_t>(axis)] = cat;
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= static_cast<std::size_t>(s0[static_cast<std::size_t>(i)]);
  for (int i = axis + 1; i < nd; ++i) inner *= static_cast<std::size_t>(s0[static_cast<std::size_t>(i)]);

  std::vector<std::shared_ptr<Node>> parents;
  for (const auto& x : xs) parents.push_back(x.ptr());
  Tensor out = make_op(outs, parents);
  auto& ov = out.values();
  const std::size_t out_row = static_cast<std::size_t>(cat) * inner;
  std::size_t col_off = 0;
  for (const auto& x : xs) {
    const std::size_t blk = static_cast<std::size_t>(x.dim(axis)) * inner;
    const auto& xv = x.values();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy(xv.begin() + static_cast<std::ptrdiff_t>(o * blk),
                xv.begin() + static_cast<std::ptrdiff_t>((o + 1) * blk),
                ov.begin() + static_cast<std::ptrdiff_t>(o * out_row + col_off));
    col_off += blk;
  }
  if (out.requires_grad()) {
    Node* self = &out.node();
    std::vector<Node*> ps;
    std::vector<std::size_t> blks;
    for (const auto& x : xs) {
      ps.push_back(&x.node());
      blks.push_back(static_cast<std::size_t>(x.dim(axis)) * inner);
    }
    out.node().backward = [self, ps, blks, outer, out_row] {
      std::size_t col_off = 0;
      for (std::size_t j = 0; j < ps.size(); ++j) {
        Node* p = ps[j];
        const std::size_t blk = blks[j];
        if (p->requires_grad) {
          p->ensure_grad();
          for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t i = 0; i < blk; ++i)
              p->g[o * blk + i] += self->g[o * out_row + col_off + i];
        }
        col_off += blk;
      }
    };
  }
  return out;
}

Tensor slice_lastdim(const Tensor& a, int start, int len) {
  const Shape& s = a.shape();
  const int F = s.back();
  if (start < 0 || len <= 0 || start + len > F)
    throw std::invalid_argument("slice_lastdim: range out of bounds");
  Shape outs = s;
  outs.back() = len;
  const std::size_t rows = a.numel() / static_cast<std::size_t>(F);
  Tensor out = make_op(outs, {a.ptr()});
  const auto& av = a.values();
  auto& ov = out.values();
  for (std::size_t r = 0; r < rows; ++r)
    for (int i = 0; i < len; ++i)
      ov[r * static_cast<std::size_t>(len) + static_cast<std::size_t>(i)] =
          av[r * static_cast<std::size_t>(F) + static_cast<std::size_t>(start + i)];
  if (out.requires_grad()) {
    Node *self = &out.node(), *pa = &a.node();
    out.node().backward = [self, pa, rows, F, start, len] {
      pa->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (int i = 0; i < len; ++i)
          pa->g[r * static_cast<std::size_t>(F) + static_cast<std::size_t>(start + i)] +=
              self->g[r * static_cast<std::size_t>(len) + static_cast<std::size_t>(i)];
    };
  }
  return out;
}

// ---------------- linear algebra ----------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
    throw std::invalid_argument("matmul: incompatible shapes");
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out = make_op({m, n}, {a.ptr(), b.ptr()});
  CMapMat A(a.values().data(), m, k), B(b.values().data(), k, n);
  MapMat O(out.values().data(), m, n);
  O.noalias() = A * B;
  if (out.requires_grad()) {
    Node *self = &out.node(), *pa = &a.node(), *pb = &b.node();
    out.node().backward = [self, pa, pb, m, k, n] {
      CMapMat G(self->g.data(), m, n);
      CMapMat A(pa->v.data(), m, k), B(pb->v.data(), k, n);
      if (pa->requires_grad) {
        pa->ensure_grad();
        MapMat GA(pa->g.data(), m, k);
        GA.noalias() += G * B.transpose();
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        MapMat GB(pb->g.data(), k, n);
        GB.noalias() += A.transpose() * G;
      }
    };
  }
  return out;
}

Tensor bmm(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 3 || b.ndim() != 3 || a.dim(0) != b.dim(0) ||
      a.dim(2) != b.dim(1))
    throw std::invalid_argument("bmm: incompatible shapes");
  const int B = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  Tensor out = make_op({B, m, n}, {a.ptr(), b.ptr()});
  const std::size_t sa = static_cast<std::size_t>(m) * k,
                    sb = static_cast<std::size_t>(k) * n,
                    so = static_cast<std::size_t>(m) * n;
  for (int i = 0; i < B; ++i) {
    CMapMat A(a.values().data() + static_cast<std::size_t>(i) * sa, m, k);
    CMapMat Bm(b.values().data() + static_cast<std::size_t>(i) * sb, k, n);
    MapMat O(out.values().data() + static_cast<std::size_t>(i) * so, m, n);
    O.noalias() = A * Bm;
  }
  if (out.requires_grad()) {
    Node *self = &out.node(), *pa = &a.node(), *pb = &b.node();
    out.node().backward = [self, pa, pb, B, m, k, n, sa, sb, so] {
      for (int i = 0; i < B; ++i) {
        CMapMat G(self->g.data() + static_cast<std::size_t>(i) * so, m, n);
        CMapMat A(pa->v.data() + static_cast<std::size_t>(i) * sa, m, k);
        CMapMat Bm(pb->v.data() + static_cast<std::size_t>(i) * sb, k, n);
        if (pa->requires_grad) {
          pa->ensure_grad();
          MapMat GA(pa->g.data() + static_cast<std::size_t>(i) * sa, m, k);
          GA.noalias() += G * Bm.transpose();
        }
        if (pb->requires_grad) {
          pb->ensure_grad();
          MapMat GB(pb->g.data() + static_cast<std::size_t>(i) * sb, k, n);
          GB.noalias() += A.transpose() * G;
        }
      }
    };
  }
  return out;
}

Tensor transpose_last2(const Tensor& a) {
  const int nd = a.ndim();
  if (nd < 2) throw std::invalid_argument("transpose_last2: rank < 2");
  std::vector<int> axes(static_cast<std::size_t>(nd));
  for (int i = 0; i < nd; ++i) axes[static_cast<std::size_t>(i)] = i;
  std::swap(axes[static_cast<std::size_t>(nd - 1)], axes[static_cast<std::size_t>(nd - 2)]);
  return permute(a, axes);
}

Tensor add_row_bias(const Tensor& x, const Tensor& b) {
  const int F = x.shape().back();
  if (b.ndim() != 1 || b.dim(0) != F)
    throw std::invalid_argument("add_row_bias: bias size mismatch");
  const std::size_t rows = x.numel() / static_cast<std::size_t>(F);
  Tensor out = make_op(x.shape(), {x.ptr(), b.ptr()});
  const auto &xv = x.values(), &bv = b.values();
  auto& ov = out.values();
  for (std::size_t r = 0; r < rows; ++r)
    for (int i = 0; i < F; ++i)
      ov[r * static_cast<std::size_t>(F) + static_cast<std::size_t>(i)] =
          xv[r * static_cast<std::size_t>(F) + static_cast<std::size_t>(i)] + bv[static_cast<std::size_t>(i)];
  if (out.requires_grad()) {
    Node *self = &out.node(), *px = &x.node(), *pb = &b.node();
    out.node().backward = [self, px, pb, rows, F] {
      if (px->requires_grad) {
        px->ensure_grad();
        for (std::size_t i = 0; i < self->g.size(); ++i) px->g[i] += self->g[i];
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (int i = 0; i < F; ++i)
            pb->g[static_cast<std::size_t>(i)] +=
                self->g[r * static_cast<std::size_t>(F) + static_cast<std::size_t>(i)];
      }
    };
  }
  return out;
}

Tensor add_channel_bias(const Tensor& x, const Tensor& b) {
  if (x.ndim() != 4) throw std::invalid_argument("add_channel_bias: expect NCHW");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (b.ndim() != 1 || b.dim(0) != C)
    throw std::invalid_argument("add_channel_bias: bias size mismatch");
  Tensor out = make_op(x.shape(), {x.ptr(), b.ptr()});
  const auto &xv = x.values(), &bv = b.values();
  auto& ov = out.values();
  const std::size_t hw = static_cast<std::size_t>(H) * W;
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const std::size_t off = (static_cast<std::size_t>(n) * C + c) * hw;
      const double bc = bv[static_cast<std::size_t>(c)];
      for (std::size_t i = 0; i < hw; ++i) ov[off + i] = xv[off + i] + bc;
    }
  if (out.requires_grad()) {
    Node *self = &out.node(), *px = &x.node(), *pb = &b.node();
    out.node().backward = [self, px, pb, N, C, hw] {
      if (px->requires_grad) {
        px->ensure_grad();
        for (std::size_t i = 0; i < self->g.size(); ++i) px->g[i] += self->g[i];
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        for (int n = 0; n < N; ++n)
          for (int c = 0; c < C; ++c) {
            const std::size_t off = (static_cast<std::size_t>(n) * C + c) * hw;
            double s = 0.0;
            for (std::size_t i = 0; i < hw; ++i) s += self->g[off + i];
            pb->g[static_cast<std::size_t>(c)] += s;
          }
      }
    };
  }
  return out;
}

Tensor add_broadcast_mat(const Tensor& x, const Tensor& b) {
  if (x.ndim() != 3 || b.ndim() != 2 || x.dim(1) != b.dim(0) ||
      x.dim(2) != b.dim(1))
    throw std::invalid_argument("add_broadcast_mat: shape mismatch");
  const int B = x.dim(0);
  const std::size_t mat = b.numel();
  Tensor out = make_op(x.shape(), {x.ptr(), b.ptr()});
  const auto &xv = x.values(), &bv = b.values();
  auto& ov = out.values();
  for (int i = 0; i < B; ++i)
    for (std::size_t j = 0; j < mat; ++j)
      ov[static_cast<std::size_t>(i) * mat + j] = xv[static_cast<std::size_t>(i) * mat + j] + bv[j];
  if (out.requires_grad()) {
    Node *self = &out.node(), *px = &x.node(), *pb = &b.node();
    out.node().backward = [self, px, pb, B, mat] {
      if (px->requires_grad) {
        px->ensure_grad();
        for (std::size_t i = 0; i < self->g.size(); ++i) px->g[i] += self->g[i];
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        for (int i = 0; i < B; ++i)
          for (std::size_t j = 0; j < mat; ++j)
            pb->g[j] += self->g[static_cast<std::size_t>(i) * mat + j];
      }
    };
  }
  return out;
}

Tensor global_avg_pool(const Tensor& x) {
  if (x.ndim() != 4) throw std::invalid_argument("global_avg_pool: expect NCHW");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t hw = static_cast<std::size_t>(H) * W;
  Tensor out = make_op({N, C}, {x.ptr()});
  const auto& xv = x.values();
  auto& ov = out.values();
  for (std::size_t nc = 0; nc < static_cast<std::size_t>(N) * C; ++nc) {
    double s = 0.0;
    for (std::size_t i = 0; i < hw; ++i) s += xv[nc * hw + i];
    ov[nc] = s / static_cast<double>(hw);
  }
  if (out.requires_grad()) {
    Node *self = &out.node(), *px = &x.node();
    out.node().backward = [self, px, hw] {
      if (!px->requires_grad) return;
      px->ensure_grad();
      for (std::size_t nc = 0; nc < self->g.size(); ++nc) {
        const double g = self->g[nc] / static_cast<double>(hw);
        for (std::size_t i = 0; i < hw; ++i) px->g[nc * hw + i] += g;
      }
    };
  }
  return out;
}

Tensor mul_channel(const Tensor& x, const Tensor& s) {
  if (x.ndim() != 4 || s.ndim() != 2 || s.dim(0) != x.dim(0) ||
      s.dim(1) != x.dim(1))
    throw std::invalid_argument("mul_channel: shape mismatch");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t hw = static_cast<std::size_t>(H) * W;
  Tensor out = make_op(x.shape(), {x.ptr(), s.ptr()});
  const auto &xv = x.values(), &sv = s.values();
  auto& ov = out.values();
  for (std::size_t nc = 0; nc < static_cast<std::size_t>(N) * C; ++nc)
    for (std::size_t i = 0; i < hw; ++i) ov[nc * hw + i] = xv[nc * hw + i] * sv[nc];
  if (out.requires_grad()) {
    Node *self = &out.node(), *px = &x.node(), *ps = &s.node();
    out.node().backward = [self, px, ps, hw] {
      const std::size_t NC = ps->v.size();
      if (px->requires_grad) {
        px->ensure_grad();
        for (std::size_t nc = 0; nc < NC; ++nc)
          for (std::size_t i = 0; i < hw; ++i)
            px->g[nc * hw + i] += self->g[nc * hw + i] * ps->v[nc];
      }
      if (ps->requires_grad) {
        ps->ensure_grad();
        for (std::size_t nc = 0; nc < NC; ++nc) {
          double acc = 0.0;
          for (std::size_t i = 0; i < hw; ++i)
            acc += self->g[nc * hw + i] * px->v[nc * hw + i];
          ps->g[nc] += acc;
        }
      }
    };
  }
  return out;
}

Tensor mul_spatial(const Tensor& x, const Tensor& m) {
  if (x.ndim() != 4 || m.ndim() != 4 || m.dim(0) != x.dim(0) || m.dim(1) != 1 ||
      m.dim(2) != x.dim(2) || m.dim(3) != x.dim(3))
    throw std::invalid_argument("mul_spatial: shape mismatch");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t hw = static_cast<std::size_t>(H) * W;
  Tensor out = make_op(x.shape(), {x.ptr(), m.ptr()});
  const auto &xv = x.values(), &mv = m.values();
  auto& ov = out.values();
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const std::size_t off = (static_cast<std::size_t>(n) * C + c) * hw;
      const std::size_t moff = static_cast<std::size_t>(n) * hw;
      for (std::size_t i = 0; i < hw; ++i) ov[off + i] = xv[off + i] * mv[moff + i];
    }
  if (out.requires_grad()) {
    Node *self = &out.node(), *px = &x.node(), *pm = &m.node();
    out.node().backward = [self, px, pm, N, C, hw] {
      if (px->requires_grad) {
        px->ensure_grad();
        for (int n = 0; n < N; ++n)
          for (int c = 0; c < C; ++c) {
            const std::size_t off = (static_cast<std::size_t>(n) * C + c) * hw;
            const std::size_t moff = static_cast<std::size_t>(n) * hw;
            for (std::size_t i = 0; i < hw; ++i)
              px->g[off + i] += self->g[off + i] * pm->v[moff + i];
          }
      }
      if (pm->requires_grad) {
        pm->ensure_grad();
        for (int n = 0; n < N; ++n)
          for (int c = 0; c < C; ++c) {
            const std::size_t off = (static_cast<std::size_t>(n) * C + c) * hw;
            const std::size_t moff = static_cast<std::size_t>(n) * hw;
            for (std::size_t i = 0; i < hw; ++i)
              pm->g[moff + i] += self->g[off + i] * px->v[off + i];
          }
      }
    };
  }
  return out;
}

// ---------------- row-wise normalizations ----------------

Tensor softmax_lastdim(const Tensor& a) {
  const int F = a.shape().back();
  const std::size_t rows = a.numel() / static_cast<std::size_t>(F);
  Tensor out = make_op(a.shape(), {a.ptr()});
  const auto& av = a.values();
  auto& ov = out.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t off = r * static_cast<std::size_t>(F);
    double mx = av[off];
    for (int i = 1; i < F; ++i) mx = std::max(mx, av[off + static_cast<std::size_t>(i)]);
    double s = 0.0;
    for (int i = 0; i < F; ++i) {
      ov[off + static_cast<std::size_t>(i)] = std::exp(av[off + static_cast<std::size_t>(i)] - mx);
      s += ov[off + static_cast<std::size_t>(i)];
    }
    for (int i = 0; i < F; ++i) ov[off + static_cast<std::size_t>(i)] /= s;
  }
  if (out.requires_grad()) {
    Node *self = &out.node(), *pa = &a.node();
    out.node().backward = [self, pa, rows, F] {
      pa->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t off = r * static_cast<std::size_t>(F);
        double dot = 0.0;
        for (int i = 0; i < F; ++i)
          dot += self->g[off + static_cast<std::size_t>(i)] * self->v[off + static_cast<std::size_t>(i)];
        for (int i = 0; i < F; ++i)
          pa->g[off + static_cast<std::size_t>(i)] +=
              self->v[off + static_cast<std::size_t>(i)] * (self->g[off + static_cast<std::size_t>(i)] - dot);
      }
    };
  }
  return out;
}

Tensor layer_norm_lastdim(const Tensor& a, const Tensor& gamma,
                          const Tensor& beta, double eps) {
  const int F = a.shape().back();
  if (gamma.numel() != static_cast<std::size_t>(F) ||
      beta.numel() != static_cast<std::size_t>(F))
    throw std::invalid_argument("layer_norm: affine size mismatch");
  const std::size_t rows = a.numel() / static_cast<std::size_t>(F);
  Tensor out = make_op(a.shape(), {a.ptr(), gamma.ptr(), beta.ptr()});
  const auto &av = a.values(), &gv = gamma.values(), &bv = beta.values();
  auto& ov = out.values();
  auto xhat = std::make_shared<std::vector<double>>(a.numel());
  auto istd = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t off = r * static_cast<std::size_t>(F);
    double mu = 0.0;
    for (int i = 0; i < F; ++i) mu += av[off + static_cast<std::size_t>(i)];
    mu /= F;
    double var = 0.0;
    for (int i = 0; i < F; ++i) {
      const double d = av[off + static_cast<std::size_t>(i)] - mu;
      var += d * d;
    }
    var /= F;
    const double is = 1.0 / std::sqrt(var + eps);
    (*istd)[r] = is;
    for (int i = 0; i < F; ++i) {
      const double xh = (av[off + static_cast<std::size_t>(i)] - mu) * is;
      (*xhat)[off + static_cast<std::size_t>(i)] = xh;
      ov[off + static_cast<std::size_t>(i)] = gv[static_cast<std::size_t>(i)] * xh + bv[static_cast<std::size_t>(i)];
    }
  }
  if (out.requires_grad()) {
    Node *self = &out.node(), *pa = &a.node(), *pg = &gamma.node(), *pb = &beta.node();
    out.node().backward = [self, pa, pg, pb, rows, F, xhat, istd] {
      for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t off = r * static_cast<std::size_t>(F);
        if (pg->requires_grad) {
          pg->ensure_grad();
          for (int i = 0; i < F; ++i)
            pg->g[static_cast<std::size_t>(i)] +=
                self->g[off + static_cast<std::size_t>(i)] * (*xhat)[off + static_cast<std::size_t>(i)];
        }
        if (pb->requires_grad) {
          pb->ensure_grad();
          for (int i = 0; i < F; ++i)
            pb->g[static_cast<std::size_t>(i)] += self->g[off + static_cast<std::size_t>(i)];
        }
        if (pa->requires_grad) {
          pa->ensure_grad();
          // dL/dxhat_i = g_i * gamma_i; standard layer-norm backward
          double sum_dxh = 0.0, sum_dxh_xh = 0.0;
          for (int i = 0; i < F; ++i) {
            const double dxh = self->g[off + static_cast<std::size_t>(i)] * pg->v[static_cast<std::size_t>(i)];
            sum_dxh += dxh;
            sum_dxh_xh += dxh * (*xhat)[off + static_cast<std::size_t>(i)];
          }
          const double is = (*istd)[r];
          for (int i = 0; i < F; ++i) {
            const double dxh = self->g[off + static_cast<std::size_t>(i)] * pg->v[static_cast<std::size_t>(i)];
            pa->g[off + static_cast<std::size_t>(i)] +=
                is * (dxh - sum_dxh / F - (*xhat)[off + static_cast<std::size_t>(i)] * sum_dxh_xh / F);
          }
        }
      }
    };
  }
  return out;
}

Tensor l2_normalize_lastdim(const Tensor& a, double eps) {
  const int F = a.shape().back();
  const std::size_t rows = a.numel() / static_cast<std::size_t>(F);
  Tensor out = make_op(a.shape(), {a.ptr()});
  const auto& av = a.values();
  auto& ov = out.values();
  auto norms = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t off = r * static_cast<std::size_t>(F);
    double s = 0.0;
    for (int i = 0; i < F; ++i) s += av[off + static_cast<std::size_t>(i)] * av[off + static_cast<std::size_t>(i)];
    const double nrm = std::max(std::sqrt(s), eps);
    (*norms)[r] = nrm;
    for (int i = 0; i < F; ++i) ov[off + static_cast<std::size_t>(i)] = av[off + static_cast<std::size_t>(i)] / nrm;
  }
  if (out.requires_grad()) {
    Node *self = &out.node(), *pa = &a.node();
    out.node().backward = [self, pa, rows, F, norms] {
      pa->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t off = r * static_cast<std::size_t>(F);
        const double nrm = (*norms)[r];
        double dot = 0.0;
        for (int i = 0; i < F; ++i)
          dot += self->g[off + static_cast<std::size_t>(i)] * pa->v[off + static_cast<std::size_t>(i)];
        for (int i = 0; i < F; ++i)
          pa->g[off + static_cast<std::size_t>(i)] +=
              self->g[off + static_cast<std::size_t>(i)] / nrm -
              pa->v[off + static_cast<std::size_t>(i)] * dot / (nrm * nrm * nrm);
      }
    };
  }
  return out;
}

Tensor nll_pick(const Tensor& p, const std::vector<int>& index, double eps) {
  if (p.ndim() != 2) throw std::invalid_argument("nll_pick: expect [B,K]");
  const int B = p.dim(0), K = p.dim(1);
  if (static_cast<int>(index.size()) != B)
    throw std::invalid_argument("nll_pick: index count mismatch");
  Tensor out = make_op({B}, {p.ptr()});
  const auto& pv = p.values();
  auto& ov = out.values();
  for (int b = 0; b < B; ++b) {
    const int k = index[static_cast<std::size_t>(b)];
    if (k < 0 || k >= K) throw std::invalid_argument("nll_pick: index out of range");
    ov[static_cast<std::size_t>(b)] =
        -std::log(std::max(pv[static_cast<std::size_t>(b) * K + static_cast<std::size_t>(k)], eps));
  }
  if (out.requires_grad()) {
    Node *self = &out.node(), *pp = &p.node();
    out.node().backward = [self, pp, index, K, eps] {
      pp->ensure_grad();
      for (std::size_t b = 0; b < index.size(); ++b) {
        const std::size_t k = static_cast<std::size_t>(index[b]);
        const double pc = std::max(pp->v[b * static_cast<std::size_t>(K) + k], eps);
        pp->g[b * static_cast<std::size_t>(K) + k] -= self->g[b] / pc;
      }
    };
  }
  return out;
}

// ---------------- conv / pooling ----------------

namespace {

void im2col(const double* x, int C, int H, int W, int kh, int kw, int stride,
            int pad, int Ho, int Wo, double* col) {
  // col: [C*kh*kw, Ho*Wo]
  const std::size_t owh = static_cast<std::size_t>(Ho) * Wo;
  std::size_t row = 0;
  for (int c = 0; c < C; ++c)
    for (int i = 0; i < kh; ++i)
      for (int j = 0; j < kw; ++j, ++row) {
        double* dst = col + row * owh;
        for (int oy = 0; oy < Ho; ++oy) {
          const int iy = oy * stride - pad + i;
          for (int ox = 0; ox < Wo; ++ox) {
            const int ix = ox * stride - pad + j;
            dst[static_cast<std::size_t>(oy) * Wo + ox] =
                (iy >= 0 && iy < H && ix >= 0 && ix < W)
                    ? x[(static_cast<std::size_t>(c) * H + iy) * W + ix]
                    : 0.0;
          }
        }
      }
}

void col2im_add(const double* col, int C, int H, int W, int kh, int kw,
                int stride, int pad, int Ho, int Wo, double* gx) {
  const std::size_t owh = static_cast<std::size_t>(Ho) * Wo;
  std::size_t row = 0;
  for (int c = 0; c < C; ++c)
    for (int i = 0; i < kh; ++i)
      for (int j = 0; j < kw; ++j, ++row) {
        const double* src = col + row * owh;
        for (int oy = 0; oy < Ho; ++oy) {
          const int iy = oy * stride - pad + i;
          if (iy < 0 || iy >= H) continue;
          for (int ox = 0; ox < Wo; ++ox) {
            const int ix = ox * stride - pad + j;
            if (ix < 0 || ix >= W) continue;
            gx[(static_cast<std::size_t>(c) * H + iy) * W + ix] +=
                src[static_cast<std::size_t>(oy) * Wo + ox];
          }
        }
      }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
              int pad) {
  if (x.ndim() != 4 || w.ndim() != 4)
    throw std::invalid_argument("conv2d: expect NCHW input and OIHW weight");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Co = w.dim(0), Ci = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  if (Ci != C) throw std::invalid_argument("conv2d: channel mismatch");
  if (b.defined() && (b.ndim() != 1 || b.dim(0) != Co))
    throw std::invalid_argument("conv2d: bias size mismatch");
  const int Ho = (H + 2 * pad - kh) / stride + 1;
  const int Wo = (W + 2 * pad - kw) / stride + 1;
  if (Ho <= 0 || Wo <= 0) throw std::invalid_argument("conv2d: empty output");

  std::vector<std::shared_ptr<Node>> parents{x.ptr(), w.ptr()};
  if (b.defined()) parents.push_back(b.ptr());
  Tensor out = make_op({N, Co, Ho, Wo}, parents);

  const int K = C * kh * kw;
  const std::size_t owh = static_cast<std::size_t>(Ho) * Wo;
  std::vector<double> col(static_cast<std::size_t>(K) * owh);
  CMapMat Wm(w.values().data(), Co, K);
  for (int n = 0; n < N; ++n) {
    im2col(x.values().data() + static_cast<std::size_t>(n) * C * H * W, C, H, W,
           kh, kw, stride, pad, Ho, Wo, col.data());
    CMapMat Cm(col.data(), K, static_cast<int>(owh));
    MapMat Om(out.values().data() + static_cast<std::size_t>(n) * Co * owh, Co,
              static_cast<int>(owh));
    Om.noalias() = Wm * Cm;
    if (b.defined())
      for (int c = 0; c < Co; ++c)
        Om.row(c).array() += b.values()[static_cast<std::size_t>(c)];
  }

  if (out.requires_grad()) {
    Node *self = &out.node(), *px = &x.node(), *pw = &w.node();
    Node* pb = b.defined() ? &b.node() : nullptr;
    out.node().backward = [self, px, pw, pb, N, C, H, W, Co, kh, kw, stride,
                           pad, Ho, Wo, K, owh] {
      std::vector<double> col(static_cast<std::size_t>(K) * owh);
      std::vector<double> gcol(static_cast<std::size_t>(K) * owh);
      CMapMat Wm(pw->v.data(), Co, K);
      for (int n = 0; n < N; ++n) {
        CMapMat G(self->g.data() + static_cast<std::size_t>(n) * Co * owh, Co,
                  static_cast<int>(owh));
        if (pw->requires_grad) {
          pw->ensure_grad();
          im2col(px->v.data() + static_cast<std::size_t>(n) * C * H * W, C, H,
                 W, kh, kw, stride, pad, Ho, Wo, col.data());
          CMapMat Cm(col.data(), K, static_cast<int>(owh));
          MapMat GW(pw->g.data(), Co, K);
          GW.noalias() += G * Cm.transpose();
        }
        if (px->requires_grad) {
          px->ensure_grad();
          MapMat GC(gcol.data(), K, static_cast<int>(owh));
          GC.noalias() = Wm.transpose() * G;
          col2im_add(gcol.data(), C, H, W, kh, kw, stride, pad, Ho, Wo,
                     px->g.data() + static_cast<std::size_t>(n) * C * H * W);
        }
        if (pb && pb->requires_grad) {
          pb->ensure_grad();
          for (int c = 0; c < Co; ++c)
            pb->g[static_cast<std::size_t>(c)] += G.row(c).sum();
        }
      }
    };
  }
  return out;
}

Tensor avg_pool2x2(const Tensor& x) {
  if (x.ndim() != 4 || x.dim(2) % 2 != 0 || x.dim(3) % 2 != 0)
    throw std::invalid_argument("avg_pool2x2: expect NCHW with even H, W");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Ho = H / 2, Wo = W / 2;
  Tensor out = make_op({N, C, Ho, Wo}, {x.ptr()});
  const auto& xv = x.values();
  auto& ov = out.values();
  for (int nc = 0; nc < N * C; ++nc) {
    const std::size_t xo = static_cast<std::size_t>(nc) * H * W;
    const std::size_t oo = static_cast<std::size_t>(nc) * Ho * Wo;
    for (int y = 0; y < Ho; ++y)
      for (int xi = 0; xi < Wo; ++xi)
        ov[oo + static_cast<std::size_t>(y) * Wo + xi] =
            0.25 * (xv[xo + static_cast<std::size_t>(2 * y) * W + 2 * xi] +
                    xv[xo + static_cast<std::size_t>(2 * y) * W + 2 * xi + 1] +
                    xv[xo + static_cast<std::size_t>(2 * y + 1) * W + 2 * xi] +
                    xv[xo + static_cast<std::size_t>(2 * y + 1) * W + 2 * xi + 1]);
  }
  if (out.requires_grad()) {
    Node *self = &out.node(), *px = &x.node();
    out.node().backward = [self, px, N, C, H, W, Ho, Wo] {
      px->ensure_grad();
      for (int nc = 0; nc < N * C; ++nc) {
        const std::size_t xo = static_cast<std::size_t>(nc) * H * W;
        const std::size_t oo = static_cast<std::size_t>(nc) * Ho * Wo;
        for (int y = 0; y < Ho; ++y)
          for (int xi = 0; xi < Wo; ++xi) {
            const double g = 0.25 * self->g[oo + static_cast<std::size_t>(y) * Wo + xi];
            px->g[xo + static_cast<std::size_t>(2 * y) * W + 2 * xi] += g;
            px->g[xo + static_cast<std::size_t>(2 * y) * W + 2 * xi + 1] += g;
            px->g[xo + static_cast<std::size_t>(2 * y + 1) * W + 2 * xi] += g;
            px->g[xo + static_cast<std::size_t>(2 * y + 1) * W + 2 * xi + 1] += g;
          }
      }
    };
  }
  return out;
}

Tensor upsample_nearest2x(const Tensor& x) {
  if (x.ndim() != 4) throw std::invalid_argument("upsample_nearest2x: expect NCHW");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Ho = H * 2, Wo = W * 2;
  Tensor out = make_op({N, C, Ho, Wo}, {x.ptr()});
  const auto& xv = x.values();
  auto& ov = out.values();
  for (int nc = 0; nc < N * C; ++nc) {
    const std::size_t xo = static_cast<std::size_t>(nc) * H * W;
    const std::size_t oo = static_cast<std::size_t>(nc) * Ho * Wo;
    for (int y = 0; y < Ho; ++y)
      for (int xi = 0; xi < Wo; ++xi)
        ov[oo + static_cast<std::size_t>(y) * Wo + xi] =
            xv[xo + static_cast<std::size_t>(y / 2) * W + xi / 2];
  }
  if (out.requires_grad()) {
    Node *self = &out.node(), *px = &x.node();
    out.node().backward = [self, px, N, C, H, W, Ho, Wo] {
      px->ensure_grad();
      for (int nc = 0; nc < N * C; ++nc) {
        const std::size_t xo = static_cast<std::size_t>(nc) * H * W;
        const std::size_t oo = static_cast<std::size_t>(nc) * Ho * Wo;
        for (int y = 0; y < Ho; ++y)
          for (int xi = 0; xi < Wo; ++xi)
            px->g[xo + static_cast<std::size_t>(y / 2) * W + xi / 2] +=
                self->g[oo + static_cast<std::size_t>(y) * Wo + xi];
      }
    };
  }
  return out;
}

// ---------------- frequency-domain filter ----------------

Tensor freq_filter(const Tensor& x, const Tensor& hr, const Tensor& hi) {
  if (x.ndim() != 4 || hr.ndim() != 3 || hi.ndim() != 3)
    throw std::invalid_argument("freq_filter: expect x [N,C,H,W], h [C,H,W]");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (hr.dim(0) != C || hr.dim(1) != H || hr.dim(2) != W || hr.shape() != hi.shape())
    throw std::invalid_argument("freq_filter: filter shape mismatch");
  if (next_pow2(static_cast<std::size_t>(H)) != static_cast<std::size_t>(H) ||
      next_pow2(static_cast<std::size_t>(W)) != static_cast<std::size_t>(W))
    throw std::invalid_argument("freq_filter: H and W must be powers of two");
  Tensor out = make_op(x.shape(), {x.ptr(), hr.ptr(), hi.ptr()});
  const std::size_t hw = static_cast<std::size_t>(H) * W;
  std::vector<cplx> buf(hw);
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const std::size_t xo = (static_cast<std::size_t>(n) * C + c) * hw;
      const std::size_t ho = static_cast<std::size_t>(c) * hw;
      for (std::size_t i = 0; i < hw; ++i) buf[i] = cplx(x.values()[xo + i], 0.0);
      fft2d_inplace(buf, H, W, false);
      for (std::size_t i = 0; i < hw; ++i)
        buf[i] *= cplx(hr.values()[ho + i], hi.values()[ho + i]);
      fft2d_inplace(buf, H, W, true);
      for (std::size_t i = 0; i < hw; ++i) out.values()[xo + i] = buf[i].real();
    }
  if (out.requires_grad()) {
    Node *self = &out.node(), *px = &x.node(), *phr = &hr.node(), *phi = &hi.node();
    out.node().backward = [self, px, phr, phi, N, C, H, W, hw] {
      std::vector<cplx> gf(hw), xf(hw), tmp(hw);
      const double inv_n = 1.0 / static_cast<double>(hw);
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
          const std::size_t xo = (static_cast<std::size_t>(n) * C + c) * hw;
          const std::size_t ho = static_cast<std::size_t>(c) * hw;
          for (std::size_t i = 0; i < hw; ++i) gf[i] = cplx(self->g[xo + i], 0.0);
          fft2d_inplace(gf, H, W, false);  // Gf = FFT(grad)
          if (px->requires_grad) {
            px->ensure_grad();
            for (std::size_t i = 0; i < hw; ++i)
              tmp[i] = std::conj(cplx(phr->v[ho + i], phi->v[ho + i])) * gf[i];
            fft2d_inplace(tmp, H, W, true);
            for (std::size_t i = 0; i < hw; ++i) px->g[xo + i] += tmp[i].real();
          }
          if (phr->requires_grad || phi->requires_grad) {
            for (std::size_t i = 0; i < hw; ++i) xf[i] = cplx(px->v[xo + i], 0.0);
            fft2d_inplace(xf, H, W, false);
            phr->ensure_grad();
            phi->ensure_grad();
            // W = IFFT(grad) = conj(Gf)/n for real grad
            for (std::size_t i = 0; i < hw; ++i) {
              const cplx wx = std::conj(gf[i]) * inv_n * xf[i];
              phr->g[ho + i] += wx.real();
              phi->g[ho + i] -= wx.imag();
            }
          }
        }
    };
  }
  return out;
}

}  // namespace risemar::nn
