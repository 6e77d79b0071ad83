#include "astgcn/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace astgcn {

namespace {

using detail::Node;
using detail::NodePtr;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

NodePtr new_node(Shape shape, std::vector<double> value, bool requires_grad) {
  if (shape_numel(shape) != value.size()) {
    throw ShapeError("tensor of shape " + to_string(shape) + " needs " +
                     std::to_string(shape_numel(shape)) + " values, got " +
                     std::to_string(value.size()));
  }
  for (std::size_t e : shape) {
    if (e == 0) throw ShapeError("zero extent in shape " + to_string(shape));
  }
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  return n;
}

thread_local bool g_grad_enabled = true;

// Builds an op result; the graph edge is only kept when some input needs it.
Tensor make_result(Shape shape, std::vector<double> value, std::vector<NodePtr> inputs,
                   detail::BackwardFn fn) {
  bool needs = g_grad_enabled && std::any_of(inputs.begin(), inputs.end(),
                           [](const NodePtr& p) { return p->requires_grad; });
  auto n = new_node(std::move(shape), std::move(value), needs);
  if (needs) {
    n->parents = std::move(inputs);
    n->backward = std::move(fn);
  }
  return Tensor(n);
}

void require(const Tensor& t, const char* op) {
  if (!t.defined()) throw std::invalid_argument(std::string(op) + ": undefined tensor");
}

// Outer/axis/inner extents for axis-wise kernels.
struct AxisView {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisView axis_view(const Shape& s, std::size_t axis) {
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= s[i];
  v.extent = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) v.inner *= s[i];
  return v;
}

void check_axis(const Tensor& x, std::size_t axis, const char* op) {
  if (axis >= x.rank()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                     " out of range for shape " + to_string(x.shape()));
  }
}

// ---- broadcasting ----

struct Broadcast {
  Shape out;
  std::vector<std::size_t> a_stride, b_stride;  // 0 on broadcast axes
  bool same = false;
};

std::vector<std::size_t> row_major_strides(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

Broadcast plan_broadcast(const Shape& a, const Shape& b, const char* op) {
  Broadcast p;
  if (a == b) {
    p.out = a;
    p.same = true;
    return p;
  }
  std::size_t r = std::max(a.size(), b.size());
  Shape pa(r, 1), pb(r, 1);
  std::copy(a.begin(), a.end(), pa.begin() + static_cast<std::ptrdiff_t>(r - a.size()));
  std::copy(b.begin(), b.end(), pb.begin() + static_cast<std::ptrdiff_t>(r - b.size()));
  p.out.resize(r);
  for (std::size_t i = 0; i < r; ++i) {
    if (pa[i] != pb[i] && pa[i] != 1 && pb[i] != 1) {
      throw ShapeError(std::string(op) + ": shapes " + to_string(a) + " and " + to_string(b) +
                       " are not broadcast-compatible");
    }
    p.out[i] = std::max(pa[i], pb[i]);
  }
  auto sa = row_major_strides(pa), sb = row_major_strides(pb);
  p.a_stride.resize(r);
  p.b_stride.resize(r);
  for (std::size_t i = 0; i < r; ++i) {
    p.a_stride[i] = pa[i] == 1 ? 0 : sa[i];
    p.b_stride[i] = pb[i] == 1 ? 0 : sb[i];
  }
  return p;
}

// Calls f(out_index, a_index, b_index) for every output element.
template <typename F>
void for_each_broadcast(const Broadcast& p, F&& f) {
  std::size_t total = shape_numel(p.out);
  if (p.same) {
    for (std::size_t i = 0; i < total; ++i) f(i, i, i);
    return;
  }
  std::size_t r = p.out.size();
  std::vector<std::size_t> idx(r, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t i = 0; i < total; ++i) {
    f(i, ia, ib);
    for (std::size_t d = r; d-- > 0;) {
      if (++idx[d] < p.out[d]) {
        ia += p.a_stride[d];
        ib += p.b_stride[d];
        break;
      }
      ia -= p.a_stride[d] * (p.out[d] - 1);
      ib -= p.b_stride[d] * (p.out[d] - 1);
      idx[d] = 0;
    }
  }
}

enum class BinOp { Add, Sub, Mul };

Tensor binary(const Tensor& a, const Tensor& b, BinOp op, const char* name) {
  require(a, name);
  require(b, name);
  Broadcast p = plan_broadcast(a.shape(), b.shape(), name);
  std::vector<double> out(shape_numel(p.out));
  const auto& av = a.node()->value;
  const auto& bv = b.node()->value;
  for_each_broadcast(p, [&](std::size_t i, std::size_t ia, std::size_t ib) {
    switch (op) {
      case BinOp::Add: out[i] = av[ia] + bv[ib]; break;
      case BinOp::Sub: out[i] = av[ia] - bv[ib]; break;
      case BinOp::Mul: out[i] = av[ia] * bv[ib]; break;
    }
  });
  return make_result(p.out, std::move(out), {a.node(), b.node()}, [p, op](Node& self) {
    Node& na = *self.parents[0];
    Node& nb = *self.parents[1];
    const auto& g = self.grad;
    if (na.requires_grad) {
      auto& ga = na.grad_buffer();
      for_each_broadcast(p, [&](std::size_t i, std::size_t ia, std::size_t ib) {
        ga[ia] += op == BinOp::Mul ? g[i] * nb.value[ib] : g[i];
      });
    }
    if (nb.requires_grad) {
      auto& gb = nb.grad_buffer();
      for_each_broadcast(p, [&](std::size_t i, std::size_t ia, std::size_t ib) {
        switch (op) {
          case BinOp::Add: gb[ib] += g[i]; break;
          case BinOp::Sub: gb[ib] -= g[i]; break;
          case BinOp::Mul: gb[ib] += g[i] * na.value[ia]; break;
        }
      });
    }
  });
}

// Elementwise unary op; `deriv(x, y)` is the local derivative.
template <typename F, typename D>
Tensor unary(const Tensor& x, const char* name, F f, D deriv) {
  require(x, name);
  const auto& xv = x.node()->value;
  std::vector<double> out(xv.size());
  std::transform(xv.begin(), xv.end(), out.begin(), f);
  return make_result(x.shape(), std::move(out), {x.node()}, [deriv](Node& self) {
    Node& nx = *self.parents[0];
    auto& gx = nx.grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      gx[i] += self.grad[i] * deriv(nx.value[i], self.value[i]);
    }
  });
}

void gemm_acc(MapC a, MapC b, Map c) { c.noalias() += a * b; }

}  // namespace

// ---------------------------------------------------------------------------

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::vector<double>& detail::Node::grad_buffer() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::size_t n = shape_numel(shape);
  return Tensor(new_node(std::move(shape), std::vector<double>(n, value), requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  return Tensor(new_node(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

Tensor Tensor::identity(std::size_t n) {
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
  return from({n, n}, std::move(v));
}

Tensor Tensor::uniform(Shape shape, double lo, double hi, std::mt19937_64& rng,
                       bool requires_grad) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (auto& e : v) e = dist(rng);
  return from(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::normal(Shape shape, double mean, double stddev, std::mt19937_64& rng,
                      bool requires_grad) {
  std::normal_distribution<double> dist(mean, stddev);
  std::vector<double> v(shape_numel(shape));
  for (auto& e : v) e = dist(rng);
  return from(std::move(shape), std::move(v), requires_grad);
}

const Shape& Tensor::shape() const {
  require(*this, "shape");
  return node_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  check_axis(*this, axis, "dim");
  return node_->shape[axis];
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }

std::span<const double> Tensor::values() const {
  require(*this, "values");
  return node_->value;
}

std::span<double> Tensor::mutable_values() {
  require(*this, "mutable_values");
  return node_->value;
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
  return node_->value[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  const Shape& s = shape();
  if (index.size() != s.size()) throw ShapeError("at(): rank mismatch for " + to_string(s));
  std::size_t flat = 0, d = 0;
  for (std::size_t i : index) {
    if (i >= s[d]) throw std::out_of_range("at(): index out of range for " + to_string(s));
    flat = flat * s[d++] + i;
  }
  return node_->value[flat];
}

bool Tensor::requires_grad() const { return defined() && node_->requires_grad; }

void Tensor::set_requires_grad(bool flag) {
  require(*this, "set_requires_grad");
  if (!is_leaf()) throw std::logic_error("requires_grad can only be changed on leaf tensors");
  node_->requires_grad = flag;
}

bool Tensor::is_leaf() const { return defined() && !node_->backward; }

std::vector<double> Tensor::grad() const {
  require(*this, "grad");
  if (node_->grad.empty()) return std::vector<double>(node_->value.size(), 0.0);
  return node_->grad;
}

bool Tensor::has_grad() const { return defined() && !node_->grad.empty(); }

std::span<double> Tensor::mutable_grad() {
  require(*this, "mutable_grad");
  return node_->grad_buffer();
}

void Tensor::zero_grad() {
  if (defined()) node_->grad.clear();
}

Tensor Tensor::detach() const {
  require(*this, "detach");
  return from(node_->shape, node_->value);
}

// ---------------------------------------------------------------------------

Tape Tape::record(const Tensor& root) {
  require(root, "Tape::record");
  Tape tape;
  tape.root_ = root.node();
  // Iterative post-order DFS: a node is emitted after all of its parents.
  std::unordered_set<const Node*> seen;
  std::vector<std::pair<NodePtr, std::size_t>> stack;
  if (root.requires_grad()) {
    stack.emplace_back(root.node(), 0);
    seen.insert(root.node().get());
  }
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      NodePtr parent = node->parents[next++];
      if (parent->requires_grad && seen.insert(parent.get()).second) {
        stack.emplace_back(std::move(parent), 0);
      }
    } else {
      tape.order_.push_back(node);
      stack.pop_back();
    }
  }
  return tape;
}

void Tape::backward() {
  if (order_.empty()) throw std::logic_error("backward: nothing recorded on the tape");
  for (const auto& n : order_) {
    if (n->consumed) {
      throw std::logic_error("backward called twice on the same graph; run a new forward pass");
    }
  }
  auto& g = root_->grad_buffer();
  std::fill(g.begin(), g.end(), 1.0);
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    Node& n = **it;
    if (n.backward) {
      n.grad_buffer();
      n.backward(n);
    }
  }
  for (const auto& n : order_) {
    if (n->backward) {
      n->consumed = true;
      n->backward = nullptr;
      n->parents.clear();
      n->grad.clear();
      n->grad.shrink_to_fit();
    }
  }
  // The root keeps d(root)/d(root) for inspection.
  root_->grad.assign(root_->value.size(), 1.0);
  root_->consumed = true;
}

void backward(const Tensor& loss) {
  require(loss, "backward");
  if (loss.numel() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " + to_string(loss.shape()));
  }
  if (loss.node()->consumed) {
    throw std::logic_error("backward called twice on the same graph; run a new forward pass");
  }
  if (!loss.requires_grad()) {
    throw std::logic_error("backward: loss does not depend on any tensor requiring grad");
  }
  Tape::record(loss).backward();
}

// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Mul, "mul"); }

Tensor scale(const Tensor& x, double factor) {
  return unary(
      x, "scale", [factor](double v) { return v * factor; },
      [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double value) {
  return unary(
      x, "add_scalar", [value](double v) { return v + value; },
      [](double, double) { return 1.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x, "sigmoid",
      [](double v) {
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor tanh(const Tensor& x) {
  return unary(
      x, "tanh", [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor abs(const Tensor& x) {
  return unary(
      x, "abs", [](double v) { return std::fabs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor exp(const Tensor& x) {
  return unary(
      x, "exp", [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor inv_sqrt_or_zero(const Tensor& x) {
  return unary(
      x, "inv_sqrt_or_zero", [](double v) { return v > 0.0 ? 1.0 / std::sqrt(v) : 0.0; },
      [](double v, double y) { return v > 0.0 ? -0.5 * y / v : 0.0; });
}

// ---------------------------------------------------------------------------

Tensor sum(const Tensor& x) {
  require(x, "sum");
  const auto& xv = x.node()->value;
  double s = std::accumulate(xv.begin(), xv.end(), 0.0);
  return make_result({1}, {s}, {x.node()}, [](Node& self) {
    auto& gx = self.parents[0]->grad_buffer();
    for (auto& g : gx) g += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  require(x, "mean");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor sum_axis(const Tensor& x, std::size_t axis) {
  require(x, "sum_axis");
  check_axis(x, axis, "sum_axis");
  AxisView v = axis_view(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape[axis] = 1;
  const auto& xv = x.node()->value;
  std::vector<double> out(v.outer * v.inner, 0.0);
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t k = 0; k < v.extent; ++k)
      for (std::size_t i = 0; i < v.inner; ++i)
        out[o * v.inner + i] += xv[(o * v.extent + k) * v.inner + i];
  return make_result(out_shape, std::move(out), {x.node()}, [v](Node& self) {
    auto& gx = self.parents[0]->grad_buffer();
    for (std::size_t o = 0; o < v.outer; ++o)
      for (std::size_t k = 0; k < v.extent; ++k)
        for (std::size_t i = 0; i < v.inner; ++i)
          gx[(o * v.extent + k) * v.inner + i] += self.grad[o * v.inner + i];
  });
}

Tensor mean_axis(const Tensor& x, std::size_t axis) {
  check_axis(x, axis, "mean_axis");
  return scale(sum_axis(x, axis), 1.0 / static_cast<double>(x.dim(axis)));
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  require(x, "softmax");
  check_axis(x, axis, "softmax");
  AxisView v = axis_view(x.shape(), axis);
  const auto& xv = x.node()->value;
  std::vector<double> out(xv.size());
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t i = 0; i < v.inner; ++i) {
      auto at = [&](std::size_t k) { return (o * v.extent + k) * v.inner + i; };
      double mx = xv[at(0)];
      for (std::size_t k = 1; k < v.extent; ++k) mx = std::max(mx, xv[at(k)]);
      double z = 0.0;
      for (std::size_t k = 0; k < v.extent; ++k) z += (out[at(k)] = std::exp(xv[at(k)] - mx));
      for (std::size_t k = 0; k < v.extent; ++k) out[at(k)] /= z;
    }
  }
  return make_result(x.shape(), std::move(out), {x.node()}, [v](Node& self) {
    auto& gx = self.parents[0]->grad_buffer();
    const auto& y = self.value;
    const auto& g = self.grad;
    for (std::size_t o = 0; o < v.outer; ++o) {
      for (std::size_t i = 0; i < v.inner; ++i) {
        auto at = [&](std::size_t k) { return (o * v.extent + k) * v.inner + i; };
        double dot = 0.0;
        for (std::size_t k = 0; k < v.extent; ++k) dot += g[at(k)] * y[at(k)];
        for (std::size_t k = 0; k < v.extent; ++k) gx[at(k)] += y[at(k)] * (g[at(k)] - dot);
      }
    }
  });
}

// ---------------------------------------------------------------------------

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  require(x, "slice");
  check_axis(x, axis, "slice");
  if (length == 0 || start + length > x.dim(axis)) {
    throw ShapeError("slice [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") out of range on axis " + std::to_string(axis) + " of shape " +
                     to_string(x.shape()));
  }
  AxisView v = axis_view(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  const auto& xv = x.node()->value;
  std::vector<double> out(v.outer * length * v.inner);
  std::size_t chunk = length * v.inner;
  for (std::size_t o = 0; o < v.outer; ++o) {
    auto src = xv.begin() + static_cast<std::ptrdiff_t>((o * v.extent + start) * v.inner);
    std::copy(src, src + static_cast<std::ptrdiff_t>(chunk),
              out.begin() + static_cast<std::ptrdiff_t>(o * chunk));
  }
  return make_result(out_shape, std::move(out), {x.node()}, [v, start, chunk](Node& self) {
    auto& gx = self.parents[0]->grad_buffer();
    for (std::size_t o = 0; o < v.outer; ++o) {
      std::size_t base = (o * v.extent + start) * v.inner;
      for (std::size_t i = 0; i < chunk; ++i) gx[base + i] += self.grad[o * chunk + i];
    }
  });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  for (const auto& p : parts) require(p, "concat");
  const Shape& first = parts.front().shape();
  check_axis(parts.front(), axis, "concat");
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d) ok = d == axis || s[d] == first[d];
    if (!ok) {
      throw ShapeError("concat: shape " + to_string(s) + " incompatible with " +
                       to_string(first) + " along axis " + std::to_string(axis));
    }
    out_shape[axis] += s[axis];
  }
  AxisView v = axis_view(out_shape, axis);
  std::vector<double> out(shape_numel(out_shape));
  std::vector<NodePtr> inputs;
  std::vector<std::size_t> offsets, lengths;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    std::size_t len = p.dim(axis);
    const auto& pv = p.node()->value;
    for (std::size_t o = 0; o < v.outer; ++o) {
      std::copy_n(pv.begin() + static_cast<std::ptrdiff_t>(o * len * v.inner), len * v.inner,
                  out.begin() + static_cast<std::ptrdiff_t>((o * v.extent + offset) * v.inner));
    }
    inputs.push_back(p.node());
    offsets.push_back(offset);
    lengths.push_back(len);
    offset += len;
  }
  return make_result(out_shape, std::move(out), std::move(inputs),
                     [v, offsets, lengths](Node& self) {
                       for (std::size_t k = 0; k < self.parents.size(); ++k) {
                         Node& p = *self.parents[k];
                         if (!p.requires_grad) continue;
                         auto& gp = p.grad_buffer();
                         std::size_t chunk = lengths[k] * v.inner;
                         for (std::size_t o = 0; o < v.outer; ++o) {
                           std::size_t src = (o * v.extent + offsets[k]) * v.inner;
                           for (std::size_t i = 0; i < chunk; ++i) {
                             gp[o * chunk + i] += self.grad[src + i];
                           }
                         }
                       }
                     });
}

Tensor reshape(const Tensor& x, Shape shape) {
  require(x, "reshape");
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  }
  return make_result(std::move(shape), x.node()->value, {x.node()}, [](Node& self) {
    auto& gx = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
  });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& order) {
  require(x, "permute");
  const Shape& s = x.shape();
  std::size_t r = s.size();
  std::vector<bool> used(r, false);
  bool ok = order.size() == r;
  for (std::size_t i = 0; ok && i < r; ++i) {
    ok = order[i] < r && !used[order[i]];
    if (ok) used[order[i]] = true;
  }
  if (!ok) throw ShapeError("permute: invalid axis order for shape " + to_string(s));

  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = s[order[i]];
  auto in_strides = row_major_strides(s);
  // Source offset for each output element, computed once and reused backward.
  std::vector<std::size_t> src_stride(r);
  for (std::size_t i = 0; i < r; ++i) src_stride[i] = in_strides[order[i]];
  std::size_t total = x.numel();
  auto index = std::make_shared<std::vector<std::size_t>>(total);
  std::vector<std::size_t> idx(r, 0);
  std::size_t src = 0;
  for (std::size_t i = 0; i < total; ++i) {
    (*index)[i] = src;
    for (std::size_t d = r; d-- > 0;) {
      if (++idx[d] < out_shape[d]) {
        src += src_stride[d];
        break;
      }
      src -= src_stride[d] * (out_shape[d] - 1);
      idx[d] = 0;
    }
  }
  const auto& xv = x.node()->value;
  std::vector<double> out(total);
  for (std::size_t i = 0; i < total; ++i) out[i] = xv[(*index)[i]];
  return make_result(out_shape, std::move(out), {x.node()}, [index](Node& self) {
    auto& gx = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < index->size(); ++i) gx[(*index)[i]] += self.grad[i];
  });
}

Tensor transpose(const Tensor& x) {
  require(x, "transpose");
  if (x.rank() != 2) throw ShapeError("transpose: expected rank 2, got " + to_string(x.shape()));
  return permute(x, {1, 0});
}

// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& x, const Tensor& w) {
  require(x, "matmul");
  require(w, "matmul");
  if (w.rank() != 2 || x.shape().back() != w.dim(0)) {
    throw ShapeError("matmul: cannot contract " + to_string(x.shape()) + " with " +
                     to_string(w.shape()));
  }
  std::size_t k = w.dim(0), m = w.dim(1), rows = x.numel() / k;
  Shape out_shape = x.shape();
  out_shape.back() = m;
  std::vector<double> out(rows * m, 0.0);
  gemm_acc(MapC(x.node()->value.data(), rows, k), MapC(w.node()->value.data(), k, m),
           Map(out.data(), rows, m));
  return make_result(out_shape, std::move(out), {x.node(), w.node()},
                     [rows, k, m](Node& self) {
                       Node& nx = *self.parents[0];
                       Node& nw = *self.parents[1];
                       MapC g(self.grad.data(), rows, m);
                       if (nx.requires_grad) {
                         Map(nx.grad_buffer().data(), rows, k).noalias() +=
                             g * MapC(nw.value.data(), k, m).transpose();
                       }
                       if (nw.requires_grad) {
                         Map(nw.grad_buffer().data(), k, m).noalias() +=
                             MapC(nx.value.data(), rows, k).transpose() * g;
                       }
                     });
}

Tensor matmul_axis(const Tensor& m, const Tensor& x, std::size_t axis) {
  require(m, "matmul_axis");
  require(x, "matmul_axis");
  check_axis(x, axis, "matmul_axis");
  if (m.rank() != 2 || m.dim(1) != x.dim(axis)) {
    throw ShapeError("matmul_axis: matrix " + to_string(m.shape()) + " does not match axis " +
                     std::to_string(axis) + " of " + to_string(x.shape()));
  }
  AxisView v = axis_view(x.shape(), axis);
  std::size_t p = m.dim(0), q = m.dim(1);
  Shape out_shape = x.shape();
  out_shape[axis] = p;
  std::vector<double> out(v.outer * p * v.inner, 0.0);
  MapC mm(m.node()->value.data(), p, q);
  const double* xv = x.node()->value.data();
  for (std::size_t o = 0; o < v.outer; ++o) {
    gemm_acc(mm, MapC(xv + o * q * v.inner, q, v.inner), Map(out.data() + o * p * v.inner, p, v.inner));
  }
  return make_result(out_shape, std::move(out), {m.node(), x.node()}, [v, p, q](Node& self) {
    Node& nm = *self.parents[0];
    Node& nx = *self.parents[1];
    for (std::size_t o = 0; o < v.outer; ++o) {
      MapC g(self.grad.data() + o * p * v.inner, p, v.inner);
      if (nx.requires_grad) {
        Map(nx.grad_buffer().data() + o * q * v.inner, q, v.inner).noalias() +=
            MapC(nm.value.data(), p, q).transpose() * g;
      }
      if (nm.requires_grad) {
        Map(nm.grad_buffer().data(), p, q).noalias() +=
            g * MapC(nx.value.data() + o * q * v.inner, q, v.inner).transpose();
      }
    }
  });
}

Tensor temporal_conv(const Tensor& x, const Tensor& w) {
  require(x, "temporal_conv");
  require(w, "temporal_conv");
  if (x.rank() != 4 || w.rank() != 3 || w.dim(1) != x.dim(3)) {
    throw ShapeError("temporal_conv: input " + to_string(x.shape()) +
                     " incompatible with kernel " + to_string(w.shape()));
  }
  std::size_t batch = x.dim(0), steps = x.dim(1), nodes = x.dim(2), cin = x.dim(3);
  std::size_t kt = w.dim(0), cout = w.dim(2);
  if (steps < kt) {
    throw ShapeError("temporal_conv: " + std::to_string(steps) +
                     " time steps is shorter than kernel " + std::to_string(kt));
  }
  std::size_t tout = steps - kt + 1;
  std::size_t rows = tout * nodes;  // rows of one shifted window, contiguous in memory
  std::vector<double> out(batch * rows * cout, 0.0);
  const double* xv = x.node()->value.data();
  const double* wv = w.node()->value.data();
  for (std::size_t b = 0; b < batch; ++b) {
    Map yb(out.data() + b * rows * cout, rows, cout);
    for (std::size_t k = 0; k < kt; ++k) {
      const double* xs = xv + (b * steps + k) * nodes * cin;
      yb.noalias() += MapC(xs, rows, cin) * MapC(wv + k * cin * cout, cin, cout);
    }
  }
  return make_result(
      {batch, tout, nodes, cout}, std::move(out), {x.node(), w.node()},
      [=](Node& self) {
        Node& nx = *self.parents[0];
        Node& nw = *self.parents[1];
        for (std::size_t b = 0; b < batch; ++b) {
          MapC g(self.grad.data() + b * rows * cout, rows, cout);
          for (std::size_t k = 0; k < kt; ++k) {
            std::size_t xoff = (b * steps + k) * nodes * cin;
            if (nx.requires_grad) {
              Map(nx.grad_buffer().data() + xoff, rows, cin).noalias() +=
                  g * MapC(nw.value.data() + k * cin * cout, cin, cout).transpose();
            }
            if (nw.requires_grad) {
              Map(nw.grad_buffer().data() + k * cin * cout, cin, cout).noalias() +=
                  MapC(nx.value.data() + xoff, rows, cin).transpose() * g;
            }
          }
        }
      });
}

Tensor contract(const Tensor& a, const Tensor& b,
                const std::vector<std::pair<std::size_t, std::size_t>>& pairs) {
  require(a, "contract");
  require(b, "contract");
  std::vector<bool> a_paired(a.rank(), false), b_paired(b.rank(), false);
  std::size_t inner = 1;
  for (auto [i, j] : pairs) {
    if (i >= a.rank() || j >= b.rank() || a_paired[i] || b_paired[j] || a.dim(i) != b.dim(j)) {
      throw ShapeError("contract: cannot pair axis " + std::to_string(i) + " of " +
                       to_string(a.shape()) + " with axis " + std::to_string(j) + " of " +
                       to_string(b.shape()));
    }
    a_paired[i] = b_paired[j] = true;
    inner *= a.dim(i);
  }
  std::vector<std::size_t> a_order, b_order;
  Shape out_shape;
  std::size_t a_free = 1, b_free = 1;
  for (std::size_t i = 0; i < a.rank(); ++i) {
    if (!a_paired[i]) {
      a_order.push_back(i);
      out_shape.push_back(a.dim(i));
      a_free *= a.dim(i);
    }
  }
  for (auto [i, j] : pairs) {
    a_order.push_back(i);
    b_order.push_back(j);
  }
  for (std::size_t j = 0; j < b.rank(); ++j) {
    if (!b_paired[j]) {
      b_order.push_back(j);
      out_shape.push_back(b.dim(j));
      b_free *= b.dim(j);
    }
  }
  if (out_shape.empty()) out_shape.push_back(1);

  auto is_identity = [](const std::vector<std::size_t>& o) {
    for (std::size_t i = 0; i < o.size(); ++i)
      if (o[i] != i) return false;
    return true;
  };
  Tensor ap = is_identity(a_order) ? a : permute(a, a_order);
  Tensor bp = is_identity(b_order) ? b : permute(b, b_order);
  Tensor prod = matmul(reshape(ap, {a_free, inner}), reshape(bp, {inner, b_free}));
  return reshape(prod, out_shape);
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

}  // namespace astgcn
