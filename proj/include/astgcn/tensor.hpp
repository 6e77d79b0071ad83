#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace astgcn {

using Shape = std::vector<std::size_t>;

std::string to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class Tensor;

namespace detail {

struct Node;
using NodePtr = std::shared_ptr<Node>;

// Accumulates the gradients of `self`'s parents from `self.grad`.
using BackwardFn = std::function<void(Node& self)>;

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  bool consumed = false;     // set once backward has run through this node
  std::vector<NodePtr> parents;
  BackwardFn backward;

  std::vector<double>& grad_buffer();
};

}  // namespace detail

// Dense row-major array of doubles. Copies of a Tensor share the same node;
// the operations below build the computation graph define-by-run whenever
// any operand requires gradients.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor identity(std::size_t n);
  static Tensor uniform(Shape shape, double lo, double hi, std::mt19937_64& rng,
                        bool requires_grad = false);
  static Tensor normal(Shape shape, double mean, double stddev, std::mt19937_64& rng,
                       bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> values() const;
  // Direct write access, intended for leaves (parameters, inputs).
  std::span<double> mutable_values();
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool is_leaf() const;

  // Zeros when nothing has been accumulated yet.
  std::vector<double> grad() const;
  bool has_grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  // New leaf holding a copy of the values, detached from any graph.
  Tensor detach() const;

  const detail::NodePtr& node() const { return node_; }
  explicit Tensor(detail::NodePtr node) : node_(std::move(node)) {}

 private:
  detail::NodePtr node_;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Nodes reachable from a root, in topological order (inputs first).
class Tape {
 public:
  static Tape record(const Tensor& root);

  std::size_t size() const { return order_.size(); }
  const std::vector<detail::NodePtr>& nodes() const { return order_; }

  // Seeds d(root)/d(root) = 1 and runs every node's local gradient once, in
  // reverse order. Interior nodes are released afterwards.
  void backward();

 private:
  detail::NodePtr root_;
  std::vector<detail::NodePtr> order_;
};

// Throws if `loss` is not a scalar, does not depend on anything that requires
// gradients, or has already been back-propagated.
void backward(const Tensor& loss);

// While alive on this thread, op results record no graph edges.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// ---- elementwise (numpy-style broadcasting for binary ops) ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);
Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor exp(const Tensor& x);
// x^(-1/2) for x > 0 and 0 elsewhere; used for degree normalization.
Tensor inv_sqrt_or_zero(const Tensor& x);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

// ---- reductions ----
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum_axis(const Tensor& x, std::size_t axis);   // keeps the axis with extent 1
Tensor mean_axis(const Tensor& x, std::size_t axis);  // keeps the axis with extent 1
Tensor softmax(const Tensor& x, std::size_t axis);

// ---- structural ----
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& order);
Tensor transpose(const Tensor& x);  // rank 2 only

// ---- contractions ----
// x[..., K] · w[K, M] -> [..., M]
Tensor matmul(const Tensor& x, const Tensor& w);
// y[..., p, ...] = sum_q m[p, q] x[..., q, ...] along `axis` of x.
Tensor matmul_axis(const Tensor& m, const Tensor& x, std::size_t axis);
// Valid 1-D convolution along axis 1 of x[B, T, N, C] with w[K, C, O],
// giving [B, T-K+1, N, O].
Tensor temporal_conv(const Tensor& x, const Tensor& w);
// General tensordot: each pair (i, j) sums axis i of a against axis j of b.
// Result axes are the free axes of a followed by the free axes of b.
Tensor contract(const Tensor& a, const Tensor& b,
                const std::vector<std::pair<std::size_t, std::size_t>>& pairs);

}  // namespace astgcn
