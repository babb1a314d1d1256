#pragma once

// Dense float64 tensors with reverse-mode automatic differentiation.
//
// A Tensor is a cheap handle to an immutable graph node. Operations on tensors
// that require gradients record their inputs and a local backward rule; calling
// backward() on a scalar walks the recorded graph in reverse topological order
// and returns a gradient map for every leaf that requires a gradient.
//
// Broadcasting is deliberately narrow: an elementwise operand may either match
// the other operand's shape exactly, drop its leading extent (one value block
// reused for every batch item), or be a single-element tensor.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "flowpose/error.hpp"

namespace flowpose {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

class Tensor;

/// Grants a backward rule access to its inputs' gradient buffers. Returns
/// nullptr for inputs that do not need a gradient.
class GradientSink {
 public:
  virtual ~GradientSink() = default;
  virtual double* operator()(std::size_t input) = 0;
};

using BackwardFn = std::function<void(std::span<const double> grad_out, GradientSink& sink)>;

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;
  const char* op = "leaf";
};

}  // namespace detail

class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  static Tensor vector(std::vector<double> values);

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return node_->data.size(); }

  std::span<const double> data() const { return node_->data; }
  std::vector<double> values() const { return node_->data; }
  double item() const;
  double at(std::size_t flat_index) const { return node_->data.at(flat_index); }

  /// Writable storage. Only valid on leaves; used by optimizers and loaders
  /// between graph evaluations.
  std::span<double> mutable_data();

  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->inputs.empty(); }
  const char* op_name() const { return node_->op; }

  /// A leaf holding a copy of the values, cut from the graph.
  Tensor detach() const;

  const detail::Node* id() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  friend Tensor make_result(const char*, Shape, std::vector<double>, const std::vector<Tensor>&, BackwardFn);

  std::shared_ptr<detail::Node> node_;
};

/// Builds an op output. When no input requires a gradient (or gradient
/// recording is disabled) the result is a constant leaf and `backward` is
/// dropped. Throws DomainError if any output value is non-finite.
Tensor make_result(const char* op, Shape shape, std::vector<double> data, const std::vector<Tensor>& inputs,
                   BackwardFn backward);

/// Disables graph recording on the current thread while alive.
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

// Elementwise arithmetic.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& x);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);
Tensor square(const Tensor& x);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& x) { return neg(x); }
inline Tensor operator*(double s, const Tensor& x) { return scale(x, s); }
inline Tensor operator*(const Tensor& x, double s) { return scale(x, s); }

// Pointwise nonlinearities.
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

/// Softmax over the last extent.
Tensor softmax(const Tensor& x);

// Reductions.
Tensor sum(const Tensor& x);
/// Sums over one axis, removing it.
Tensor sum(const Tensor& x, std::size_t axis);
Tensor mean(const Tensor& x);
Tensor squared_norm(const Tensor& x);

/// Matrix product over the last two extents. Supports [m,k]x[k,n],
/// [B,m,k]x[B,k,n], [B,m,k]x[k,n] and [m,k]x[B,k,n].
Tensor matmul(const Tensor& a, const Tensor& b);
/// Swaps the last two extents.
Tensor transpose(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);

/// Views x as rows over its leading extent and gathers rows by index; an
/// index of -1 produces a zero row. Result shape is [index.size(), rest...].
Tensor gather_rows(const Tensor& x, std::span<const long> index);

/// Inverse of a square matrix.
Tensor inverse(const Tensor& x);

/// Gradients of one backward pass, keyed by leaf identity.
class Gradients {
 public:
  /// Gradient for `leaf`; zeros of the leaf's shape when it was unreachable.
  Tensor of(const Tensor& leaf) const;
  std::span<const double> raw(const Tensor& leaf) const;
  bool contains(const Tensor& leaf) const;
  std::size_t size() const { return grads_.size(); }

 private:
  friend Gradients backward(const Tensor& root);
  std::unordered_map<const detail::Node*, std::vector<double>> grads_;
};

/// Reverse-mode sweep from a scalar root. Throws ShapeError on non-scalar roots.
Gradients backward(const Tensor& root);

}  // namespace flowpose
