#include "flowpose/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace flowpose {

namespace {

thread_local bool g_grad_enabled = true;

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMatrix = Eigen::Map<RowMatrix>;
using ConstMapMatrix = Eigen::Map<const RowMatrix>;

[[noreturn]] void throw_shape(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

// Elementwise operands: identical shapes, one side missing the leading extent,
// or one side a single element. Returns the output shape.
Shape broadcast_shape(const char* op, const Shape& a, const Shape& b) {
  if (a == b) return a;
  const std::size_t na = shape_numel(a);
  const std::size_t nb = shape_numel(b);
  if (nb == 1) return a;
  if (na == 1) return b;
  if (a.size() == b.size() + 1 && std::equal(b.begin(), b.end(), a.begin() + 1)) return a;
  if (b.size() == a.size() + 1 && std::equal(a.begin(), a.end(), b.begin() + 1)) return b;
  throw_shape(op, a, b);
}

template <typename Fwd, typename Bwd>
Tensor binary_op(const char* op, const Tensor& a, const Tensor& b, Fwd fwd, Bwd bwd) {
  Shape out_shape = broadcast_shape(op, a.shape(), b.shape());
  const std::size_t n = shape_numel(out_shape);
  const std::size_t na = a.numel();
  const std::size_t nb = b.numel();
  auto da = a.data();
  auto db = b.data();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(da[i % na], db[i % nb]);
  return make_result(op, std::move(out_shape), std::move(out), {a, b},
                     [a, b, n, na, nb, bwd](std::span<const double> g, GradientSink& sink) {
                       double* ga = sink(0);
                       double* gb = sink(1);
                       auto xa = a.data();
                       auto xb = b.data();
                       for (std::size_t i = 0; i < n; ++i) {
                         double dfa = 0.0, dfb = 0.0;
                         bwd(xa[i % na], xb[i % nb], dfa, dfb);
                         if (ga) ga[i % na] += g[i] * dfa;
                         if (gb) gb[i % nb] += g[i] * dfb;
                       }
                     });
}

template <typename Fwd, typename Deriv>
Tensor unary_op(const char* op, const Tensor& x, Fwd fwd, Deriv deriv) {
  auto dx = x.data();
  std::vector<double> out(dx.size());
  for (std::size_t i = 0; i < dx.size(); ++i) out[i] = fwd(dx[i]);
  // deriv(x, y) receives the input and the output value.
  auto shared_out = std::make_shared<std::vector<double>>(out);
  return make_result(op, x.shape(), std::move(out), {x},
                     [x, shared_out, deriv](std::span<const double> g, GradientSink& sink) {
                       double* gx = sink(0);
                       if (!gx) return;
                       auto xv = x.data();
                       const auto& y = *shared_out;
                       for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * deriv(xv[i], y[i]);
                     });
}

struct MatmulDims {
  std::size_t batch = 1, m = 0, k = 0, n = 0;
  bool a_batched = false, b_batched = false;
};

MatmulDims matmul_dims(const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() < 2 || sa.size() > 3 || sb.size() < 2 || sb.size() > 3) throw_shape("matmul", sa, sb);
  MatmulDims d;
  d.a_batched = sa.size() == 3;
  d.b_batched = sb.size() == 3;
  d.m = sa[sa.size() - 2];
  d.k = sa[sa.size() - 1];
  d.n = sb[sb.size() - 1];
  if (sb[sb.size() - 2] != d.k) throw_shape("matmul", sa, sb);
  if (d.a_batched && d.b_batched && sa[0] != sb[0]) throw_shape("matmul", sa, sb);
  d.batch = d.a_batched ? sa[0] : (d.b_batched ? sb[0] : 1);
  return d;
}

}  // namespace

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

Tensor::Tensor() : Tensor(Shape{}, std::vector<double>{0.0}) {}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad) {
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("tensor: shape " + shape_str(shape) + " does not hold " + std::to_string(data.size()) +
                     " values");
  }
  for (auto e : shape) {
    if (e == 0) throw ShapeError("tensor: zero extent in shape " + shape_str(shape));
  }
  node_ = std::make_shared<detail::Node>();
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double value) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, {value}); }

Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor(Shape{n}, std::move(values));
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) throw ShapeError("tensor: axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
  return node_->shape[axis];
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item: tensor of shape " + shape_str(shape()) + " is not a scalar");
  return node_->data[0];
}

std::span<double> Tensor::mutable_data() {
  if (!is_leaf()) throw Error(std::string("mutable_data: tensor produced by '") + node_->op + "' is not a leaf");
  return node_->data;
}

Tensor Tensor::detach() const { return Tensor(shape(), node_->data, false); }

Tensor make_result(const char* op, Shape shape, std::vector<double> data, const std::vector<Tensor>& inputs,
                   BackwardFn backward) {
  for (double v : data) {
    if (!std::isfinite(v)) throw DomainError(std::string(op) + ": non-finite result");
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (const auto& in : inputs) node->inputs.push_back(in.node());
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op("add", a, b, [](double x, double y) { return x + y; },
                   [](double, double, double& da, double& db) { da = 1.0; db = 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op("subtract", a, b, [](double x, double y) { return x - y; },
                   [](double, double, double& da, double& db) { da = 1.0; db = -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op("multiply", a, b, [](double x, double y) { return x * y; },
                   [](double x, double y, double& da, double& db) { da = y; db = x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  for (double v : b.data()) {
    if (v == 0.0) throw DomainError("divide: zero divisor");
  }
  return binary_op("divide", a, b, [](double x, double y) { return x / y; },
                   [](double x, double y, double& da, double& db) {
                     da = 1.0 / y;
                     db = -x / (y * y);
                   });
}

Tensor neg(const Tensor& x) {
  return unary_op("negate", x, [](double v) { return -v; }, [](double, double) { return -1.0; });
}

Tensor scale(const Tensor& x, double factor) {
  return unary_op("scale", x, [factor](double v) { return factor * v; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double value) {
  return unary_op("add_scalar", x, [value](double v) { return v + value; }, [](double, double) { return 1.0; });
}

Tensor square(const Tensor& x) {
  return unary_op("square", x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor exp(const Tensor& x) {
  return unary_op("exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  for (double v : x.data()) {
    if (!(v > 0.0)) throw DomainError("log: non-positive argument " + std::to_string(v));
  }
  return unary_op("log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor tanh(const Tensor& x) {
  return unary_op("tanh", x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor relu(const Tensor& x) {
  return unary_op("relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
                  [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary_op(
      "sigmoid", x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor softmax(const Tensor& x) {
  if (x.rank() == 0) throw ShapeError("softmax: scalar input");
  const std::size_t cols = x.shape().back();
  const std::size_t rows = x.numel() / cols;
  auto in = x.data();
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* src = in.data() + r * cols;
    double* dst = out.data() + r * cols;
    const double mx = *std::max_element(src, src + cols);
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      dst[c] = std::exp(src[c] - mx);
      total += dst[c];
    }
    for (std::size_t c = 0; c < cols; ++c) dst[c] /= total;
  }
  auto y = std::make_shared<std::vector<double>>(out);
  return make_result("softmax", x.shape(), std::move(out), {x},
                     [y, rows, cols](std::span<const double> g, GradientSink& sink) {
                       double* gx = sink(0);
                       if (!gx) return;
                       for (std::size_t r = 0; r < rows; ++r) {
                         const double* yr = y->data() + r * cols;
                         const double* gr = g.data() + r * cols;
                         double dot = 0.0;
                         for (std::size_t c = 0; c < cols; ++c) dot += gr[c] * yr[c];
                         for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += yr[c] * (gr[c] - dot);
                       }
                     });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  const std::size_t n = x.numel();
  return make_result("sum", Shape{}, {total}, {x}, [n](std::span<const double> g, GradientSink& sink) {
    double* gx = sink(0);
    if (!gx) return;
    for (std::size_t i = 0; i < n; ++i) gx[i] += g[0];
  });
}

Tensor sum(const Tensor& x, std::size_t axis) {
  const Shape& s = x.shape();
  if (axis >= s.size()) throw ShapeError("sum: axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  std::size_t pre = 1, post = 1;
  for (std::size_t i = 0; i < axis; ++i) pre *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) post *= s[i];
  const std::size_t len = s[axis];
  Shape out_shape;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i != axis) out_shape.push_back(s[i]);
  }
  auto in = x.data();
  std::vector<double> out(pre * post, 0.0);
  for (std::size_t p = 0; p < pre; ++p) {
    for (std::size_t a = 0; a < len; ++a) {
      const double* src = in.data() + (p * len + a) * post;
      double* dst = out.data() + p * post;
      for (std::size_t q = 0; q < post; ++q) dst[q] += src[q];
    }
  }
  return make_result("sum_axis", std::move(out_shape), std::move(out), {x},
                     [pre, post, len](std::span<const double> g, GradientSink& sink) {
                       double* gx = sink(0);
                       if (!gx) return;
                       for (std::size_t p = 0; p < pre; ++p) {
                         for (std::size_t a = 0; a < len; ++a) {
                           double* dst = gx + (p * len + a) * post;
                           const double* src = g.data() + p * post;
                           for (std::size_t q = 0; q < post; ++q) dst[q] += src[q];
                         }
                       }
                     });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor squared_norm(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v * v;
  return make_result("squared_norm", Shape{}, {total}, {x}, [x](std::span<const double> g, GradientSink& sink) {
    double* gx = sink(0);
    if (!gx) return;
    auto v = x.data();
    for (std::size_t i = 0; i < v.size(); ++i) gx[i] += 2.0 * v[i] * g[0];
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  const MatmulDims d = matmul_dims(a, b);
  Shape out_shape = (d.a_batched || d.b_batched) ? Shape{d.batch, d.m, d.n} : Shape{d.m, d.n};
  std::vector<double> out(d.batch * d.m * d.n);
  const std::size_t sa = d.a_batched ? d.m * d.k : 0;
  const std::size_t sb = d.b_batched ? d.k * d.n : 0;
  if (!d.a_batched && d.b_batched) {
    // One left matrix against many right matrices: a single wide product.
    ConstMapMatrix A(a.data().data(), d.m, d.k);
    for (std::size_t i = 0; i < d.batch; ++i) {
      MapMatrix(out.data() + i * d.m * d.n, d.m, d.n).noalias() =
          A * ConstMapMatrix(b.data().data() + i * sb, d.k, d.n);
    }
  } else if (d.a_batched && !d.b_batched) {
    ConstMapMatrix A(a.data().data(), d.batch * d.m, d.k);
    MapMatrix(out.data(), d.batch * d.m, d.n).noalias() = A * ConstMapMatrix(b.data().data(), d.k, d.n);
  } else {
    for (std::size_t i = 0; i < d.batch; ++i) {
      MapMatrix(out.data() + i * d.m * d.n, d.m, d.n).noalias() =
          ConstMapMatrix(a.data().data() + i * sa, d.m, d.k) * ConstMapMatrix(b.data().data() + i * sb, d.k, d.n);
    }
  }
  return make_result("matmul", std::move(out_shape), std::move(out), {a, b},
                     [a, b, d, sa, sb](std::span<const double> g, GradientSink& sink) {
                       double* ga = sink(0);
                       double* gb = sink(1);
                       const std::size_t sg = d.m * d.n;
                       if (ga && !d.a_batched && !d.b_batched) {
                         MapMatrix(ga, d.m, d.k).noalias() +=
                             ConstMapMatrix(g.data(), d.m, d.n) * ConstMapMatrix(b.data().data(), d.k, d.n).transpose();
                       } else if (ga && d.a_batched && !d.b_batched) {
                         MapMatrix(ga, d.batch * d.m, d.k).noalias() +=
                             ConstMapMatrix(g.data(), d.batch * d.m, d.n) *
                             ConstMapMatrix(b.data().data(), d.k, d.n).transpose();
                       } else if (ga) {
                         for (std::size_t i = 0; i < d.batch; ++i) {
                           MapMatrix(ga + i * sa, d.m, d.k).noalias() +=
                               ConstMapMatrix(g.data() + i * sg, d.m, d.n) *
                               ConstMapMatrix(b.data().data() + i * sb, d.k, d.n).transpose();
                         }
                       }
                       if (gb && d.a_batched && !d.b_batched) {
                         MapMatrix(gb, d.k, d.n).noalias() +=
                             ConstMapMatrix(a.data().data(), d.batch * d.m, d.k).transpose() *
                             ConstMapMatrix(g.data(), d.batch * d.m, d.n);
                       } else if (gb) {
                         for (std::size_t i = 0; i < d.batch; ++i) {
                           MapMatrix(gb + i * sb, d.k, d.n).noalias() +=
                               ConstMapMatrix(a.data().data() + i * sa, d.m, d.k).transpose() *
                               ConstMapMatrix(g.data() + i * sg, d.m, d.n);
                         }
                       }
                     });
}

Tensor transpose(const Tensor& x) {
  const Shape& s = x.shape();
  if (s.size() < 2) throw ShapeError("transpose: need rank >= 2, got " + shape_str(s));
  const std::size_t r = s[s.size() - 2];
  const std::size_t c = s[s.size() - 1];
  const std::size_t batch = x.numel() / (r * c);
  Shape out_shape = s;
  std::swap(out_shape[s.size() - 2], out_shape[s.size() - 1]);
  auto in = x.data();
  std::vector<double> out(x.numel());
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) out[b * r * c + j * r + i] = in[b * r * c + i * c + j];
    }
  }
  return make_result("transpose", std::move(out_shape), std::move(out), {x},
                     [batch, r, c](std::span<const double> g, GradientSink& sink) {
                       double* gx = sink(0);
                       if (!gx) return;
                       for (std::size_t b = 0; b < batch; ++b) {
                         for (std::size_t i = 0; i < r; ++i) {
                           for (std::size_t j = 0; j < c; ++j) gx[b * r * c + i * c + j] += g[b * r * c + j * r + i];
                         }
                       }
                     });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) throw_shape("reshape", x.shape(), shape);
  return make_result("reshape", std::move(shape), x.values(), {x}, [](std::span<const double> g, GradientSink& sink) {
    double* gx = sink(0);
    if (!gx) return;
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concatenate: no inputs");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw ShapeError("concatenate: axis out of range for " + shape_str(first));
  std::size_t pre = 1, post = 1;
  for (std::size_t i = 0; i < axis; ++i) pre *= first[i];
  for (std::size_t i = axis + 1; i < first.size(); ++i) post *= first[i];
  std::vector<std::size_t> lens;
  std::size_t total_len = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != first.size()) throw_shape("concatenate", first, s);
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != first[i]) throw_shape("concatenate", first, s);
    }
    lens.push_back(s[axis]);
    total_len += s[axis];
  }
  Shape out_shape = first;
  out_shape[axis] = total_len;
  std::vector<double> out(pre * total_len * post);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto src = parts[k].data();
    for (std::size_t p = 0; p < pre; ++p) {
      std::copy_n(src.data() + p * lens[k] * post, lens[k] * post, out.data() + (p * total_len + offset) * post);
    }
    offset += lens[k];
  }
  return make_result("concatenate", std::move(out_shape), std::move(out), parts,
                     [lens, pre, post, total_len](std::span<const double> g, GradientSink& sink) {
                       std::size_t off = 0;
                       for (std::size_t k = 0; k < lens.size(); ++k) {
                         if (double* gk = sink(k)) {
                           for (std::size_t p = 0; p < pre; ++p) {
                             const double* src = g.data() + (p * total_len + off) * post;
                             double* dst = gk + p * lens[k] * post;
                             for (std::size_t q = 0; q < lens[k] * post; ++q) dst[q] += src[q];
                           }
                         }
                         off += lens[k];
                       }
                     });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& s = x.shape();
  if (axis >= s.size() || begin >= end || end > s[axis]) {
    throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) + ") on axis " +
                     std::to_string(axis) + " invalid for " + shape_str(s));
  }
  std::size_t pre = 1, post = 1;
  for (std::size_t i = 0; i < axis; ++i) pre *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) post *= s[i];
  const std::size_t len = s[axis];
  const std::size_t width = end - begin;
  Shape out_shape = s;
  out_shape[axis] = width;
  auto in = x.data();
  std::vector<double> out(pre * width * post);
  for (std::size_t p = 0; p < pre; ++p) {
    std::copy_n(in.data() + (p * len + begin) * post, width * post, out.data() + p * width * post);
  }
  return make_result("slice", std::move(out_shape), std::move(out), {x},
                     [pre, post, len, begin, width](std::span<const double> g, GradientSink& sink) {
                       double* gx = sink(0);
                       if (!gx) return;
                       for (std::size_t p = 0; p < pre; ++p) {
                         const double* src = g.data() + p * width * post;
                         double* dst = gx + (p * len + begin) * post;
                         for (std::size_t q = 0; q < width * post; ++q) dst[q] += src[q];
                       }
                     });
}

Tensor gather_rows(const Tensor& x, std::span<const long> index) {
  if (x.rank() == 0) throw ShapeError("gather_rows: scalar input");
  if (index.empty()) throw ShapeError("gather_rows: empty index");
  const std::size_t rows = x.dim(0);
  const std::size_t width = x.numel() / rows;
  for (long i : index) {
    if (i < -1 || i >= static_cast<long>(rows)) {
      throw ShapeError("gather_rows: index " + std::to_string(i) + " out of range for " + shape_str(x.shape()));
    }
  }
  Shape out_shape = x.shape();
  out_shape[0] = index.size();
  std::vector<long> idx(index.begin(), index.end());
  auto in = x.data();
  std::vector<double> out(idx.size() * width, 0.0);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= 0) std::copy_n(in.data() + idx[r] * width, width, out.data() + r * width);
  }
  return make_result("gather_rows", std::move(out_shape), std::move(out), {x},
                     [idx, width](std::span<const double> g, GradientSink& sink) {
                       double* gx = sink(0);
                       if (!gx) return;
                       for (std::size_t r = 0; r < idx.size(); ++r) {
                         if (idx[r] < 0) continue;
                         double* dst = gx + idx[r] * width;
                         const double* src = g.data() + r * width;
                         for (std::size_t q = 0; q < width; ++q) dst[q] += src[q];
                       }
                     });
}

Tensor inverse(const Tensor& x) {
  if (x.rank() != 2 || x.dim(0) != x.dim(1)) throw ShapeError("inverse: expected a square matrix, got " + shape_str(x.shape()));
  const std::size_t n = x.dim(0);
  Eigen::PartialPivLU<RowMatrix> lu(ConstMapMatrix(x.data().data(), n, n));
  if (std::abs(lu.determinant()) < 1e-300) throw DomainError("inverse: singular matrix");
  std::vector<double> out(n * n);
  MapMatrix(out.data(), n, n) = lu.inverse();
  auto y = std::make_shared<std::vector<double>>(out);
  return make_result("inverse", x.shape(), std::move(out), {x}, [y, n](std::span<const double> g, GradientSink& sink) {
    double* gx = sink(0);
    if (!gx) return;
    ConstMapMatrix Y(y->data(), n, n);
    MapMatrix(gx, n, n).noalias() -= Y.transpose() * ConstMapMatrix(g.data(), n, n) * Y.transpose();
  });
}

Tensor Gradients::of(const Tensor& leaf) const {
  auto it = grads_.find(leaf.id());
  if (it == grads_.end()) return Tensor::zeros(leaf.shape());
  return Tensor(leaf.shape(), it->second);
}

std::span<const double> Gradients::raw(const Tensor& leaf) const {
  auto it = grads_.find(leaf.id());
  if (it == grads_.end()) return {};
  return it->second;
}

bool Gradients::contains(const Tensor& leaf) const { return grads_.count(leaf.id()) != 0; }

namespace {

class MapSink : public GradientSink {
 public:
  MapSink(const detail::Node& node, std::unordered_map<const detail::Node*, std::vector<double>>& grads)
      : node_(node), grads_(grads) {}

  double* operator()(std::size_t input) override {
    const auto& in = node_.inputs.at(input);
    if (!in->requires_grad) return nullptr;
    auto& buf = grads_[in.get()];
    if (buf.empty()) buf.assign(in->data.size(), 0.0);
    return buf.data();
  }

 private:
  const detail::Node& node_;
  std::unordered_map<const detail::Node*, std::vector<double>>& grads_;
};

}  // namespace

Gradients backward(const Tensor& root) {
  if (root.numel() != 1) throw ShapeError("backward: root must be a scalar, got " + shape_str(root.shape()));
  Gradients result;
  if (!root.requires_grad()) return result;

  // Iterative post-order DFS gives a topological order (inputs before users).
  std::vector<const detail::Node*> order;
  std::unordered_set<const detail::Node*> visited;
  std::vector<std::pair<const detail::Node*, std::size_t>> stack;
  stack.emplace_back(root.id(), 0);
  visited.insert(root.id());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      const detail::Node* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  auto& grads = result.grads_;
  grads[root.id()] = {1.0};
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const detail::Node* node = *it;
    if (node->inputs.empty()) continue;
    auto found = grads.find(node);
    if (found == grads.end()) continue;
    MapSink sink(*node, grads);
    node->backward(found->second, sink);
    grads.erase(node);
  }
  return result;
}

}  // namespace flowpose
