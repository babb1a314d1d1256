#include "flowpose/flow.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace flowpose {

namespace {

constexpr double kMaxLogDiag = 13.815510557964274;  // ln(1e6)

Tensor mask(std::size_t d, bool lower) {
  std::vector<double> m(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      if (lower ? j < i : j > i) m[i * d + j] = 1.0;
    }
  }
  return Tensor({d, d}, std::move(m));
}

Tensor eye(std::size_t d) {
  std::vector<double> m(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) m[i * d + i] = 1.0;
  return Tensor({d, d}, std::move(m));
}

void check_rows(const char* op, const Tensor& x, std::size_t rows, std::size_t dim) {
  if (x.rank() != 2 || x.dim(0) != rows || x.dim(1) != dim) {
    throw ShapeError(std::string(op) + ": expected [" + std::to_string(rows) + "," + std::to_string(dim) + "], got " +
                     shape_str(x.shape()));
  }
}

}  // namespace

ConditionalFlow::ConditionalFlow(FlowConfig config, Rng& rng) : config_(config) {
  const std::size_t d = config.dim;
  if (d < 2) throw ShapeError("flow: dimension must be at least 2");
  if (!(config.initial_scale > 0.0) || config.blocks == 0) {
    throw ValidationError("flow: need at least one block and a positive initial scale");
  }
  const double block_log_scale = std::log(config.initial_scale) / static_cast<double>(config.blocks);
  const std::size_t half = d / 2;
  for (std::size_t k = 0; k < config.blocks; ++k) {
    Block b;
    if (k % 2 == 0) {
      b.active_begin = 0, b.active_end = half, b.passive_begin = half, b.passive_end = d;
    } else {
      b.active_begin = half, b.active_end = d, b.passive_begin = 0, b.passive_end = half;
    }
    const std::size_t active = b.active_end - b.active_begin;
    const std::size_t passive = b.passive_end - b.passive_begin;
    const double bound = std::sqrt(3.0 / static_cast<double>(active + config.context_dim));
    b.w_active = uniform_param({active, config.hidden}, bound, rng);
    b.w_context = uniform_param({config.context_dim, config.hidden}, bound, rng);
    b.b_hidden = make_param({config.hidden});
    b.shift = Linear::zeros(config.hidden, passive);
    b.lower = make_param({d, d});
    b.upper = make_param({d, d});
    b.log_diag = make_param({d});
    for (auto& v : b.log_diag.mutable_data()) v = block_log_scale;
    blocks_.push_back(std::move(b));
  }
}

ConditionalFlow::Prepared ConditionalFlow::prepare(const Tensor& context) const {
  if (context.rank() != 2 || context.dim(1) != config_.context_dim) {
    throw ShapeError("flow: context must be [M," + std::to_string(config_.context_dim) + "], got " +
                     shape_str(context.shape()));
  }
  const std::size_t d = config_.dim;
  const Tensor lower_mask = mask(d, true), upper_mask = mask(d, false), identity = eye(d);
  Prepared p;
  p.rows_ = context.dim(0);
  for (const auto& b : blocks_) {
    p.hidden_bias.push_back(add(matmul(context, b.w_context), b.b_hidden));
    const Tensor l = add(mul(b.lower, lower_mask), identity);
    const Tensor u = add(mul(b.upper, upper_mask), mul(identity, exp(b.log_diag)));
    const Tensor w = matmul(l, u);
    p.linear.push_back(transpose(w));
    p.linear_inv.push_back(transpose(flowpose::inverse(w)));
  }
  return p;
}

ConditionalFlow::Prepared ConditionalFlow::Prepared::repeat(std::size_t times) const {
  std::vector<long> index(rows_ * times);
  for (std::size_t r = 0; r < rows_; ++r) {
    for (std::size_t t = 0; t < times; ++t) index[r * times + t] = static_cast<long>(r);
  }
  Prepared out = *this;
  out.rows_ = rows_ * times;
  for (auto& h : out.hidden_bias) h = gather_rows(h, index);
  return out;
}

Tensor ConditionalFlow::shift(const Block& block, const Tensor& active, const Tensor& hidden_bias) const {
  return block.shift(flowpose::tanh(add(matmul(active, block.w_active), hidden_bias)));
}

Tensor ConditionalFlow::forward(const Tensor& z, const Prepared& p) const {
  check_rows("flow_forward", z, p.rows(), config_.dim);
  Tensor x = z;
  for (std::size_t k = 0; k < blocks_.size(); ++k) {
    const Block& b = blocks_[k];
    const Tensor active = slice(x, 1, b.active_begin, b.active_end);
    const Tensor passive = add(slice(x, 1, b.passive_begin, b.passive_end), shift(b, active, p.hidden_bias[k]));
    const Tensor u = b.active_begin == 0 ? concat({active, passive}, 1) : concat({passive, active}, 1);
    x = matmul(u, p.linear[k]);
  }
  return x;
}

Tensor ConditionalFlow::inverse(const Tensor& theta, const Prepared& p) const {
  check_rows("flow_inverse", theta, p.rows(), config_.dim);
  Tensor x = theta;
  for (std::size_t k = blocks_.size(); k-- > 0;) {
    const Block& b = blocks_[k];
    const Tensor u = matmul(x, p.linear_inv[k]);
    const Tensor active = slice(u, 1, b.active_begin, b.active_end);
    const Tensor passive = sub(slice(u, 1, b.passive_begin, b.passive_end), shift(b, active, p.hidden_bias[k]));
    x = b.active_begin == 0 ? concat({active, passive}, 1) : concat({passive, active}, 1);
  }
  return x;
}

Tensor ConditionalFlow::log_det() const {
  std::vector<Tensor> parts;
  for (const auto& b : blocks_) parts.push_back(sum(b.log_diag));
  Tensor total = parts.front();
  for (std::size_t i = 1; i < parts.size(); ++i) total = add(total, parts[i]);
  return total;
}

Tensor ConditionalFlow::latent_log_prob(const Tensor& z) const {
  const double norm_const = -0.5 * static_cast<double>(config_.dim) * std::log(2.0 * std::numbers::pi);
  const Tensor gauss = add_scalar(scale(sum(square(z), 1), -0.5), norm_const);
  return blocks_.empty() ? gauss : sub(gauss, log_det());
}

Tensor ConditionalFlow::log_prob(const Tensor& theta, const Prepared& p) const {
  return latent_log_prob(inverse(theta, p));
}

Tensor ConditionalFlow::mode(const Prepared& p) const {
  return forward(Tensor::zeros({p.rows(), config_.dim}), p);
}

std::vector<FlowSample> ConditionalFlow::sample(std::size_t n, std::span<const double> context, Rng& rng) const {
  if (n == 0) throw ShapeError("sample: count must be at least 1");
  if (context.size() != config_.context_dim) throw ShapeError("sample: context has wrong length");
  NoGradGuard guard;
  const Tensor z = standard_normal_tensor(n, config_.dim, rng);
  const Prepared p = prepare(Tensor({1, config_.context_dim}, std::vector<double>(context.begin(), context.end())))
                         .repeat(n);
  const Tensor theta = forward(z, p);
  const Tensor lp = latent_log_prob(z);
  std::vector<FlowSample> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto t = theta.data().subspan(i * config_.dim, config_.dim);
    out[i].theta.assign(t.begin(), t.end());
    out[i].log_prob = lp.at(i);
  }
  return out;
}

void ConditionalFlow::collect(ParameterStore& store, const std::string& prefix) const {
  for (std::size_t k = 0; k < blocks_.size(); ++k) {
    const std::string p = prefix + "block" + std::to_string(k) + ".";
    const Block& b = blocks_[k];
    store.add(p + "w_active", b.w_active);
    store.add(p + "w_context", b.w_context);
    store.add(p + "b_hidden", b.b_hidden);
    b.shift.collect(store, p + "shift.");
    store.add(p + "lower", b.lower);
    store.add(p + "upper", b.upper);
    store.add(p + "log_diag", b.log_diag);
  }
}

void ConditionalFlow::randomize(Rng& rng, double scale) {
  ParameterStore store;
  collect(store, "");
  for (const auto& [name, t] : store.entries()) {
    Tensor handle = t;
    for (auto& v : handle.mutable_data()) v = uniform(rng, -scale, scale);
  }
}

void ConditionalFlow::clamp_diagonals() {
  for (auto& b : blocks_) {
    for (auto& v : b.log_diag.mutable_data()) v = std::clamp(v, -kMaxLogDiag, kMaxLogDiag);
  }
}

Tensor standard_normal_tensor(std::size_t rows, std::size_t dim, Rng& rng) {
  std::vector<double> v(rows * dim);
  for (auto& x : v) x = standard_normal(rng);
  return Tensor({rows, dim}, std::move(v));
}

}  // namespace flowpose
