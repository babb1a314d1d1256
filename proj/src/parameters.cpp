#include "flowpose/parameters.hpp"

#include <algorithm>
#include <cmath>

namespace flowpose {

void ParameterStore::add(std::string name, const Tensor& param) {
  if (!param.is_leaf() || !param.requires_grad()) throw Error("parameter '" + name + "' must be a trainable leaf");
  if (contains(name)) throw Error("duplicate parameter '" + name + "'");
  entries_.emplace_back(std::move(name), param);
}

void ParameterStore::merge(const ParameterStore& other) {
  for (const auto& [name, t] : other.entries()) add(name, t);
}

const Tensor& ParameterStore::at(std::string_view name) const {
  for (const auto& [n, t] : entries_) {
    if (n == name) return t;
  }
  throw Error("unknown parameter '" + std::string(name) + "'");
}

bool ParameterStore::contains(std::string_view name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const auto& e) { return e.first == name; });
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.second.numel();
  return n;
}

void ParameterStore::assign_from(const std::vector<std::pair<std::string, Tensor>>& source) {
  for (auto& [name, param] : entries_) {
    auto it = std::find_if(source.begin(), source.end(), [&](const auto& s) { return s.first == name; });
    if (it == source.end()) throw FormatError("checkpoint is missing parameter '" + name + "'");
    if (it->second.shape() != param.shape()) {
      throw FormatError("parameter '" + name + "' has shape " + shape_str(it->second.shape()) + ", expected " +
                        shape_str(param.shape()));
    }
    auto src = it->second.data();
    std::copy(src.begin(), src.end(), param.mutable_data().begin());
  }
}

NamedGradients collect_gradients(const ParameterStore& params, const Gradients& grads) {
  NamedGradients out;
  for (const auto& [name, t] : params.entries()) {
    auto g = grads.raw(t);
    if (!g.empty()) out[name].assign(g.begin(), g.end());
  }
  return out;
}

void accumulate(NamedGradients& dst, const NamedGradients& src) {
  for (const auto& [name, g] : src) {
    auto& d = dst[name];
    if (d.empty()) {
      d = g;
      continue;
    }
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
  }
}

Tensor make_param(Shape shape) { return Tensor::zeros(std::move(shape), true); }

Tensor make_param(Shape shape, std::vector<double> values) { return Tensor(std::move(shape), std::move(values), true); }

Tensor uniform_param(Shape shape, double bound, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = uniform(rng, -bound, bound);
  return make_param(std::move(shape), std::move(v));
}

Linear Linear::zeros(std::size_t in, std::size_t out) { return {make_param({in, out}), make_param({out})}; }

Linear Linear::random(std::size_t in, std::size_t out, Rng& rng) {
  const double bound = std::sqrt(3.0 / static_cast<double>(in));
  return {uniform_param({in, out}, bound, rng), make_param({out})};
}

Tensor Linear::operator()(const Tensor& x) const { return add(matmul(x, weight), bias); }

void Linear::collect(ParameterStore& store, const std::string& prefix) const {
  store.add(prefix + "weight", weight);
  store.add(prefix + "bias", bias);
}

}  // namespace flowpose
