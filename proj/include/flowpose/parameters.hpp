#pragma once

// Named trainable tensors and the small layer building blocks shared by the
// networks (linear maps, two-layer perceptrons).

#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "flowpose/random.hpp"
#include "flowpose/tensor.hpp"

namespace flowpose {

/// Ordered name -> leaf tensor table. Entries are shared handles, so an update
/// through the store is visible to the module that owns the tensor.
class ParameterStore {
 public:
  void add(std::string name, const Tensor& param);
  void merge(const ParameterStore& other);

  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  const Tensor& at(std::string_view name) const;
  bool contains(std::string_view name) const;
  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;

  /// Copies values from `source` into matching entries. Every entry of this
  /// store must be present in `source` with an identical shape.
  void assign_from(const std::vector<std::pair<std::string, Tensor>>& source);

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

using NamedGradients = std::map<std::string, std::vector<double>>;

/// Pulls the gradients of every store entry out of a backward pass. Entries the
/// pass did not reach are omitted.
NamedGradients collect_gradients(const ParameterStore& params, const Gradients& grads);

/// dst += src, entry by entry.
void accumulate(NamedGradients& dst, const NamedGradients& src);

Tensor make_param(Shape shape);
Tensor make_param(Shape shape, std::vector<double> values);
/// Uniform(-bound, bound) entries.
Tensor uniform_param(Shape shape, double bound, Rng& rng);

/// y = x W + b over rows of a 2-D input.
struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]

  static Linear zeros(std::size_t in, std::size_t out);
  /// Fan-in scaled uniform weights, zero bias.
  static Linear random(std::size_t in, std::size_t out, Rng& rng);

  Tensor operator()(const Tensor& x) const;
  void collect(ParameterStore& store, const std::string& prefix) const;
  Linear detached() const { return {weight.detach(), bias.detach()}; }
};

/// Linear -> tanh -> Linear.
struct TwoLayer {
  Linear first;
  Linear second;

  Tensor operator()(const Tensor& x) const { return second(flowpose::tanh(first(x))); }
  void collect(ParameterStore& store, const std::string& prefix) const {
    first.collect(store, prefix + "l1.");
    second.collect(store, prefix + "l2.");
  }
};

}  // namespace flowpose
