#pragma once

#include "flowpose/parameters.hpp"

namespace flowpose {

/// Per-frame shape and camera regressed from the context vector.
class RegressionHead {
 public:
  struct Output {
    Tensor beta;  // [M, B]
    Tensor cam;   // [M, 3] rows (s, tx, ty), s = exp(raw) > 0
  };

  RegressionHead() = default;
  RegressionHead(std::size_t context_dim, std::size_t shape_count, std::size_t hidden, Rng& rng);

  Output predict(const Tensor& context) const;
  void collect(ParameterStore& store, const std::string& prefix) const { net.collect(store, prefix); }

  std::size_t shape_count() const { return shape_count_; }

  TwoLayer net;

 private:
  std::size_t shape_count_ = 0;
};

}  // namespace flowpose
