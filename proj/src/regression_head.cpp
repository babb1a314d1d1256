#include "flowpose/regression_head.hpp"

namespace flowpose {

RegressionHead::RegressionHead(std::size_t context_dim, std::size_t shape_count, std::size_t hidden, Rng& rng)
    : net{Linear::random(context_dim, hidden, rng), Linear::zeros(hidden, shape_count + 3)}, shape_count_(shape_count) {}

RegressionHead::Output RegressionHead::predict(const Tensor& context) const {
  const Tensor raw = net(context);
  const std::size_t b = shape_count_;
  Output out;
  out.beta = slice(raw, 1, 0, b);
  out.cam = concat({exp(slice(raw, 1, b, b + 1)), slice(raw, 1, b + 1, b + 3)}, 1);
  return out;
}

}  // namespace flowpose
