#pragma once

#include <functional>

#include "flowpose/tensor.hpp"

namespace flowpose {

using ScalarFunction = std::function<Tensor(const Tensor&)>;

/// Compares reverse-mode gradients of `f` at `point` with central differences.
/// Returns max_i |autodiff_i - fd_i| / max(1, |fd_i|). Throws DomainError if
/// `f` is non-finite at any probe.
double grad_check(const ScalarFunction& f, const Tensor& point, double step = 1e-5);

}  // namespace flowpose
