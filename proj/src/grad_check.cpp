#include "flowpose/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace flowpose {

namespace {

double probe(const ScalarFunction& f, const Shape& shape, const std::vector<double>& values) {
  NoGradGuard guard;
  const double v = f(Tensor(shape, values)).item();
  if (!std::isfinite(v)) throw DomainError("grad_check: non-finite function value at probe");
  return v;
}

}  // namespace

double grad_check(const ScalarFunction& f, const Tensor& point, double step) {
  Tensor x(point.shape(), point.values(), true);
  Tensor y = f(x);
  if (!std::isfinite(y.item())) throw DomainError("grad_check: non-finite function value");
  const auto analytic = backward(y).of(x).values();

  std::vector<double> values = point.values();
  double worst = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double orig = values[i];
    values[i] = orig + step;
    const double up = probe(f, point.shape(), values);
    values[i] = orig - step;
    const double down = probe(f, point.shape(), values);
    values[i] = orig;
    const double fd = (up - down) / (2.0 * step);
    worst = std::max(worst, std::abs(analytic[i] - fd) / std::max(1.0, std::abs(fd)));
  }
  return worst;
}

}  // namespace flowpose
