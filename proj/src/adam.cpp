#include "flowpose/adam.hpp"

#include <cmath>

namespace flowpose {

void adam_update(std::span<double> param, std::span<const double> grad, AdamMoments& moments,
                 const AdamOptions& options, long step) {
  if (moments.first.size() != param.size()) {
    moments.first.assign(param.size(), 0.0);
    moments.second.assign(param.size(), 0.0);
  }
  const double c1 = 1.0 - std::pow(options.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(options.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad.empty() ? 0.0 : grad[i];
    double& m = moments.first[i];
    double& v = moments.second[i];
    m = options.beta1 * m + (1.0 - options.beta1) * g;
    v = options.beta2 * v + (1.0 - options.beta2) * g * g;
    param[i] -= options.lr * (m / c1) / (std::sqrt(v / c2) + options.epsilon);
  }
}

void adam_step(ParameterStore& params, const NamedGradients& grads, AdamState& state) {
  for (const auto& [name, g] : grads) {
    const Tensor& p = params.at(name);
    if (g.size() != p.numel()) throw ShapeError("adam: gradient for '" + name + "' has wrong size");
    for (double v : g) {
      if (!std::isfinite(v)) throw DomainError("adam: non-finite gradient for parameter '" + name + "'");
    }
  }
  ++state.step;
  for (const auto& [name, param] : params.entries()) {
    auto it = grads.find(name);
    std::span<const double> g = it == grads.end() ? std::span<const double>{} : std::span<const double>(it->second);
    Tensor handle = param;
    adam_update(handle.mutable_data(), g, state.moments[name], state.options, state.step);
  }
}

}  // namespace flowpose
