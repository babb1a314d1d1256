#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "flowpose/parameters.hpp"

namespace flowpose {

struct AdamOptions {
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamMoments {
  std::vector<double> first;
  std::vector<double> second;
};

struct AdamState {
  AdamOptions options;
  long step = 0;
  std::map<std::string, AdamMoments> moments;
};

/// One bias-corrected Adam update of a single parameter buffer. `step` is the
/// 1-based update index.
void adam_update(std::span<double> param, std::span<const double> grad, AdamMoments& moments,
                 const AdamOptions& options, long step);

/// Updates every parameter of the store; parameters without an entry in
/// `grads` see a zero gradient. Throws DomainError naming the parameter when a
/// gradient is non-finite (no parameter is modified in that case).
void adam_step(ParameterStore& params, const NamedGradients& grads, AdamState& state);

}  // namespace flowpose
