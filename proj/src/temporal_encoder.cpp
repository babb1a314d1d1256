#include "flowpose/temporal_encoder.hpp"

#include <algorithm>
#include <cmath>

namespace flowpose {

namespace {

constexpr std::size_t kGroup = 3;
constexpr double kMasked = -1e30;

}  // namespace

TemporalEncoder::TemporalEncoder(EncoderConfig config, Rng& rng) : config_(config) {
  const std::size_t f = config.feature_dim;
  // Small random query/key: attention starts near-uniform but is not stuck at
  // the zero saddle where both projections receive zero gradient.
  query = uniform_param({f, f}, 0.01, rng);
  key = uniform_param({f, f}, 0.01, rng);
  std::vector<double> id(f * f, 0.0);
  for (std::size_t i = 0; i < f; ++i) id[i * f + i] = 1.0;
  value = make_param({f, f}, std::move(id));
  residual_gain = make_param({1});
  for (std::size_t l = 0; l < config.hafi_levels; ++l) {
    level_scores.push_back({Linear::random(kGroup * f, config.hafi_hidden, rng), Linear::zeros(config.hafi_hidden, kGroup)});
  }
  output = Linear::random(f, config.context_dim, rng);
}

Tensor TemporalEncoder::attention(const Tensor& features) const {
  if (features.rank() != 3 || features.dim(2) != config_.feature_dim) {
    throw ShapeError("moca_encode: expected [B,T," + std::to_string(config_.feature_dim) + "], got " +
                     shape_str(features.shape()));
  }
  const Tensor q = matmul(features, query);
  const Tensor k = matmul(features, key);
  return softmax(scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(config_.feature_dim))));
}

Tensor TemporalEncoder::moca_encode(const Tensor& features) const {
  const Tensor a = attention(features);
  return add(features, mul(residual_gain, matmul(a, matmul(features, value))));
}

Tensor TemporalEncoder::hafi_blend(const Tensor& temporal) const {
  if (temporal.rank() != 3 || temporal.dim(2) != config_.feature_dim) {
    throw ShapeError("hafi_integrate: expected [M,n," + std::to_string(config_.feature_dim) + "], got " +
                     shape_str(temporal.shape()));
  }
  const std::size_t m = temporal.dim(0), f = config_.feature_dim;
  std::size_t n = temporal.dim(1);
  Tensor x = temporal;
  for (std::size_t level = 0; n > 1; ++level) {
    if (level >= level_scores.size()) {
      throw ShapeError("hafi_integrate: " + std::to_string(temporal.dim(1)) + " frames need more than " +
                       std::to_string(level_scores.size()) + " levels");
    }
    const std::size_t groups = (n + kGroup - 1) / kGroup;
    std::vector<long> index(m * groups * kGroup);
    std::vector<double> mask(m * groups * kGroup, 0.0);
    for (std::size_t r = 0; r < m; ++r) {
      for (std::size_t g = 0; g < groups; ++g) {
        for (std::size_t k = 0; k < kGroup; ++k) {
          const std::size_t slot = (r * groups + g) * kGroup + k;
          const std::size_t item = g * kGroup + k;
          index[slot] = item < n ? static_cast<long>(r * n + item) : -1;
          if (item >= n) mask[slot] = kMasked;
        }
      }
    }
    const Tensor members = gather_rows(reshape(x, {m * n, f}), index);  // [m*groups*3, F]
    const Tensor logits = level_scores[level](reshape(members, {m * groups, kGroup * f}));
    const Tensor weights = softmax(add(logits, Tensor({m * groups, kGroup}, std::move(mask))));
    x = reshape(matmul(reshape(weights, {m * groups, 1, kGroup}), reshape(members, {m * groups, kGroup, f})),
                {m, groups, f});
    n = groups;
  }
  return reshape(x, {m, f});
}

Tensor TemporalEncoder::hafi_integrate(const Tensor& temporal) const { return output(hafi_blend(temporal)); }

std::vector<std::size_t> TemporalEncoder::window_indices(std::size_t frames, std::size_t t, std::size_t window) {
  const std::size_t w = std::min(frames, window);
  const std::size_t start = std::min(t >= w / 2 ? t - w / 2 : 0, frames - w);
  std::vector<std::size_t> out(w);
  for (std::size_t i = 0; i < w; ++i) out[i] = start + i;
  return out;
}

Tensor TemporalEncoder::encode_sequence(const Tensor& features) const {
  const Tensor temporal = moca_encode(features);
  const std::size_t b = features.dim(0), t = features.dim(1), f = config_.feature_dim;
  const std::size_t w = std::min(t, config_.window);
  std::vector<long> index;
  index.reserve(b * t * w);
  for (std::size_t s = 0; s < b; ++s) {
    for (std::size_t frame = 0; frame < t; ++frame) {
      for (auto i : window_indices(t, frame, config_.window)) index.push_back(static_cast<long>(s * t + i));
    }
  }
  const Tensor windows = reshape(gather_rows(reshape(temporal, {b * t, f}), index), {b * t, w, f});
  return hafi_integrate(windows);
}

void TemporalEncoder::collect(ParameterStore& store, const std::string& prefix) const {
  store.add(prefix + "query", query);
  store.add(prefix + "key", key);
  store.add(prefix + "value", value);
  store.add(prefix + "residual_gain", residual_gain);
  for (std::size_t l = 0; l < level_scores.size(); ++l) level_scores[l].collect(store, prefix + "level" + std::to_string(l) + ".");
  output.collect(store, prefix + "output.");
}

}  // namespace flowpose
