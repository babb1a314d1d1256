#pragma once

// Temporal feature encoder.
//
// Motion-continuity attention: single-head scaled dot-product self-attention
// over frames with a gated residual, out = X + g * softmax(Q K^T / sqrt(F)) V.
//
// Hierarchical integration: consecutive groups of three frames are blended
// with softmax weights produced by a per-level scoring network (a short tail
// group is padded and masked), repeating until one vector remains; a final
// linear map yields the context vector.

#include <vector>

#include "flowpose/parameters.hpp"

namespace flowpose {

struct EncoderConfig {
  std::size_t feature_dim = 128;
  std::size_t context_dim = 256;
  std::size_t window = 9;
  std::size_t hafi_hidden = 32;
  std::size_t hafi_levels = 3;
};

class TemporalEncoder {
 public:
  TemporalEncoder() = default;
  TemporalEncoder(EncoderConfig config, Rng& rng);

  const EncoderConfig& config() const { return config_; }

  /// features [B, T, F] -> attention weights [B, T, T].
  Tensor attention(const Tensor& features) const;
  /// features [B, T, F] -> temporal features [B, T, F].
  Tensor moca_encode(const Tensor& features) const;
  /// groups [M, n, F] -> convex blend [M, F] (before the output map).
  Tensor hafi_blend(const Tensor& temporal) const;
  /// groups [M, n, F] -> context [M, C].
  Tensor hafi_integrate(const Tensor& temporal) const;
  /// features [B, T, F] -> per-frame contexts [B*T, C], each integrated over a
  /// window of min(T, window) frames centred on its frame (clamped at ends).
  Tensor encode_sequence(const Tensor& features) const;

  /// Frame indices of the integration window for frame t.
  static std::vector<std::size_t> window_indices(std::size_t frames, std::size_t t, std::size_t window);

  void collect(ParameterStore& store, const std::string& prefix) const;

  Tensor query, key, value;  // [F, F]
  Tensor residual_gain;      // [1]
  std::vector<TwoLayer> level_scores;  // 3F -> hidden -> 3
  Linear output;             // F -> C

 private:
  EncoderConfig config_;
};

}  // namespace flowpose
