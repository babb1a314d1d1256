#pragma once

// Motion discriminator: a two-layer GRU over the pose sequence, softmax
// attention pooling of the top layer's hidden states, and an affine + sigmoid
// read-out giving the probability that the motion is real.

#include <vector>

#include "flowpose/parameters.hpp"

namespace flowpose {

struct DiscriminatorConfig {
  std::size_t input_dim = 48;
  std::size_t hidden = 64;
  std::size_t layers = 2;
};

class MotionDiscriminator {
 public:
  struct GruLayer {
    Tensor w_input;    // [in, 3H]  gates r | z | n
    Tensor w_hidden;   // [H, 3H]
    Tensor b_input;    // [3H]
    Tensor b_hidden;   // [3H]
  };

  MotionDiscriminator() = default;
  MotionDiscriminator(DiscriminatorConfig config, Rng& rng);

  const DiscriminatorConfig& config() const { return config_; }

  /// sequences [S, T, d] -> probabilities [S]. Throws ShapeError when T < 2.
  Tensor discriminate(const Tensor& sequences) const;

  /// Copy whose parameters are constants: gradients stop at its outputs'
  /// inputs and never reach these parameters.
  MotionDiscriminator frozen() const;

  void collect(ParameterStore& store, const std::string& prefix) const;

  std::vector<GruLayer> gru;
  Tensor attention;  // [H, 1]
  Linear readout;    // H -> 1

 private:
  DiscriminatorConfig config_;
};

/// mean[(D(real) - 1)^2] + mean[D(fake)^2].
Tensor disc_loss(const Tensor& real_probs, const Tensor& fake_probs);
/// mean[(D(fake) - 1)^2].
Tensor adv_loss(const Tensor& fake_probs);

}  // namespace flowpose
