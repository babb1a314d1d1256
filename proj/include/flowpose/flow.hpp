#pragma once

// Conditional normalizing flow theta = f(z; c) over pose vectors.
//
// Each block applies an additive coupling (the passive half is shifted by a
// conditioner network fed with the active half and the context) followed by a
// context-independent LU-parametrized linear map W = L U, with L unit lower
// triangular and U upper triangular with diagonal exp(s). Couplings have unit
// Jacobian, so log|det df/dz| = sum of all s and is independent of z: the
// density's maximum is exactly f(0; c).

#include <span>
#include <vector>

#include "flowpose/parameters.hpp"

namespace flowpose {

struct FlowConfig {
  std::size_t dim = 48;
  std::size_t context_dim = 256;
  std::size_t blocks = 4;
  std::size_t hidden = 64;
  /// Overall scale of the initial linear maps; 1 gives the identity flow.
  double initial_scale = 1.0;
};

struct FlowSample {
  std::vector<double> theta;
  double log_prob = 0.0;
};

class ConditionalFlow {
 public:
  struct Block {
    std::size_t active_begin = 0, active_end = 0, passive_begin = 0, passive_end = 0;
    Tensor w_active;   // [active, H]
    Tensor w_context;  // [C, H]
    Tensor b_hidden;   // [H]
    Linear shift;      // [H] -> [passive]
    Tensor lower;      // [d, d], strictly-lower part used
    Tensor upper;      // [d, d], strictly-upper part used
    Tensor log_diag;   // [d]
  };

  /// Context-dependent quantities for M rows, reusable across forward and
  /// inverse passes that share the same contexts.
  class Prepared {
   public:
    std::size_t rows() const { return rows_; }
    /// Repeats every row `times` times consecutively (row m -> m*times..).
    Prepared repeat(std::size_t times) const;

   private:
    friend class ConditionalFlow;
    std::size_t rows_ = 0;
    std::vector<Tensor> hidden_bias;  // per block: [M, H]
    std::vector<Tensor> linear;       // per block: W^T
    std::vector<Tensor> linear_inv;   // per block: W^-T
  };

  ConditionalFlow() = default;
  /// Identity-initialized flow (up to initial_scale): zero shifts and
  /// diagonal linear maps whose product is initial_scale * I; the
  /// conditioner's first layer is random so gradients reach it once the output
  /// layer moves.
  ConditionalFlow(FlowConfig config, Rng& rng);

  const FlowConfig& config() const { return config_; }
  std::size_t dim() const { return config_.dim; }

  Prepared prepare(const Tensor& context) const;

  Tensor forward(const Tensor& z, const Prepared& prepared) const;
  Tensor inverse(const Tensor& theta, const Prepared& prepared) const;
  Tensor forward(const Tensor& z, const Tensor& context) const { return forward(z, prepare(context)); }
  Tensor inverse(const Tensor& theta, const Tensor& context) const { return inverse(theta, prepare(context)); }

  /// log|det df/dz|, a scalar independent of z and c.
  Tensor log_det() const;
  /// Row-wise log N(z; 0, I) - log_det for z = f^-1(theta; c). Shape [M].
  Tensor log_prob(const Tensor& theta, const Prepared& prepared) const;
  Tensor log_prob(const Tensor& theta, const Tensor& context) const { return log_prob(theta, prepare(context)); }
  /// Row-wise log-density of already-inverted latents.
  Tensor latent_log_prob(const Tensor& z) const;

  Tensor mode(const Prepared& prepared) const;
  Tensor mode(const Tensor& context) const { return mode(prepare(context)); }

  /// n draws for a single context vector, with their log-densities.
  std::vector<FlowSample> sample(std::size_t n, std::span<const double> context, Rng& rng) const;

  void collect(ParameterStore& store, const std::string& prefix) const;
  /// Replaces every parameter (including the identity-initialized ones) with
  /// random values of magnitude ~scale; used to probe generic flows.
  void randomize(Rng& rng, double scale);
  /// Keeps every |diag U| within [1e-6, 1e6].
  void clamp_diagonals();

  const std::vector<Block>& blocks() const { return blocks_; }

 private:
  Tensor shift(const Block& block, const Tensor& active, const Tensor& hidden_bias) const;

  FlowConfig config_;
  std::vector<Block> blocks_;
};

/// Standard normal latents [rows, dim].
Tensor standard_normal_tensor(std::size_t rows, std::size_t dim, Rng& rng);

}  // namespace flowpose
