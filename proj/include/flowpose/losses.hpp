#pragma once

// Training objectives. Every loss is a differentiable scalar Tensor; the
// combined objective keeps a per-term report so the total can be audited as
// the dot product of the report with the weights.

#include <array>
#include <optional>
#include <string>

#include "flowpose/discriminator.hpp"
#include "flowpose/flow.hpp"

namespace flowpose {

enum class LossTerm : std::size_t { nll, exp_2d, exp_adv, mode_2d, mode_adv, mode_3d, mode_theta, mode_beta, orth };
inline constexpr std::size_t kLossTermCount = 9;
const char* loss_term_name(LossTerm term);

struct LossWeights {
  double nll = 0.001;
  double exp_2d = 0.001;
  double exp_adv = 0.01;
  double mode_2d = 0.01;
  double mode_adv = 0.01;
  double mode_3d = 0.05;
  double mode_theta = 0.001;
  double mode_beta = 0.0005;
  double orth = 0.1;

  double of(LossTerm term) const;
};

/// Confidence-weighted reprojection error: sum_j c_j |project(X_j) - x_j|^2 /
/// sum_j c_j over all rows. joints [M,J,3], cam [M,3], keypoints [M,J,2],
/// confidence [M,J]. Throws DomainError if every confidence is zero.
Tensor loss_2d(const Tensor& joints3d, const Tensor& cam, const Tensor& keypoints, const Tensor& confidence);

/// Mean squared joint distance after centring both sets on joint 0.
/// pred, gt: [M,J,3].
Tensor loss_3d(const Tensor& pred, const Tensor& gt);

/// Mean of -log p(theta_gt | c) over rows.
Tensor loss_nll(const ConditionalFlow& flow, const Tensor& gt_pose, const ConditionalFlow::Prepared& prepared);

/// Mean over rows of the squared distance between two row sets [M, k].
Tensor mean_squared_rows(const Tensor& a, const Tensor& b);

/// Weighted sum of the present terms. Throws DomainError naming the first
/// non-finite term.
struct LossReport {
  std::array<std::optional<double>, kLossTermCount> terms{};
  double total = 0.0;

  bool has(LossTerm t) const { return terms[static_cast<std::size_t>(t)].has_value(); }
  double at(LossTerm t) const { return terms[static_cast<std::size_t>(t)].value(); }
  /// sum of weight * term in term order, the same arithmetic as total_loss.
  double weighted_sum(const LossWeights& weights) const;
};

class LossAccumulator {
 public:
  explicit LossAccumulator(LossWeights weights) : weights_(weights) {}
  void add(LossTerm term, const Tensor& value);
  /// Requires at least one term.
  Tensor total() const;
  LossReport report() const;
  const LossWeights& weights() const { return weights_; }

 private:
  LossWeights weights_;
  std::array<std::optional<Tensor>, kLossTermCount> terms_{};
};

}  // namespace flowpose
