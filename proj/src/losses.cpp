#include "flowpose/losses.hpp"

#include <cmath>

#include "flowpose/camera.hpp"

namespace flowpose {

const char* loss_term_name(LossTerm term) {
  static constexpr const char* kNames[kLossTermCount] = {"nll",     "exp_2d",     "exp_adv",   "mode_2d", "mode_adv",
                                                         "mode_3d", "mode_theta", "mode_beta", "orth"};
  return kNames[static_cast<std::size_t>(term)];
}

double LossWeights::of(LossTerm term) const {
  switch (term) {
    case LossTerm::nll: return nll;
    case LossTerm::exp_2d: return exp_2d;
    case LossTerm::exp_adv: return exp_adv;
    case LossTerm::mode_2d: return mode_2d;
    case LossTerm::mode_adv: return mode_adv;
    case LossTerm::mode_3d: return mode_3d;
    case LossTerm::mode_theta: return mode_theta;
    case LossTerm::mode_beta: return mode_beta;
    case LossTerm::orth: return orth;
  }
  return 0.0;
}

Tensor loss_2d(const Tensor& joints3d, const Tensor& cam, const Tensor& keypoints, const Tensor& confidence) {
  const Tensor projected = project(joints3d, cam);
  if (keypoints.shape() != projected.shape() || confidence.rank() != 2 || confidence.dim(0) != projected.dim(0) ||
      confidence.dim(1) != projected.dim(1)) {
    throw ShapeError("loss_2d: keypoints " + shape_str(keypoints.shape()) + " / confidence " +
                     shape_str(confidence.shape()) + " do not match projections " + shape_str(projected.shape()));
  }
  double total_conf = 0.0;
  for (double c : confidence.data()) total_conf += c;
  if (!(total_conf > 0.0)) throw DomainError("loss_2d: all keypoint confidences are zero");
  const Tensor sq = sum(square(sub(projected, keypoints)), 2);  // [M,J]
  return scale(sum(mul(sq, confidence)), 1.0 / total_conf);
}

Tensor loss_3d(const Tensor& pred, const Tensor& gt) {
  if (pred.shape() != gt.shape() || pred.rank() != 3 || pred.dim(2) != 3) {
    throw ShapeError("loss_3d: shapes " + shape_str(pred.shape()) + " and " + shape_str(gt.shape()));
  }
  const std::size_t rows = pred.dim(0), joints = pred.dim(1);
  // Row j of the centring matrix is e_j - e_0.
  std::vector<double> c(joints * joints, 0.0);
  for (std::size_t j = 0; j < joints; ++j) {
    c[j * joints + j] += 1.0;
    c[j * joints] -= 1.0;
  }
  const Tensor centre({joints, joints}, std::move(c));
  const Tensor diff = matmul(centre, sub(pred, gt));
  return scale(sum(square(diff)), 1.0 / static_cast<double>(rows * joints));
}

Tensor loss_nll(const ConditionalFlow& flow, const Tensor& gt_pose, const ConditionalFlow::Prepared& prepared) {
  return neg(mean(flow.log_prob(gt_pose, prepared)));
}

Tensor mean_squared_rows(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape() || a.rank() != 2) {
    throw ShapeError("mean_squared_rows: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  return scale(sum(square(sub(a, b))), 1.0 / static_cast<double>(a.dim(0)));
}

double LossReport::weighted_sum(const LossWeights& weights) const {
  double total_value = 0.0;
  bool first = true;
  for (std::size_t i = 0; i < kLossTermCount; ++i) {
    if (!terms[i]) continue;
    const double v = weights.of(static_cast<LossTerm>(i)) * *terms[i];
    total_value = first ? v : total_value + v;
    first = false;
  }
  return total_value;
}

void LossAccumulator::add(LossTerm term, const Tensor& value) {
  if (value.numel() != 1) throw ShapeError(std::string("loss term ") + loss_term_name(term) + " is not a scalar");
  if (!std::isfinite(value.item())) throw DomainError(std::string("loss term ") + loss_term_name(term) + " is not finite");
  terms_[static_cast<std::size_t>(term)] = value;
}

Tensor LossAccumulator::total() const {
  std::optional<Tensor> acc;
  for (std::size_t i = 0; i < kLossTermCount; ++i) {
    if (!terms_[i]) continue;
    const Tensor weighted = scale(*terms_[i], weights_.of(static_cast<LossTerm>(i)));
    acc = acc ? flowpose::add(*acc, weighted) : weighted;
  }
  if (!acc) throw ShapeError("total_loss: no loss terms present");
  return *acc;
}

LossReport LossAccumulator::report() const {
  LossReport r;
  for (std::size_t i = 0; i < kLossTermCount; ++i) {
    if (terms_[i]) r.terms[i] = terms_[i]->item();
  }
  r.total = r.weighted_sum(weights_);
  return r;
}

}  // namespace flowpose
