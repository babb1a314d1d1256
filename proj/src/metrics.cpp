#include "flowpose/metrics.hpp"

#include <algorithm>
#include <limits>
#include <string>

#include "flowpose/error.hpp"

namespace flowpose {

namespace {

constexpr double kMillimetres = 1000.0;

void check_pair(const char* op, const Points& a, const Points& b) {
  if (a.rows() != b.rows()) {
    throw ShapeError(std::string(op) + ": point counts differ (" + std::to_string(a.rows()) + " vs " +
                     std::to_string(b.rows()) + ")");
  }
  if (a.rows() == 0) throw ShapeError(std::string(op) + ": empty point set");
}

double mean_distance(const Points& a, const Points& b) { return (a - b).rowwise().norm().mean(); }

}  // namespace

Points procrustes_align(const Points& pred, const Points& gt) {
  check_pair("procrustes_align", pred, gt);
  if (pred.rows() < 3) throw ShapeError("procrustes_align: need at least 3 points");
  const Eigen::RowVector3d mu_p = pred.colwise().mean(), mu_g = gt.colwise().mean();
  const Points p = pred.rowwise() - mu_p, g = gt.rowwise() - mu_g;
  const double var_p = p.squaredNorm() / static_cast<double>(p.rows());
  const Eigen::Matrix3d cov = g.transpose() * p / static_cast<double>(p.rows());
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Vector3d sv = svd.singularValues();
  if (!(var_p > 0.0) || sv[1] <= 1e-12 * std::max(sv[0], 1e-300)) {
    throw DomainError("procrustes_align: rank-deficient covariance (degenerate point sets)");
  }
  Eigen::Vector3d signs(1.0, 1.0, 1.0);
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) signs[2] = -1.0;
  const Eigen::Matrix3d rot = svd.matrixU() * signs.asDiagonal() * svd.matrixV().transpose();
  const double scale = sv.dot(signs) / var_p;
  const Eigen::RowVector3d t = mu_g - scale * mu_p * rot.transpose();
  return ((scale * pred * rot.transpose()).rowwise() + t).eval();
}

double pa_mpjpe(const Points& pred, const Points& gt) {
  check_pair("pa_mpjpe", pred, gt);
  return mean_distance(procrustes_align(pred, gt), gt) * kMillimetres;
}

double mpjpe(const Points& pred, const Points& gt) {
  check_pair("mpjpe", pred, gt);
  const Points p = pred.rowwise() - pred.row(0), g = gt.rowwise() - gt.row(0);
  return mean_distance(p, g) * kMillimetres;
}

double mpve(const Points& pred_vertices, const Points& gt_vertices, const Eigen::Vector3d& pred_root,
            const Eigen::Vector3d& gt_root) {
  check_pair("mpve", pred_vertices, gt_vertices);
  const Points p = pred_vertices.rowwise() - pred_root.transpose();
  const Points g = gt_vertices.rowwise() - gt_root.transpose();
  return mean_distance(p, g) * kMillimetres;
}

double accel_error(const std::vector<Points>& pred, const std::vector<Points>& gt, double fps) {
  if (pred.size() != gt.size()) throw ShapeError("accel_error: sequence lengths differ");
  if (pred.size() < 3) throw ShapeError("accel_error: need at least 3 frames");
  double total = 0.0;
  for (std::size_t t = 1; t + 1 < pred.size(); ++t) {
    check_pair("accel_error", pred[t], gt[t]);
    const Points ap = pred[t + 1] - 2.0 * pred[t] + pred[t - 1];
    const Points ag = gt[t + 1] - 2.0 * gt[t] + gt[t - 1];
    total += (ap - ag).rowwise().norm().mean();
  }
  return total / static_cast<double>(pred.size() - 2) * fps * fps * kMillimetres;
}

double min_over_n(const std::vector<Points>& hypotheses, const Points& gt) {
  if (hypotheses.empty()) throw ShapeError("min_over_n: need at least one hypothesis");
  double best = std::numeric_limits<double>::infinity();
  for (const auto& h : hypotheses) best = std::min(best, pa_mpjpe(h, gt));
  return best;
}

}  // namespace flowpose
