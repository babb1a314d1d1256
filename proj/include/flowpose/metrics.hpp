#pragma once

// Pose and shape error metrics. Positions are in metres; reported errors are
// in millimetres (acceleration error in mm/s^2).

#include <vector>

#include <Eigen/Dense>

namespace flowpose {

using Points = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

/// Similarity transform s R x + t (applied to row points) minimizing the
/// squared distance to `gt` (Umeyama). Throws DomainError when the
/// cross-covariance has rank below 2 (collinear or coincident points), where
/// the rotation is not determined.
Points procrustes_align(const Points& pred, const Points& gt);

/// Mean joint error after similarity alignment, mm.
double pa_mpjpe(const Points& pred, const Points& gt);
/// Mean joint error after centring both sets on joint 0, mm.
double mpjpe(const Points& pred, const Points& gt);
/// Mean vertex error after centring each mesh on its root joint, mm.
double mpve(const Points& pred_vertices, const Points& gt_vertices, const Eigen::Vector3d& pred_root,
            const Eigen::Vector3d& gt_root);
/// Mean norm of the difference of second temporal differences, mm/s^2.
double accel_error(const std::vector<Points>& pred, const std::vector<Points>& gt, double fps);
/// Smallest PA-MPJPE over the hypotheses.
double min_over_n(const std::vector<Points>& hypotheses, const Points& gt);

}  // namespace flowpose
