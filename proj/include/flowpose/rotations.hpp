#pragma once

// Rotation parametrizations: axis-angle, 3x3 matrices and the continuous 6D
// representation (first two matrix columns, re-orthonormalized by
// Gram-Schmidt).

#include <span>
#include <vector>

#include <Eigen/Dense>

#include "flowpose/tensor.hpp"

namespace flowpose {

/// (a1, a2): the two raw column vectors, a1 in entries 0..2, a2 in 3..5.
using Rot6D = Eigen::Matrix<double, 6, 1>;

Eigen::Matrix3d rot6d_to_matrix(const Rot6D& r);
Rot6D matrix_to_rot6d(const Eigen::Matrix3d& rotation);
Eigen::Matrix3d axis_angle_to_matrix(const Eigen::Vector3d& axis_angle);
/// Angle canonicalized into [0, pi].
Eigen::Vector3d matrix_to_axis_angle(const Eigen::Matrix3d& rotation);
/// Squared distance between r and its orthonormalized version.
double orth_residual(const Rot6D& r);

/// Throws DomainError unless R^T R = I and det R > 0 within `tol`.
void check_rotation(const Eigen::Matrix3d& rotation, double tol = 1e-6);

Rot6D identity_rot6d();

/// Batched Gram-Schmidt: [..., 6] -> [..., 3, 3], differentiable.
Tensor rot6d_to_matrix(const Tensor& r);
/// Batched orthonormality residual: [..., 6] -> [...], differentiable.
Tensor orth_residual(const Tensor& r);

// Pose vectors: per joint, the 6D rotation stored as an offset from the
// identity's (1,0,0, 0,1,0), concatenated over joints. The zero vector is the
// rest pose.

std::vector<double> pose_vector_from_rotations(const std::vector<Eigen::Matrix3d>& rotations);
std::vector<Eigen::Matrix3d> rotations_from_pose_vector(std::span<const double> pose);
/// [M, 6J] -> [M, J, 3, 3].
Tensor pose_vector_to_rotations(const Tensor& pose);
/// [M, 6J] -> [M], summed orthonormality residual over joints.
Tensor pose_vector_orth_residual(const Tensor& pose);

}  // namespace flowpose
