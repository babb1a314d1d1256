#pragma once

// Weak-perspective camera: x2d = s * (x, y) + t, depth discarded. Image
// coordinates are normalized crop units.

#include <vector>

#include <Eigen/Dense>

#include "flowpose/tensor.hpp"

namespace flowpose {

struct CameraParams {
  double scale = 1.0;
  Eigen::Vector2d translation = Eigen::Vector2d::Zero();
};

std::vector<Eigen::Vector2d> project(const std::vector<Eigen::Vector3d>& points, const CameraParams& cam);

/// points: [M, K, 3], cam: [M, 3] rows (s, tx, ty) -> [M, K, 2]. Throws
/// DomainError when any s <= 0.
Tensor project(const Tensor& points, const Tensor& cam);

}  // namespace flowpose
