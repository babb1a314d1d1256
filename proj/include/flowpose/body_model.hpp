#pragma once

// Parametric body: shape blending, joint regression, forward kinematics over a
// kinematic tree and linear blend skinning. Pose-corrective blend shapes are
// not modelled; a `pose_dirs` field in a model file is accepted and ignored.

#include <array>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "flowpose/tensor.hpp"

namespace flowpose {

inline constexpr int kBodyModelVersion = 1;
inline constexpr double kBetaClamp = 10.0;

struct BodyModel {
  std::size_t vertex_count = 0;
  std::size_t joint_count = 0;
  std::size_t shape_count = 0;
  std::vector<double> template_vertices;  // N x 3
  std::vector<double> shape_dirs;         // N x 3 x B, index (n*3 + axis)*B + b
  std::vector<double> joint_regressor;    // J x N
  std::vector<int> parents;               // J, parents[0] == -1
  std::vector<double> skin_weights;       // N x J
  std::vector<std::array<int, 3>> faces;  // optional, 0-based
  std::vector<std::string> joint_names;   // optional

  /// Joint indices ordered so that every parent precedes its children.
  std::vector<int> kinematic_order() const;
};

/// Checks every structural invariant; throws ValidationError naming the field
/// and index of the first violation.
void validate(const BodyModel& model);

BodyModel load_model(const std::string& path);
void save_model(const BodyModel& model, const std::string& path);

/// The bundled desk-scale model: an upper-body figure with N=64, J=8, B=4.
BodyModel make_toy_model();

/// Loads `path`, or returns the bundled model when `path` is empty.
BodyModel model_from_path(const std::string& path);

/// Differentiable batched outputs for M frames.
struct MeshTensors {
  Tensor vertices;      // [M, N, 3]
  Tensor joints;        // [M, J, 3], joint_regressor applied to posed vertices
  Tensor posed_joints;  // [M, J, 3], kinematic chain positions
  Tensor rest_joints;   // [M, J, 3], joint_regressor applied to shaped template
};

/// rotations: [M, J, 3, 3] (joint 0 = global orientation), beta: [M, B].
MeshTensors body_forward(const BodyModel& model, const Tensor& rotations, const Tensor& beta);

/// joint_regressor applied to vertices [M, N, 3] -> [M, J, 3].
Tensor regress_joints3d(const BodyModel& model, const Tensor& vertices);

/// Clamps shape coefficients into the plausible range [-10, 10].
std::vector<double> clamp_beta(std::vector<double> beta);

/// Single-frame convenience wrapper over body_forward.
struct Mesh {
  std::vector<Eigen::Vector3d> vertices;
  std::vector<Eigen::Vector3d> joints;
};
Mesh body_mesh(const BodyModel& model, const std::vector<Eigen::Matrix3d>& rotations, const std::vector<double>& beta);

/// Wavefront OBJ with 9 significant digits; faces are written when present.
void write_obj(const std::string& path, const BodyModel& model, const std::vector<Eigen::Vector3d>& vertices);

}  // namespace flowpose
