#include "flowpose/rotations.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace flowpose {

namespace {

constexpr double kDegenerate = 1e-12;
constexpr double kSmallAngle = 1e-8;

struct GramSchmidt {
  Eigen::Vector3d a1, a2, b1, b2, b3;
  double n1 = 0.0, ne = 0.0;

  GramSchmidt(const double* r) : a1(r[0], r[1], r[2]), a2(r[3], r[4], r[5]) {
    n1 = a1.norm();
    if (!(n1 > kDegenerate)) throw DomainError("rot6d: first column is zero");
    b1 = a1 / n1;
    const Eigen::Vector3d e = a2 - b1.dot(a2) * b1;
    ne = e.norm();
    if (!(ne > kDegenerate)) throw DomainError("rot6d: columns are parallel");
    b2 = e / ne;
    b3 = b1.cross(b2);
  }

  // Pulls cotangents of (b1, b2, b3) back to (a1, a2).
  void vjp(Eigen::Vector3d g1, const Eigen::Vector3d& g2_in, const Eigen::Vector3d& g3, Eigen::Vector3d& ga1,
           Eigen::Vector3d& ga2) const {
    g1 += b2.cross(g3);
    const Eigen::Vector3d g2 = g2_in + g3.cross(b1);
    const Eigen::Vector3d ge = (g2 - b2 * b2.dot(g2)) / ne;
    ga2 = ge - b1 * b1.dot(ge);
    g1 += -b1.dot(a2) * ge - a2 * b1.dot(ge);
    ga1 = (g1 - b1 * b1.dot(g1)) / n1;
  }
};

Shape drop_last(const Shape& s) { return Shape(s.begin(), s.end() - 1); }

void require_six(const char* op, const Tensor& r) {
  if (r.rank() == 0 || r.shape().back() != 6) throw ShapeError(std::string(op) + ": expected [...,6], got " + shape_str(r.shape()));
}

}  // namespace

Eigen::Matrix3d rot6d_to_matrix(const Rot6D& r) {
  GramSchmidt gs(r.data());
  Eigen::Matrix3d m;
  m.col(0) = gs.b1;
  m.col(1) = gs.b2;
  m.col(2) = gs.b3;
  return m;
}

void check_rotation(const Eigen::Matrix3d& rotation, double tol) {
  if (!rotation.allFinite()) throw DomainError("rotation: non-finite entries");
  const double err = (rotation.transpose() * rotation - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  if (err > tol) throw DomainError("rotation: not orthonormal (max deviation " + std::to_string(err) + ")");
  if (rotation.determinant() <= 0.0) throw DomainError("rotation: determinant is not positive");
}

Rot6D matrix_to_rot6d(const Eigen::Matrix3d& rotation) {
  check_rotation(rotation);
  Rot6D r;
  r << rotation.col(0), rotation.col(1);
  return r;
}

Eigen::Matrix3d axis_angle_to_matrix(const Eigen::Vector3d& v) {
  if (!v.allFinite()) throw DomainError("axis_angle_to_matrix: non-finite input");
  Eigen::Matrix3d k;
  k << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  const double angle = v.norm();
  if (angle < kSmallAngle) return Eigen::Matrix3d::Identity() + k + 0.5 * k * k;
  return Eigen::Matrix3d::Identity() + (std::sin(angle) / angle) * k +
         ((1.0 - std::cos(angle)) / (angle * angle)) * k * k;
}

Eigen::Vector3d matrix_to_axis_angle(const Eigen::Matrix3d& rotation) {
  check_rotation(rotation);
  const double cos_angle = std::clamp((rotation.trace() - 1.0) / 2.0, -1.0, 1.0);
  const Eigen::Vector3d vee(rotation(2, 1) - rotation(1, 2), rotation(0, 2) - rotation(2, 0),
                            rotation(1, 0) - rotation(0, 1));
  // |vee| = 2 sin(angle); atan2 stays well conditioned where acos does not.
  const double angle = std::atan2(0.5 * vee.norm(), cos_angle);
  if (angle < kSmallAngle) return 0.5 * vee;
  if (angle < std::numbers::pi - 1e-3) return vee * (angle / (2.0 * std::sin(angle)));
  // Near a half turn: (R + R^T)/2 - cos(angle) I = (1 - cos(angle)) a a^T, read
  // off through its dominant diagonal entry. At exactly pi this is (R + I)/2.
  const Eigen::Matrix3d outer = (0.5 * (rotation + rotation.transpose()) - cos_angle * Eigen::Matrix3d::Identity()) /
                                (1.0 - cos_angle);
  Eigen::Index k = 0;
  outer.diagonal().maxCoeff(&k);
  Eigen::Vector3d axis = outer.col(k) / std::sqrt(outer(k, k));
  if (axis.dot(vee) < 0.0) axis = -axis;
  return axis.normalized() * angle;
}

double orth_residual(const Rot6D& r) {
  GramSchmidt gs(r.data());
  return (gs.a1 - gs.b1).squaredNorm() + (gs.a2 - gs.b2).squaredNorm();
}

Rot6D identity_rot6d() {
  Rot6D r;
  r << 1, 0, 0, 0, 1, 0;
  return r;
}

Tensor rot6d_to_matrix(const Tensor& r) {
  require_six("rot6d_to_matrix", r);
  const std::size_t count = r.numel() / 6;
  Shape out_shape = drop_last(r.shape());
  out_shape.push_back(3);
  out_shape.push_back(3);
  std::vector<double> out(count * 9);
  auto in = r.data();
  for (std::size_t i = 0; i < count; ++i) {
    GramSchmidt gs(in.data() + 6 * i);
    for (int row = 0; row < 3; ++row) {
      out[9 * i + 3 * row + 0] = gs.b1[row];
      out[9 * i + 3 * row + 1] = gs.b2[row];
      out[9 * i + 3 * row + 2] = gs.b3[row];
    }
  }
  return make_result("rot6d_to_matrix", std::move(out_shape), std::move(out), {r},
                     [r, count](std::span<const double> g, GradientSink& sink) {
                       double* gr = sink(0);
                       if (!gr) return;
                       auto in = r.data();
                       for (std::size_t i = 0; i < count; ++i) {
                         GramSchmidt gs(in.data() + 6 * i);
                         const double* gi = g.data() + 9 * i;
                         Eigen::Vector3d g1(gi[0], gi[3], gi[6]), g2(gi[1], gi[4], gi[7]), g3(gi[2], gi[5], gi[8]);
                         Eigen::Vector3d ga1, ga2;
                         gs.vjp(g1, g2, g3, ga1, ga2);
                         for (int k = 0; k < 3; ++k) {
                           gr[6 * i + k] += ga1[k];
                           gr[6 * i + 3 + k] += ga2[k];
                         }
                       }
                     });
}

Tensor orth_residual(const Tensor& r) {
  require_six("orth_residual", r);
  const std::size_t count = r.numel() / 6;
  std::vector<double> out(count);
  auto in = r.data();
  for (std::size_t i = 0; i < count; ++i) {
    GramSchmidt gs(in.data() + 6 * i);
    out[i] = (gs.a1 - gs.b1).squaredNorm() + (gs.a2 - gs.b2).squaredNorm();
  }
  return make_result("orth_residual", drop_last(r.shape()), std::move(out), {r},
                     [r, count](std::span<const double> g, GradientSink& sink) {
                       double* gr = sink(0);
                       if (!gr) return;
                       auto in = r.data();
                       for (std::size_t i = 0; i < count; ++i) {
                         GramSchmidt gs(in.data() + 6 * i);
                         const Eigen::Vector3d d1 = 2.0 * g[i] * (gs.a1 - gs.b1);
                         const Eigen::Vector3d d2 = 2.0 * g[i] * (gs.a2 - gs.b2);
                         Eigen::Vector3d ga1, ga2;
                         gs.vjp(-d1, -d2, Eigen::Vector3d::Zero(), ga1, ga2);
                         for (int k = 0; k < 3; ++k) {
                           gr[6 * i + k] += d1[k] + ga1[k];
                           gr[6 * i + 3 + k] += d2[k] + ga2[k];
                         }
                       }
                     });
}

std::vector<double> pose_vector_from_rotations(const std::vector<Eigen::Matrix3d>& rotations) {
  std::vector<double> out;
  out.reserve(rotations.size() * 6);
  const Rot6D id = identity_rot6d();
  for (const auto& r : rotations) {
    const Rot6D v = matrix_to_rot6d(r) - id;
    out.insert(out.end(), v.data(), v.data() + 6);
  }
  return out;
}

std::vector<Eigen::Matrix3d> rotations_from_pose_vector(std::span<const double> pose) {
  if (pose.size() % 6 != 0) throw ShapeError("pose vector length must be a multiple of 6");
  std::vector<Eigen::Matrix3d> out;
  const Rot6D id = identity_rot6d();
  for (std::size_t j = 0; j < pose.size() / 6; ++j) {
    out.push_back(rot6d_to_matrix(Rot6D(Eigen::Map<const Rot6D>(pose.data() + 6 * j)) + id));
  }
  return out;
}

namespace {

Tensor absolute_6d(const Tensor& pose) {
  if (pose.rank() != 2 || pose.dim(1) % 6 != 0) throw ShapeError("pose vector batch must be [M,6J], got " + shape_str(pose.shape()));
  const Tensor id({6}, {1, 0, 0, 0, 1, 0});
  const std::size_t m = pose.dim(0), j = pose.dim(1) / 6;
  return reshape(add(reshape(pose, {m * j, 6}), id), {m, j, 6});
}

}  // namespace

Tensor pose_vector_to_rotations(const Tensor& pose) { return rot6d_to_matrix(absolute_6d(pose)); }

Tensor pose_vector_orth_residual(const Tensor& pose) { return sum(orth_residual(absolute_6d(pose)), 1); }

}  // namespace flowpose
