#include <doctest.h>

#include <cmath>
#include <numbers>

#include "flowpose/grad_check.hpp"
#include "flowpose/random.hpp"
#include "flowpose/rotations.hpp"

using namespace flowpose;

namespace {

constexpr double kPi = std::numbers::pi;

Eigen::Matrix3d random_rotation(Rng& rng) {
  Eigen::Vector3d axis(standard_normal(rng), standard_normal(rng), standard_normal(rng));
  return axis_angle_to_matrix(axis.normalized() * uniform(rng, 0.0, kPi));
}

// Independent Gram-Schmidt written out component by component.
Eigen::Matrix3d gram_schmidt_oracle(const Rot6D& r) {
  const Eigen::Vector3d a1 = r.head<3>(), a2 = r.tail<3>();
  const Eigen::Vector3d b1 = a1 / std::sqrt(a1.dot(a1));
  const Eigen::Vector3d e = a2 - b1.dot(a2) * b1;
  const Eigen::Vector3d b2 = e / std::sqrt(e.dot(e));
  const Eigen::Vector3d b3(b1.y() * b2.z() - b1.z() * b2.y(), b1.z() * b2.x() - b1.x() * b2.z(),
                           b1.x() * b2.y() - b1.y() * b2.x());
  Eigen::Matrix3d m;
  m.col(0) = b1;
  m.col(1) = b2;
  m.col(2) = b3;
  return m;
}

Eigen::Matrix3d rodrigues_oracle(const Eigen::Vector3d& v) {
  const double angle = v.norm();
  if (angle == 0.0) return Eigen::Matrix3d::Identity();
  const Eigen::Vector3d k = v / angle;
  Eigen::Matrix3d kx;
  kx << 0, -k.z(), k.y(), k.z(), 0, -k.x(), -k.y(), k.x(), 0;
  return Eigen::Matrix3d::Identity() + std::sin(angle) * kx + (1 - std::cos(angle)) * kx * kx;
}

Rot6D r6(double a, double b, double c, double d, double e, double f) {
  Rot6D r;
  r << a, b, c, d, e, f;
  return r;
}

}  // namespace

TEST_CASE("rot6d_to_matrix examples") {
  CHECK(rot6d_to_matrix(r6(1, 0, 0, 0, 1, 0)).isApprox(Eigen::Matrix3d::Identity(), 1e-15));
  CHECK((rot6d_to_matrix(r6(2, 0, 0, 0, 5, 0)) - Eigen::Matrix3d::Identity()).norm() < 1e-15);
  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    Rot6D r;
    for (int k = 0; k < 6; ++k) r[k] = standard_normal(rng);
    const auto m = rot6d_to_matrix(r);
    CHECK((m.transpose() * m - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-9);
    CHECK(std::abs(m.determinant() - 1.0) < 1e-9);
    CHECK((m - gram_schmidt_oracle(r)).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("rot6d_to_matrix rejects degenerate inputs") {
  CHECK_THROWS_AS(rot6d_to_matrix(r6(0, 0, 0, 0, 1, 0)), DomainError);
  CHECK_THROWS_AS(rot6d_to_matrix(r6(1, 2, 3, 2, 4, 6)), DomainError);
}

TEST_CASE("rot6d_to_matrix invariances") {
  Rng rng(2);
  for (int i = 0; i < 50; ++i) {
    Rot6D r;
    for (int k = 0; k < 6; ++k) r[k] = standard_normal(rng);
    Rot6D scaled = r;
    scaled.head<3>() *= uniform(rng, 0.1, 10.0);
    Rot6D sheared = r;
    sheared.tail<3>() += uniform(rng, -3.0, 3.0) * r.head<3>();
    CHECK((rot6d_to_matrix(scaled) - rot6d_to_matrix(r)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((rot6d_to_matrix(sheared) - rot6d_to_matrix(r)).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("matrix_to_rot6d examples") {
  CHECK(matrix_to_rot6d(Eigen::Matrix3d::Identity()) == r6(1, 0, 0, 0, 1, 0));
  const auto quarter = matrix_to_rot6d(axis_angle_to_matrix(Eigen::Vector3d(0, 0, kPi / 2)));
  CHECK((quarter - r6(0, 1, 0, -1, 0, 0)).cwiseAbs().maxCoeff() < 1e-15);
  Eigen::Matrix3d skewed = Eigen::Matrix3d::Identity();
  skewed(0, 1) = 0.01;
  CHECK_THROWS_AS(matrix_to_rot6d(skewed), DomainError);
  CHECK_THROWS_AS(matrix_to_rot6d(-Eigen::Matrix3d::Identity()), DomainError);
  Rng rng(3);
  for (int i = 0; i < 50; ++i) {
    const auto r = random_rotation(rng);
    CHECK((rot6d_to_matrix(matrix_to_rot6d(r)) - r).cwiseAbs().maxCoeff() < 1e-9);
    CHECK(orth_residual(matrix_to_rot6d(r)) < 1e-20);
  }
}

TEST_CASE("axis_angle_to_matrix examples") {
  CHECK(axis_angle_to_matrix(Eigen::Vector3d::Zero()) == Eigen::Matrix3d::Identity());
  const Eigen::Matrix3d half = axis_angle_to_matrix(Eigen::Vector3d(kPi, 0, 0));
  CHECK((half - Eigen::Vector3d(1, -1, -1).asDiagonal().toDenseMatrix()).cwiseAbs().maxCoeff() < 1e-15);
  Eigen::Matrix3d quarter;
  quarter << 0, -1, 0, 1, 0, 0, 0, 0, 1;
  CHECK((axis_angle_to_matrix(Eigen::Vector3d(0, 0, kPi / 2)) - quarter).cwiseAbs().maxCoeff() < 1e-15);
  Rng rng(4);
  for (int i = 0; i < 50; ++i) {
    const Eigen::Vector3d v(uniform(rng, -2, 2), uniform(rng, -2, 2), uniform(rng, -2, 2));
    CHECK((axis_angle_to_matrix(v) - rodrigues_oracle(v)).cwiseAbs().maxCoeff() < 1e-13);
  }
  // Taylor branch stays continuous with the closed form.
  const Eigen::Vector3d tiny(3e-9, -1e-9, 2e-9);
  CHECK((axis_angle_to_matrix(tiny) - rodrigues_oracle(tiny)).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("matrix_to_axis_angle examples and round trips") {
  CHECK(matrix_to_axis_angle(Eigen::Matrix3d::Identity()).norm() == 0.0);
  const auto half = matrix_to_axis_angle(Eigen::Vector3d(1, -1, -1).asDiagonal().toDenseMatrix());
  CHECK((half - Eigen::Vector3d(kPi, 0, 0)).norm() < 1e-12);
  Rng rng(5);
  for (int i = 0; i < 50; ++i) {
    const auto r = random_rotation(rng);
    const auto v = matrix_to_axis_angle(r);
    CHECK(v.norm() <= kPi + 1e-12);
    CHECK((axis_angle_to_matrix(v) - r).cwiseAbs().maxCoeff() < 1e-8);
  }
  // Angles at and just below pi, where the sine branch is ill conditioned.
  for (int i = 0; i < 50; ++i) {
    Eigen::Vector3d axis(standard_normal(rng), standard_normal(rng), standard_normal(rng));
    axis.normalize();
    for (double angle : {kPi, kPi - 1e-7, kPi - 5e-4, kPi - 2e-3}) {
      const auto r = axis_angle_to_matrix(axis * angle);
      const auto v = matrix_to_axis_angle(r);
      CHECK(v.norm() <= kPi + 1e-12);
      CHECK((axis_angle_to_matrix(v) - r).cwiseAbs().maxCoeff() < 1e-8);
    }
  }
  CHECK_THROWS_AS(matrix_to_axis_angle(2.0 * Eigen::Matrix3d::Identity()), DomainError);
}

TEST_CASE("orth_residual examples") {
  CHECK(orth_residual(r6(1, 0, 0, 0, 1, 0)) == 0.0);
  CHECK(orth_residual(r6(2, 0, 0, 0, 1, 0)) == doctest::Approx(1.0).epsilon(1e-15));
  Rng rng(6);
  for (int i = 0; i < 50; ++i) {
    Rot6D r;
    for (int k = 0; k < 6; ++k) r[k] = standard_normal(rng);
    const auto m = gram_schmidt_oracle(r);
    Rot6D back;
    back << m.col(0), m.col(1);
    CHECK(std::abs(orth_residual(r) - (r - back).squaredNorm()) < 1e-10);
  }
  CHECK_THROWS_AS(orth_residual(r6(0, 0, 0, 1, 0, 0)), DomainError);
}

TEST_CASE("tensor rotation ops agree with the value versions and pass grad_check") {
  Rng rng(7);
  std::vector<double> raw(5 * 6);
  for (auto& v : raw) v = standard_normal(rng);
  const Tensor batch({5, 6}, raw);
  const auto mats = rot6d_to_matrix(batch);
  const auto res = orth_residual(batch);
  CHECK(mats.shape() == Shape{5, 3, 3});
  for (std::size_t m = 0; m < 5; ++m) {
    const Rot6D r = Eigen::Map<const Rot6D>(raw.data() + 6 * m);
    const auto expected = rot6d_to_matrix(r);
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) CHECK(mats.at(m * 9 + i * 3 + j) == doctest::Approx(expected(i, j)).epsilon(1e-14));
    }
    CHECK(res.at(m) == doctest::Approx(orth_residual(r)).epsilon(1e-12));
  }
  Tensor weights({5, 3, 3}, std::vector<double>(45));
  {
    std::vector<double> w(45);
    for (auto& v : w) v = standard_normal(rng);
    weights = Tensor({5, 3, 3}, w);
  }
  CHECK(grad_check([&](const Tensor& x) { return sum(mul(rot6d_to_matrix(x), weights)); }, batch) < 1e-4);
  CHECK(grad_check([&](const Tensor& x) { return sum(orth_residual(x)); }, batch) < 1e-4);
}

TEST_CASE("pose vectors use the rest pose as origin") {
  const std::vector<Eigen::Matrix3d> rest(3, Eigen::Matrix3d::Identity());
  const auto v = pose_vector_from_rotations(rest);
  CHECK(v == std::vector<double>(18, 0.0));
  Rng rng(8);
  std::vector<Eigen::Matrix3d> rots;
  for (int j = 0; j < 4; ++j) rots.push_back(random_rotation(rng));
  const auto pose = pose_vector_from_rotations(rots);
  const auto back = rotations_from_pose_vector(pose);
  for (int j = 0; j < 4; ++j) CHECK((back[j] - rots[j]).cwiseAbs().maxCoeff() < 1e-12);
  const Tensor t({1, 24}, pose);
  const auto tm = pose_vector_to_rotations(t);
  CHECK(tm.shape() == Shape{1, 4, 3, 3});
  for (int j = 0; j < 4; ++j) {
    for (int a = 0; a < 3; ++a) {
      for (int b = 0; b < 3; ++b) CHECK(tm.at(j * 9 + a * 3 + b) == doctest::Approx(rots[j](a, b)).epsilon(1e-12));
    }
  }
  CHECK(pose_vector_orth_residual(t).item() < 1e-20);
}
