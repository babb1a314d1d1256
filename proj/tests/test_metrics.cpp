#include <doctest.h>

#include <cmath>
#include <numbers>

#include "flowpose/metrics.hpp"
#include "flowpose/random.hpp"
#include "flowpose/rotations.hpp"

using namespace flowpose;

namespace {

Points random_points(std::size_t k, Rng& rng) {
  Points p(k, 3);
  for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = standard_normal(rng);
  return p;
}

Eigen::Matrix3d random_rotation(Rng& rng) {
  Eigen::Vector3d axis(standard_normal(rng), standard_normal(rng), standard_normal(rng));
  return axis_angle_to_matrix(axis.normalized() * uniform(rng, 0.0, std::numbers::pi));
}

Points similarity(const Points& p, double s, const Eigen::Matrix3d& r, const Eigen::RowVector3d& t) {
  return ((s * p * r.transpose()).rowwise() + t).eval();
}

double residual(const Points& a, const Points& b) { return (a - b).squaredNorm(); }

}  // namespace

TEST_CASE("procrustes alignment") {
  Rng rng(1);
  SUBCASE("identical sets align to themselves") {
    const auto gt = random_points(8, rng);
    CHECK(residual(procrustes_align(gt, gt), gt) < 1e-24);
  }
  SUBCASE("exact recovery of a similarity transform") {
    for (int trial = 0; trial < 50; ++trial) {
      const auto gt = random_points(8, rng);
      const auto pred = similarity(gt, 2.0, random_rotation(rng), Eigen::RowVector3d(1.0, -2.0, 0.5));
      CHECK(residual(procrustes_align(pred, gt), gt) < 1e-9);
    }
  }
  SUBCASE("optimal against random similarity transforms") {
    for (int trial = 0; trial < 10; ++trial) {
      const auto gt = random_points(8, rng);
      Points noisy = gt + 0.2 * random_points(8, rng);
      const double best = residual(procrustes_align(noisy, gt), gt);
      for (int k = 0; k < 100; ++k) {
        const auto candidate = similarity(noisy, uniform(rng, 0.5, 1.5), random_rotation(rng),
                                          Eigen::RowVector3d(uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1)));
        CHECK(best <= residual(candidate, gt) + 1e-12);
      }
    }
  }
  SUBCASE("planar sets still determine the rotation") {
    Points planar = random_points(8, rng);
    planar.col(2).setZero();
    const auto pred = similarity(planar, 0.7, random_rotation(rng), Eigen::RowVector3d(0.1, 0.2, 0.3));
    CHECK(residual(procrustes_align(pred, planar), planar) < 1e-18);
  }
  SUBCASE("degenerate sets are rejected") {
    Points line(5, 3);
    for (int i = 0; i < 5; ++i) line.row(i) = Eigen::RowVector3d(i, 2.0 * i, -i);
    CHECK_THROWS_AS(procrustes_align(line, random_points(5, rng)), DomainError);
    CHECK_THROWS_AS(procrustes_align(Points::Zero(5, 3), random_points(5, rng)), DomainError);
  }
}

TEST_CASE("pa_mpjpe") {
  Rng rng(2);
  const auto gt = random_points(8, rng);
  CHECK(pa_mpjpe(gt, gt) < 1e-9);
  CHECK(pa_mpjpe(similarity(gt, 1.7, random_rotation(rng), Eigen::RowVector3d(3, 0, -1)), gt) < 1e-6);
  CHECK_THROWS_AS(pa_mpjpe(random_points(7, rng), gt), ShapeError);

  // Symmetric fixture: a cube's corners plus a 1 cm push of one corner along
  // its own diagonal, mirrored by the opposite corner so the centroid, scale
  // and orientation of the optimal fit stay the identity.
  Points cube(8, 3);
  int row = 0;
  for (int x : {-1, 1}) {
    for (int y : {-1, 1}) {
      for (int z : {-1, 1}) cube.row(row++) = Eigen::RowVector3d(x, y, z) * 0.1;
    }
  }
  Points pred = cube;
  const Eigen::RowVector3d dir = cube.row(7).normalized();
  pred.row(7) += 0.01 * dir;
  pred.row(0) -= 0.01 * dir;
  // The optimal scale shrinks the two pushed corners back by the same factor.
  const double r = cube.row(7).norm();
  const double s = (6 * r * r + 2 * r * (r + 0.01)) / (6 * r * r + 2 * (r + 0.01) * (r + 0.01));
  const double expected = (6 * (1 - s) * r + 2 * std::abs(s * (r + 0.01) - r)) / 8 * 1000;
  CHECK(pa_mpjpe(pred, cube) == doctest::Approx(expected).epsilon(1e-9));
}

TEST_CASE("mpjpe") {
  Rng rng(3);
  const auto gt = random_points(8, rng);
  CHECK(mpjpe(gt, gt) == 0.0);
  CHECK(mpjpe((gt.rowwise() + Eigen::RowVector3d(1, 2, 3)).eval(), gt) < 1e-12);
  CHECK(mpjpe(similarity(gt, 1.0, random_rotation(rng), Eigen::RowVector3d::Zero()), gt) > 1.0);
  const auto pred = random_points(8, rng);
  double oracle = 0.0;
  for (int j = 0; j < 8; ++j) {
    double sq = 0.0;
    for (int a = 0; a < 3; ++a) {
      const double d = (pred(j, a) - pred(0, a)) - (gt(j, a) - gt(0, a));
      sq += d * d;
    }
    oracle += std::sqrt(sq);
  }
  CHECK(mpjpe(pred, gt) == doctest::Approx(oracle / 8 * 1000).epsilon(1e-12));
  CHECK_THROWS_AS(mpjpe(random_points(7, rng), gt), ShapeError);
}

TEST_CASE("pa_mpjpe stays below mpjpe on a seeded random set") {
  Rng rng(4);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto gt = random_points(8, rng);
    const auto pred = gt + uniform(rng, 0.01, 1.0) * random_points(8, rng);
    CHECK(pa_mpjpe(pred, gt) <= mpjpe(pred, gt) + 1e-9);
  }
}

// The alignment minimizes the sum of squared distances, while both metrics
// report the mean distance, so the ordering is typical rather than guaranteed.
TEST_CASE("pa_mpjpe can exceed mpjpe") {
  Points gt(4, 3), pred(4, 3);
  gt << 1.5, -1.1, 1.3, -0.8, 0.7, -1.9, 0.5, 0.0, -0.8, 2.2, 2.6, -0.1;
  pred << 0.9, -1.0, 1.5, -1.4, 0.9, -1.5, 2.1, 0.1, -1.1, 1.5, 2.2, -0.1;
  CHECK(pa_mpjpe(pred, gt) == doctest::Approx(931.4897).epsilon(1e-6));
  CHECK(mpjpe(pred, gt) == doctest::Approx(756.8580).epsilon(1e-6));
  CHECK(residual(procrustes_align(pred, gt), gt) < residual(pred.rowwise() + (gt.row(0) - pred.row(0)), gt));
}

TEST_CASE("mpve") {
  Rng rng(5);
  const auto gt = random_points(64, rng);
  const Eigen::Vector3d root(0.1, 0.2, 0.3);
  CHECK(mpve(gt, gt, root, root) == 0.0);
  const Points shifted = (gt.rowwise() + Eigen::RowVector3d(0.003, 0.0, 0.004)).eval();
  CHECK(mpve(shifted, gt, root, root) == doctest::Approx(5.0).epsilon(1e-12));
  const auto pred = random_points(64, rng);
  double oracle = 0.0;
  for (int v = 0; v < 64; ++v) {
    const Eigen::Vector3d d = (pred.row(v).transpose() - root) - (gt.row(v).transpose() - root);
    oracle += d.norm();
  }
  CHECK(mpve(pred, gt, root, root) == doctest::Approx(oracle / 64 * 1000).epsilon(1e-12));
  CHECK_THROWS_AS(mpve(random_points(63, rng), gt, root, root), ShapeError);
}

TEST_CASE("accel_error") {
  Rng rng(6);
  std::vector<Points> gt, pred, drift_pred, drift_gt;
  const Points v = random_points(8, rng), offset = random_points(8, rng);
  for (int t = 0; t < 10; ++t) {
    gt.push_back(random_points(8, rng));
    pred.push_back(random_points(8, rng));
    drift_pred.push_back(gt.back() + offset + static_cast<double>(t) * v);
  }
  CHECK(accel_error(gt, gt, 30) == 0.0);
  CHECK(accel_error(drift_pred, gt, 30) < 1e-6);
  // Shared affine drift leaves the error unchanged.
  std::vector<Points> pred2 = pred, gt2 = gt;
  for (int t = 0; t < 10; ++t) {
    pred2[t] += offset + static_cast<double>(t) * v;
    gt2[t] += offset + static_cast<double>(t) * v;
  }
  CHECK(accel_error(pred2, gt2, 30) == doctest::Approx(accel_error(pred, gt, 30)).epsilon(1e-9));
  double oracle = 0.0;
  for (int t = 1; t < 9; ++t) {
    for (int j = 0; j < 8; ++j) {
      double sq = 0.0;
      for (int a = 0; a < 3; ++a) {
        const double ap = pred[t + 1](j, a) - 2 * pred[t](j, a) + pred[t - 1](j, a);
        const double ag = gt[t + 1](j, a) - 2 * gt[t](j, a) + gt[t - 1](j, a);
        sq += (ap - ag) * (ap - ag);
      }
      oracle += std::sqrt(sq);
    }
  }
  CHECK(accel_error(pred, gt, 25) == doctest::Approx(oracle / (8 * 8) * 625 * 1000).epsilon(1e-12));
  CHECK_THROWS_AS(accel_error({gt[0], gt[1]}, {gt[0], gt[1]}, 30), ShapeError);
}

TEST_CASE("min_over_n") {
  Rng rng(7);
  const auto gt = random_points(8, rng);
  std::vector<Points> hyps;
  for (int i = 0; i < 10; ++i) hyps.push_back(gt + 0.3 * random_points(8, rng));
  CHECK(min_over_n({hyps[0]}, gt) == pa_mpjpe(hyps[0], gt));
  double previous = 1e300;
  for (std::size_t n = 1; n <= hyps.size(); ++n) {
    const double v = min_over_n(std::vector<Points>(hyps.begin(), hyps.begin() + static_cast<long>(n)), gt);
    CHECK(v <= previous);
    previous = v;
  }
  hyps.push_back(gt);
  CHECK(min_over_n(hyps, gt) < 1e-9);
  CHECK_THROWS_AS(min_over_n({}, gt), ShapeError);
}
