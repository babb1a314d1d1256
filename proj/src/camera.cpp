#include "flowpose/camera.hpp"

namespace flowpose {

std::vector<Eigen::Vector2d> project(const std::vector<Eigen::Vector3d>& points, const CameraParams& cam) {
  if (!(cam.scale > 0.0)) throw DomainError("project: camera scale must be positive");
  std::vector<Eigen::Vector2d> out;
  out.reserve(points.size());
  for (const auto& p : points) out.emplace_back(cam.scale * p.head<2>() + cam.translation);
  return out;
}

Tensor project(const Tensor& points, const Tensor& cam) {
  if (points.rank() != 3 || points.dim(2) != 3 || cam.rank() != 2 || cam.dim(1) != 3 || cam.dim(0) != points.dim(0)) {
    throw ShapeError("project: incompatible shapes " + shape_str(points.shape()) + " and " + shape_str(cam.shape()));
  }
  const std::size_t frames = points.dim(0), k = points.dim(1);
  auto p = points.data();
  auto c = cam.data();
  std::vector<double> out(frames * k * 2);
  for (std::size_t m = 0; m < frames; ++m) {
    const double s = c[3 * m];
    if (!(s > 0.0)) throw DomainError("project: camera scale must be positive (frame " + std::to_string(m) + ")");
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t pi = (m * k + i) * 3, oi = (m * k + i) * 2;
      out[oi] = s * p[pi] + c[3 * m + 1];
      out[oi + 1] = s * p[pi + 1] + c[3 * m + 2];
    }
  }
  return make_result("project", {frames, k, 2}, std::move(out), {points, cam},
                     [points, cam, frames, k](std::span<const double> g, GradientSink& sink) {
                       double* gp = sink(0);
                       double* gc = sink(1);
                       auto p = points.data();
                       auto c = cam.data();
                       for (std::size_t m = 0; m < frames; ++m) {
                         const double s = c[3 * m];
                         for (std::size_t i = 0; i < k; ++i) {
                           const std::size_t pi = (m * k + i) * 3, oi = (m * k + i) * 2;
                           if (gp) {
                             gp[pi] += s * g[oi];
                             gp[pi + 1] += s * g[oi + 1];
                           }
                           if (gc) {
                             gc[3 * m] += g[oi] * p[pi] + g[oi + 1] * p[pi + 1];
                             gc[3 * m + 1] += g[oi];
                             gc[3 * m + 2] += g[oi + 1];
                           }
                         }
                       }
                     });
}

}  // namespace flowpose
