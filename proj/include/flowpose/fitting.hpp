#pragma once

// Optimization-based fitting of per-frame pose, shape and camera to 2D
// keypoints, with the conditional flow acting as a video-conditioned prior.
// The pose is optimized through its latent z, so every iterate is an exact
// flow output theta = f(z; c).

#include <string>
#include <vector>

#include "flowpose/model.hpp"

namespace flowpose {

struct FitConfig {
  double lambda_joints = 1.0;
  double lambda_prior = 0.1;
  double lambda_shape = 0.001;
  double lr = 0.01;
  std::size_t max_iters = 300;
  /// Stops once consecutive energies differ by less than tol * max(1, |E|).
  double tolerance = 1e-9;
  /// E_J is measured in pixels of a square crop this wide; keypoints in
  /// normalized crop units are scaled by half of it.
  double reference_crop_px = 224.0;
  void validate() const;
};

/// Energy and its weighted parts. total = joints + prior + shape.
struct EnergyTerms {
  double joints = 0.0;  // lambda_J * sum_t sum_j c |proj - x|^2, in reference-crop pixels
  double prior = 0.0;   // lambda_V * sum_t -ln p(theta_t | c_t)
  double shape = 0.0;   // lambda_beta * sum_t |beta_t|^2
  double total = 0.0;
};

/// Fixed data of one fitting problem: contexts, observed keypoints and weights.
class FitProblem {
 public:
  /// keypoints [T, J, 2], confidence [T, J].
  FitProblem(const PoseModel& model, const Regression& regression, Tensor keypoints, Tensor confidence,
             FitConfig config);

  /// Differentiable total energy and its breakdown. z [T, d], beta [T, B],
  /// cam_raw [T, 3] rows (ln s, tx, ty).
  struct Evaluation {
    Tensor total;
    EnergyTerms terms;
    std::vector<double> per_frame;  // weighted energy of each frame
    Tensor theta;  // f(z; c)
    MeshTensors mesh;
  };
  Evaluation evaluate(const Tensor& z, const Tensor& beta, const Tensor& cam_raw) const;

  const PoseModel& model() const { return *model_; }
  std::size_t frames() const { return keypoints_.dim(0); }
  const FitConfig& config() const { return config_; }

 private:
  const PoseModel* model_;
  ConditionalFlow::Prepared prepared_;
  Tensor keypoints_, confidence_;
  FitConfig config_;
  double prior_constant_;  // d/2 ln(2 pi) + log|det df/dz| per frame
};

/// Camera rows (s, tx, ty) from optimizer rows (ln s, tx, ty).
Tensor camera_from_raw(const Tensor& cam_raw);

struct FitResult {
  std::size_t frames = 0, joints = 0, shapes = 0;
  std::vector<double> z;           // T x d, best iterate
  std::vector<double> theta;       // T x d pose vectors, f(z; c)
  std::vector<double> axis_angle;  // T x J x 3
  std::vector<double> beta;        // T x B
  std::vector<double> cam;         // T x 3 (s, tx, ty)
  std::vector<double> joints3d;    // T x J x 3
  std::vector<double> vertices;    // T x N x 3
  std::vector<double> trace;       // energy of iterate k, k = 0 is the initialization
  std::vector<std::vector<double>> frame_trace;  // [frame][k], per-frame share of trace[k]
  EnergyTerms initial, final_terms;
  std::size_t best_iteration = 0;
  bool converged = false;  // stopped on the tolerance before max_iters
  FitConfig config;
};

class FitDivergedError : public Error {
 public:
  using Error::Error;
};

/// Initializes at the regression mode (z = 0) with the head's shape and camera,
/// then runs Adam on (z, beta, ln s, t). Returns the lowest-energy iterate.
/// Throws FitDivergedError when the energy exceeds E0 + 9|E0| (ten times a
/// positive initial energy) or becomes non-finite.
FitResult fit(const PoseModel& model, const KeypointSequence& keypoints, const FitConfig& config);

/// JSON document with per-frame theta_axis_angle, beta, cam and the run's trace.
std::string fit_result_json(const FitResult& result);

}  // namespace flowpose
