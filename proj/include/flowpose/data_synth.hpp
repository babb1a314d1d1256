#pragma once

// Synthetic supervision standing in for image datasets and a mocap pool:
// smooth sinusoidal joint trajectories rendered through the body model and a
// weak-perspective camera, with noisy/occluded 2D keypoint observations.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "flowpose/body_model.hpp"
#include "flowpose/camera.hpp"
#include "flowpose/parameters.hpp"

namespace flowpose {

enum Annotation : std::uint32_t {
  kHasTheta = 1u << 0,
  kHasBeta = 1u << 1,
  kHasJoints3d = 1u << 2,
  kAllAnnotations = kHasTheta | kHasBeta | kHasJoints3d,
};

struct SynthConfig {
  std::size_t frames = 16;
  double fps = 30.0;
  double noise_sigma = 0.01;
  double occlusion = 0.1;
  double beta_sigma = 0.5;
  double max_amplitude = 0.6;  // rad, per sinusoid
  double min_period = 12.0;    // frames
  double max_period = 48.0;    // frames
  std::size_t max_sinusoids = 3;
  double partial_fraction = 0.0;  // share of sequences carrying 2D keypoints only
};

struct SyntheticSequence {
  std::size_t frames = 0, joints = 0, vertices = 0, shapes = 0;
  double fps = 30.0;
  std::uint32_t annotations = kAllAnnotations;
  std::vector<double> gt_axis_angle;    // T x J x 3
  std::vector<double> gt_beta;          // B, shared by all frames
  std::array<double, 3> gt_cam{};       // s, tx, ty
  std::vector<double> gt_joints3d;      // T x J x 3
  std::vector<double> gt_vertices;      // T x N x 3
  std::vector<double> clean_keypoints;  // T x J x 2
  std::vector<double> noisy_keypoints;  // T x J x 2
  std::vector<double> confidence;       // T x J
  std::vector<double> accel_bound;      // J x 3, analytic bound on |second difference| of each angle component

  bool has(Annotation a) const { return (annotations & a) != 0; }
  /// Per-frame, per-joint 6D pose vectors as rest-pose offsets (T x 6J).
  std::vector<double> gt_pose_vectors() const;
};

SyntheticSequence generate_sequence(Rng& rng, const BodyModel& model, const SynthConfig& config);
/// Sequence i is drawn from an independent generator seeded by (seed, i).
std::vector<SyntheticSequence> generate_dataset(std::size_t count, std::uint64_t seed, const BodyModel& model,
                                                const SynthConfig& config);

/// Stand-in for a frozen image backbone: flattened (x*c, y*c, c) keypoint
/// rows -> F-dimensional frame features.
class ObservationEncoder {
 public:
  ObservationEncoder() = default;
  ObservationEncoder(std::size_t joints, std::size_t hidden, std::size_t feature_dim, Rng& rng);

  /// observations [M, 3J] -> features [M, F].
  Tensor encode(const Tensor& observations) const;
  void collect(ParameterStore& store, const std::string& prefix) const { net.collect(store, prefix); }
  std::size_t joints() const { return joints_; }

  TwoLayer net;

 private:
  std::size_t joints_ = 0;
};

/// Packs keypoints (T x J x 2) and confidences (T x J) into encoder rows.
Tensor observation_rows(const std::vector<double>& keypoints, const std::vector<double>& confidence,
                        std::size_t joints);

inline constexpr std::uint32_t kDatasetVersion = 1;

void write_dataset(const std::vector<SyntheticSequence>& sequences, const std::string& path);
std::vector<SyntheticSequence> read_dataset(const std::string& path);

/// Keypoints in normalized crop coordinates.
struct KeypointSequence {
  double fps = 30.0;
  std::size_t joints = 0;
  std::size_t frames = 0;
  std::vector<double> keypoints;   // T x J x 2
  std::vector<double> confidence;  // T x J
};

struct CropBox {
  double cx = 256.0;
  double cy = 256.0;
  double size = 512.0;
};

/// Reads the per-frame detection JSON; pixel coordinates are mapped to
/// (p - centre) / (size / 2). A null or empty joint entry gets confidence 0.
KeypointSequence ingest_keypoints(const std::string& path);
/// Writes the same schema with one crop for every frame.
void write_keypoints_json(const KeypointSequence& keypoints, const CropBox& crop, const std::string& path);

}  // namespace flowpose
