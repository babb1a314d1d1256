#pragma once

// Mixed-supervision training: batch assembly, the generator objective, the
// discriminator objective and the alternating optimization loop.

#include <functional>
#include <string>
#include <vector>

#include "flowpose/adam.hpp"
#include "flowpose/losses.hpp"
#include "flowpose/model.hpp"

namespace flowpose {

/// S sequences of T frames flattened to S*T rows (row = s*T + t).
struct Batch {
  std::size_t sequences = 0;
  std::size_t frames = 0;
  Tensor observations;  // [S*T, 3J], encoder input built from noisy keypoints
  Tensor keypoints;     // [S*T, J, 2], noisy
  Tensor confidence;    // [S*T, J]
  Tensor gt_pose;       // [S*T, 6J], zeros where no pose annotation exists
  Tensor gt_beta;       // [S*T, B]
  Tensor gt_joints3d;   // [S*T, J, 3]
  Tensor real_motion;   // [S, T, 6J], clean trajectories for the discriminator
  std::vector<long> pose_rows, beta_rows, joints_rows;  // rows carrying each annotation
};

/// Uses frames [offset, offset + frames) of every sequence.
Batch make_batch(const std::vector<const SyntheticSequence*>& sequences, std::size_t frames, std::size_t offset = 0);

/// Model outputs for one batch.
struct ForwardPass {
  Tensor context;                      // [M, C]
  RegressionHead::Output head;         // beta [M, B], cam [M, 3]
  ConditionalFlow::Prepared prepared;  // for the M contexts
  Tensor mode;                         // [M, d]
  MeshTensors mode_mesh;
  std::size_t samples = 0;
  Tensor sample_poses;   // [M*n, d], row m*n + k is draw k for row m
  Tensor sample_joints;  // [M*n, J, 3]
};

/// Runs the encoders, head and flow; draws `samples` latents per row from rng.
ForwardPass run_forward(const PoseModel& model, const Batch& batch, std::size_t samples, Rng& rng);

/// Regroups per-row poses [S*T*n, d] (row (s*T + t)*n + k) into motions
/// [S*n, T, d] ordered by (s, k).
Tensor motions_from_rows(const Tensor& rows, std::size_t sequences, std::size_t frames, std::size_t per_row);

/// The generator objective for a batch with its per-term report. `disc`
/// should be a frozen copy so the adversarial terms train only the generator.
struct GeneratorLoss {
  Tensor total;
  LossReport report;
};
GeneratorLoss generator_loss(const PoseModel& model, const MotionDiscriminator& disc, const Batch& batch,
                             const ForwardPass& pass, const LossWeights& weights);

/// disc_loss on the batch's real motions versus detached mode and sample motions.
Tensor discriminator_loss(const MotionDiscriminator& disc, const Batch& batch, const ForwardPass& pass);

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  std::size_t frames = 16;
  double lr = 5e-5;
  std::uint64_t seed = 1;
  std::size_t samples = 2;
  bool freeze_encoder = false;  // keep the observation encoder fixed
  LossWeights weights;
  std::string checkpoint_path;  // written after every epoch when non-empty
  std::string log_path;         // CSV metrics log when non-empty
};

struct ValidationMetrics {
  double nll = 0.0;
  double pa_mpjpe_mm = 0.0;
  double mpjpe_mm = 0.0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  std::size_t batches = 0;
  LossReport train;        // mean of batch reports (terms present in any batch)
  double disc_loss = 0.0;  // mean discriminator loss over the epoch
  double disc_loss_max = 0.0;
  double disc_loss_min = 0.0;
  ValidationMetrics validation;
};

/// Mode-based validation metrics over whole sequences.
ValidationMetrics validate(const PoseModel& model, const std::vector<SyntheticSequence>& sequences);

/// Header of the CSV metrics log.
std::string metrics_csv_header();
std::string metrics_csv_row(const EpochRecord& record);

class TrainingError : public Error {
 public:
  using Error::Error;
};

/// Alternates a generator step (total loss) and a discriminator step per
/// batch. Row 0 of the returned history is the untrained validation.
/// A non-finite loss aborts with TrainingError; the checkpoint on disk then
/// still holds the last completed epoch.
std::vector<EpochRecord> train(PoseModel& model, const std::vector<SyntheticSequence>& training,
                               const std::vector<SyntheticSequence>& validation, const TrainConfig& config,
                               const std::function<void(const EpochRecord&)>& on_epoch = {});

}  // namespace flowpose
