#pragma once

// The full estimator: observation encoder -> temporal encoder -> per-frame
// context, which conditions the pose flow and the shape/camera head, plus the
// motion discriminator used as an adversarial prior during training.

#include <string>

#include "flowpose/body_model.hpp"
#include "flowpose/data_synth.hpp"
#include "flowpose/discriminator.hpp"
#include "flowpose/flow.hpp"
#include "flowpose/regression_head.hpp"
#include "flowpose/temporal_encoder.hpp"

namespace flowpose {

struct ModelConfig {
  std::string body_model;  // model file; empty selects the bundled toy model
  std::size_t observation_hidden = 64;
  std::size_t head_hidden = 64;
  std::size_t flow_blocks = 4;
  std::size_t flow_hidden = 64;
  double flow_init_scale = 0.25;  // initial spread of p(theta|c) around its mode
  EncoderConfig encoder;
  std::size_t disc_hidden = 64;
  std::size_t disc_layers = 2;
};

/// Single-sequence regression outputs, computed without gradient recording.
struct Regression {
  Tensor context;                      // [T, C]
  ConditionalFlow::Prepared prepared;  // for the T contexts
  Tensor mode;                         // [T, d]
  Tensor beta;                         // [T, B]
  Tensor cam;                          // [T, 3]
  MeshTensors mesh;                    // posed mode mesh
};

class PoseModel {
 public:
  /// Fresh initialization; every sub-network draws from its own stream of `seed`.
  static PoseModel create(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  std::size_t pose_dim() const { return 6 * body.joint_count; }

  /// Checkpoint names under "obs/", "encoder/", "flow/", "head/".
  ParameterStore generator_parameters(bool include_observation_encoder = true) const;
  /// Checkpoint names under "disc/".
  ParameterStore discriminator_parameters() const;
  ParameterStore all_parameters() const;

  void save(const std::string& path) const;
  /// Overwrites every parameter from a checkpoint written by save().
  void load(const std::string& path);

  /// observations [S*T, 3J] for S sequences of T frames -> contexts [S*T, C].
  Tensor contexts(const Tensor& observations, std::size_t sequences, std::size_t frames) const;

  /// Mode regression for one sequence of observations [T, 3J].
  Regression regress(const Tensor& observations) const;

  BodyModel body;
  ObservationEncoder observation;
  TemporalEncoder encoder;
  ConditionalFlow flow;
  RegressionHead head;
  MotionDiscriminator disc;

 private:
  ModelConfig config_;
};

/// Loads the model from a checkpoint path, or returns the seeded
/// initialization when `checkpoint` is "init".
PoseModel model_from_checkpoint(const ModelConfig& config, const std::string& checkpoint, std::uint64_t seed);

}  // namespace flowpose
