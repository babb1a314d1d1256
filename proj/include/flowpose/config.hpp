#pragma once

// INI-style run configuration. Sections and keys:
//
//   [model]   body_model, observation_hidden, head_hidden, disc_hidden, disc_layers
//   [flow]    blocks, hidden, init_scale
//   [encoder] feature_dim, context_dim, window, hafi_hidden, hafi_levels
//   [train]   epochs, batch, frames, lr, seed, sample_count, freeze_encoder,
//             w_nll, w_exp_2d, w_exp_adv, w_mode_2d, w_mode_adv, w_mode_3d,
//             w_mode_theta, w_mode_beta, w_orth
//   [data]    frames, fps, noise_sigma, occlusion, beta_sigma, max_amplitude,
//             min_period, max_period, max_sinusoids, partial_fraction
//   [fit]     lambda_joints, lambda_prior, lambda_shape, lr, max_iters,
//             tolerance, reference_crop_px
//
// Every key is optional; omitted keys keep the library defaults. Unknown
// sections or keys and unparsable values raise ConfigError naming the key.

#include <string>

#include "flowpose/fitting.hpp"
#include "flowpose/training.hpp"

namespace flowpose {

class ConfigError : public Error {
 public:
  using Error::Error;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  SynthConfig data;
  FitConfig fit;
};

/// Parses configuration text; `origin` prefixes error messages.
RunConfig parse_config(const std::string& text, const std::string& origin = "config");
RunConfig load_config(const std::string& path);

/// Writes every key with its current value, readable by parse_config.
std::string config_to_ini(const RunConfig& config);

}  // namespace flowpose
