#include "flowpose/model.hpp"

#include "flowpose/checkpoint.hpp"
#include "flowpose/rotations.hpp"

namespace flowpose {

PoseModel PoseModel::create(const ModelConfig& config, std::uint64_t seed) {
  PoseModel m;
  m.config_ = config;
  m.body = model_from_path(config.body_model);
  const std::size_t joints = m.body.joint_count;
  const std::size_t d = 6 * joints;
  Rng obs_rng(derive_seed(seed, 1)), enc_rng(derive_seed(seed, 2)), flow_rng(derive_seed(seed, 3)),
      head_rng(derive_seed(seed, 4)), disc_rng(derive_seed(seed, 5));
  m.observation = ObservationEncoder(joints, config.observation_hidden, config.encoder.feature_dim, obs_rng);
  m.encoder = TemporalEncoder(config.encoder, enc_rng);
  m.flow = ConditionalFlow(FlowConfig{d, config.encoder.context_dim, config.flow_blocks, config.flow_hidden, config.flow_init_scale}, flow_rng);
  m.head = RegressionHead(config.encoder.context_dim, m.body.shape_count, config.head_hidden, head_rng);
  m.disc = MotionDiscriminator(DiscriminatorConfig{d, config.disc_hidden, config.disc_layers}, disc_rng);
  return m;
}

ParameterStore PoseModel::generator_parameters(bool include_observation_encoder) const {
  ParameterStore store;
  if (include_observation_encoder) observation.collect(store, "obs/");
  encoder.collect(store, "encoder/");
  flow.collect(store, "flow/");
  head.collect(store, "head/");
  return store;
}

ParameterStore PoseModel::discriminator_parameters() const {
  ParameterStore store;
  disc.collect(store, "disc/");
  return store;
}

ParameterStore PoseModel::all_parameters() const {
  ParameterStore store = generator_parameters(true);
  store.merge(discriminator_parameters());
  return store;
}

void PoseModel::save(const std::string& path) const { save_checkpoint(path, all_parameters()); }

void PoseModel::load(const std::string& path) {
  ParameterStore store = all_parameters();
  store.assign_from(load_checkpoint(path));
}

Tensor PoseModel::contexts(const Tensor& observations, std::size_t sequences, std::size_t frames) const {
  const Tensor features = observation.encode(observations);
  return encoder.encode_sequence(reshape(features, {sequences, frames, config_.encoder.feature_dim}));
}

Regression PoseModel::regress(const Tensor& observations) const {
  NoGradGuard guard;
  Regression r;
  r.context = contexts(observations, 1, observations.dim(0));
  r.prepared = flow.prepare(r.context);
  r.mode = flow.mode(r.prepared);
  const auto head_out = head.predict(r.context);
  r.beta = head_out.beta;
  r.cam = head_out.cam;
  r.mesh = body_forward(body, pose_vector_to_rotations(r.mode), r.beta);
  return r;
}

PoseModel model_from_checkpoint(const ModelConfig& config, const std::string& checkpoint, std::uint64_t seed) {
  PoseModel m = PoseModel::create(config, seed);
  if (checkpoint != "init") m.load(checkpoint);
  return m;
}

}  // namespace flowpose
