#include "flowpose/training.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>

#include <fmt/format.h>

#include "flowpose/camera.hpp"
#include "flowpose/metrics.hpp"
#include "flowpose/rotations.hpp"

namespace flowpose {

namespace {

std::vector<long> repeat_index(std::size_t rows, std::size_t times) {
  std::vector<long> index(rows * times);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t k = 0; k < times; ++k) index[r * times + k] = static_cast<long>(r);
  }
  return index;
}

// Evaluates one loss term, attaching the term name to numerical failures.
template <typename F>
void add_term(LossAccumulator& acc, LossTerm term, F&& compute) {
  try {
    acc.add(term, compute());
  } catch (const DomainError& e) {
    throw DomainError(std::string("loss term ") + loss_term_name(term) + ": " + e.what());
  }
}

void save_atomically(const PoseModel& model, const std::string& path) {
  const std::string tmp = path + ".tmp";
  model.save(tmp);
  std::filesystem::rename(tmp, path);
}

Points frame_points(std::span<const double> data, std::size_t row, std::size_t count) {
  Points p(static_cast<Eigen::Index>(count), 3);
  std::copy_n(data.begin() + static_cast<long>(row * count * 3), count * 3, p.data());
  return p;
}

std::string csv_number(double v) { return fmt::format("{:.10g}", v); }

}  // namespace

Batch make_batch(const std::vector<const SyntheticSequence*>& sequences, std::size_t frames, std::size_t offset) {
  if (sequences.empty()) throw ShapeError("make_batch: no sequences");
  const SyntheticSequence& first = *sequences.front();
  const std::size_t s_count = sequences.size(), jc = first.joints, b = first.shapes, d = 6 * jc;
  Batch batch;
  batch.sequences = s_count;
  batch.frames = frames;
  const std::size_t rows = s_count * frames;
  std::vector<double> kp, conf, pose(rows * d, 0.0), beta(rows * b, 0.0), joints(rows * jc * 3, 0.0), real(rows * d);
  kp.reserve(rows * jc * 2);
  conf.reserve(rows * jc);
  for (std::size_t s = 0; s < s_count; ++s) {
    const SyntheticSequence& seq = *sequences[s];
    if (seq.joints != jc || seq.shapes != b) throw ShapeError("make_batch: sequences disagree on the body model");
    if (offset + frames > seq.frames) {
      throw ShapeError("make_batch: sequence has " + std::to_string(seq.frames) + " frames, need " +
                       std::to_string(offset + frames));
    }
    const auto gt_pose = seq.gt_pose_vectors();
    for (std::size_t t = 0; t < frames; ++t) {
      const std::size_t src = offset + t, row = s * frames + t;
      kp.insert(kp.end(), seq.noisy_keypoints.begin() + static_cast<long>(src * jc * 2),
                seq.noisy_keypoints.begin() + static_cast<long>((src + 1) * jc * 2));
      conf.insert(conf.end(), seq.confidence.begin() + static_cast<long>(src * jc),
                  seq.confidence.begin() + static_cast<long>((src + 1) * jc));
      std::copy_n(gt_pose.begin() + static_cast<long>(src * d), d, real.begin() + static_cast<long>(row * d));
      if (seq.has(kHasTheta)) {
        std::copy_n(gt_pose.begin() + static_cast<long>(src * d), d, pose.begin() + static_cast<long>(row * d));
        batch.pose_rows.push_back(static_cast<long>(row));
      }
      if (seq.has(kHasBeta)) {
        std::copy(seq.gt_beta.begin(), seq.gt_beta.end(), beta.begin() + static_cast<long>(row * b));
        batch.beta_rows.push_back(static_cast<long>(row));
      }
      if (seq.has(kHasJoints3d)) {
        std::copy_n(seq.gt_joints3d.begin() + static_cast<long>(src * jc * 3), jc * 3,
                    joints.begin() + static_cast<long>(row * jc * 3));
        batch.joints_rows.push_back(static_cast<long>(row));
      }
    }
  }
  batch.observations = observation_rows(kp, conf, jc);
  batch.keypoints = Tensor({rows, jc, 2}, std::move(kp));
  batch.confidence = Tensor({rows, jc}, std::move(conf));
  batch.gt_pose = Tensor({rows, d}, std::move(pose));
  batch.gt_beta = Tensor({rows, b}, std::move(beta));
  batch.gt_joints3d = Tensor({rows, jc, 3}, std::move(joints));
  batch.real_motion = Tensor({s_count, frames, d}, std::move(real));
  return batch;
}

ForwardPass run_forward(const PoseModel& model, const Batch& batch, std::size_t samples, Rng& rng) {
  ForwardPass pass;
  const std::size_t rows = batch.sequences * batch.frames;
  pass.context = model.contexts(batch.observations, batch.sequences, batch.frames);
  pass.head = model.head.predict(pass.context);
  pass.prepared = model.flow.prepare(pass.context);
  pass.mode = model.flow.mode(pass.prepared);
  pass.mode_mesh = body_forward(model.body, pose_vector_to_rotations(pass.mode), pass.head.beta);
  pass.samples = samples;
  if (samples > 0) {
    const Tensor z = standard_normal_tensor(rows * samples, model.pose_dim(), rng);
    pass.sample_poses = model.flow.forward(z, pass.prepared.repeat(samples));
    const auto index = repeat_index(rows, samples);
    const Tensor beta = gather_rows(pass.head.beta, index);
    pass.sample_joints = body_forward(model.body, pose_vector_to_rotations(pass.sample_poses), beta).joints;
  }
  return pass;
}

Tensor motions_from_rows(const Tensor& rows, std::size_t sequences, std::size_t frames, std::size_t per_row) {
  const std::size_t d = rows.dim(1);
  std::vector<long> index;
  index.reserve(sequences * per_row * frames);
  for (std::size_t s = 0; s < sequences; ++s) {
    for (std::size_t k = 0; k < per_row; ++k) {
      for (std::size_t t = 0; t < frames; ++t) index.push_back(static_cast<long>((s * frames + t) * per_row + k));
    }
  }
  return reshape(gather_rows(rows, index), {sequences * per_row, frames, d});
}

GeneratorLoss generator_loss(const PoseModel& model, const MotionDiscriminator& disc, const Batch& batch,
                             const ForwardPass& pass, const LossWeights& weights) {
  LossAccumulator acc(weights);
  const std::size_t s_count = batch.sequences, frames = batch.frames, rows = s_count * frames;
  const std::size_t d = model.pose_dim();

  if (!batch.pose_rows.empty()) {
    add_term(acc, LossTerm::nll, [&] {
      const Tensor lp = model.flow.log_prob(batch.gt_pose, pass.prepared);
      return neg(mean(gather_rows(lp, batch.pose_rows)));
    });
  }
  if (pass.samples > 0) {
    const auto index = repeat_index(rows, pass.samples);
    add_term(acc, LossTerm::exp_2d, [&] {
      return loss_2d(pass.sample_joints, gather_rows(pass.head.cam, index), gather_rows(batch.keypoints, index),
                     gather_rows(batch.confidence, index));
    });
    add_term(acc, LossTerm::exp_adv, [&] {
      return adv_loss(disc.discriminate(motions_from_rows(pass.sample_poses, s_count, frames, pass.samples)));
    });
  }
  add_term(acc, LossTerm::mode_2d,
           [&] { return loss_2d(pass.mode_mesh.joints, pass.head.cam, batch.keypoints, batch.confidence); });
  add_term(acc, LossTerm::mode_adv, [&] { return adv_loss(disc.discriminate(reshape(pass.mode, {s_count, frames, d}))); });
  if (!batch.joints_rows.empty()) {
    add_term(acc, LossTerm::mode_3d, [&] {
      return loss_3d(gather_rows(pass.mode_mesh.joints, batch.joints_rows), gather_rows(batch.gt_joints3d, batch.joints_rows));
    });
  }
  if (!batch.pose_rows.empty()) {
    add_term(acc, LossTerm::mode_theta, [&] {
      return mean_squared_rows(gather_rows(pass.mode, batch.pose_rows), gather_rows(batch.gt_pose, batch.pose_rows));
    });
  }
  if (!batch.beta_rows.empty()) {
    add_term(acc, LossTerm::mode_beta, [&] {
      return mean_squared_rows(gather_rows(pass.head.beta, batch.beta_rows), gather_rows(batch.gt_beta, batch.beta_rows));
    });
  }
  if (pass.samples > 0) {
    add_term(acc, LossTerm::orth, [&] { return mean(pose_vector_orth_residual(pass.sample_poses)); });
  }
  return {acc.total(), acc.report()};
}

Tensor discriminator_loss(const MotionDiscriminator& disc, const Batch& batch, const ForwardPass& pass) {
  const std::size_t d = pass.mode.dim(1);
  std::vector<Tensor> fakes = {reshape(pass.mode.detach(), {batch.sequences, batch.frames, d})};
  if (pass.samples > 0) {
    fakes.push_back(motions_from_rows(pass.sample_poses.detach(), batch.sequences, batch.frames, pass.samples));
  }
  return disc_loss(disc.discriminate(batch.real_motion), disc.discriminate(concat(fakes, 0)));
}

ValidationMetrics validate(const PoseModel& model, const std::vector<SyntheticSequence>& sequences) {
  if (sequences.empty()) throw ShapeError("validate: no validation sequences");
  NoGradGuard guard;
  ValidationMetrics out;
  double nll = 0.0, pa = 0.0, mp = 0.0;
  std::size_t count = 0;
  for (const auto& seq : sequences) {
    const Batch batch = make_batch({&seq}, seq.frames);
    const Tensor ctx = model.contexts(batch.observations, 1, seq.frames);
    const auto prepared = model.flow.prepare(ctx);
    const Tensor mode = model.flow.mode(prepared);
    const Tensor beta = model.head.predict(ctx).beta;
    const auto mesh = body_forward(model.body, pose_vector_to_rotations(mode), beta);
    const Tensor lp = model.flow.log_prob(batch.gt_pose, prepared);
    for (std::size_t t = 0; t < seq.frames; ++t) {
      const Points pred = frame_points(mesh.joints.data(), t, seq.joints);
      const Points gt = frame_points(seq.gt_joints3d, t, seq.joints);
      pa += pa_mpjpe(pred, gt);
      mp += mpjpe(pred, gt);
      nll -= lp.at(t);
      ++count;
    }
  }
  out.nll = nll / static_cast<double>(count);
  out.pa_mpjpe_mm = pa / static_cast<double>(count);
  out.mpjpe_mm = mp / static_cast<double>(count);
  return out;
}

std::string metrics_csv_header() {
  std::string h = "epoch,train_total";
  for (std::size_t i = 0; i < kLossTermCount; ++i) h += std::string(",") + loss_term_name(static_cast<LossTerm>(i));
  h += ",disc_loss,disc_loss_min,disc_loss_max,val_nll,val_pa_mpjpe_mm,val_mpjpe_mm";
  return h;
}

std::string metrics_csv_row(const EpochRecord& r) {
  std::string row = std::to_string(r.epoch);
  const bool trained = r.batches > 0;
  row += "," + (trained ? csv_number(r.train.total) : std::string());
  for (const auto& term : r.train.terms) row += "," + (trained && term ? csv_number(*term) : std::string());
  for (double v : {r.disc_loss, r.disc_loss_min, r.disc_loss_max}) row += "," + (trained ? csv_number(v) : std::string());
  row += "," + csv_number(r.validation.nll) + "," + csv_number(r.validation.pa_mpjpe_mm) + "," +
         csv_number(r.validation.mpjpe_mm);
  return row;
}

std::vector<EpochRecord> train(PoseModel& model, const std::vector<SyntheticSequence>& training,
                               const std::vector<SyntheticSequence>& validation, const TrainConfig& config,
                               const std::function<void(const EpochRecord&)>& on_epoch) {
  if (training.empty()) throw ShapeError("train: empty training set");
  if (config.batch_size == 0 || config.frames < 2) throw ShapeError("train: batch size must be >= 1 and T >= 2");
  std::size_t min_frames = std::numeric_limits<std::size_t>::max();
  for (const auto& s : training) min_frames = std::min(min_frames, s.frames);
  if (min_frames < config.frames) {
    throw ShapeError("train: sequences have " + std::to_string(min_frames) + " frames, T = " +
                     std::to_string(config.frames) + " requested");
  }

  Rng rng(config.seed);
  ParameterStore gen_params = model.generator_parameters(!config.freeze_encoder);
  ParameterStore disc_params = model.discriminator_parameters();
  AdamState gen_state, disc_state;
  gen_state.options.lr = config.lr;
  disc_state.options.lr = config.lr;

  std::ofstream log;
  if (!config.log_path.empty()) {
    log.open(config.log_path);
    if (!log) throw Error("cannot open metrics log '" + config.log_path + "'");
    log << metrics_csv_header() << '\n';
  }
  std::vector<EpochRecord> history;
  const auto finish_epoch = [&](EpochRecord record) {
    try {
      record.validation = validation.empty() ? ValidationMetrics{} : validate(model, validation);
    } catch (const DomainError& e) {
      throw TrainingError(fmt::format("non-finite value validating epoch {}: {}", record.epoch, e.what()));
    }
    if (!config.checkpoint_path.empty()) save_atomically(model, config.checkpoint_path);
    if (log) log << metrics_csv_row(record) << std::endl;
    if (on_epoch) on_epoch(record);
    history.push_back(std::move(record));
  };
  finish_epoch(EpochRecord{});

  std::vector<std::size_t> order(training.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    EpochRecord record;
    record.epoch = epoch;
    record.disc_loss_min = std::numeric_limits<double>::infinity();
    record.disc_loss_max = -std::numeric_limits<double>::infinity();
    std::array<double, kLossTermCount> term_sum{};
    std::array<std::size_t, kLossTermCount> term_count{};
    double total_sum = 0.0, disc_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::vector<const SyntheticSequence*> seqs;
      for (std::size_t i = start; i < end; ++i) seqs.push_back(&training[order[i]]);
      const std::size_t offset =
          min_frames > config.frames ? std::uniform_int_distribution<std::size_t>(0, min_frames - config.frames)(rng) : 0;
      try {
        const Batch batch = make_batch(seqs, config.frames, offset);
        const ForwardPass pass = run_forward(model, batch, config.samples, rng);
        const GeneratorLoss gen = generator_loss(model, model.disc.frozen(), batch, pass, config.weights);
        const NamedGradients gen_grads = collect_gradients(gen_params, backward(gen.total));
        const Tensor dloss = discriminator_loss(model.disc, batch, pass);
        const NamedGradients disc_grads = collect_gradients(disc_params, backward(dloss));
        adam_step(gen_params, gen_grads, gen_state);
        model.flow.clamp_diagonals();
        adam_step(disc_params, disc_grads, disc_state);

        for (std::size_t i = 0; i < kLossTermCount; ++i) {
          if (gen.report.terms[i]) {
            term_sum[i] += *gen.report.terms[i];
            ++term_count[i];
          }
        }
        total_sum += gen.report.total;
        const double dl = dloss.item();
        disc_sum += dl;
        record.disc_loss_min = std::min(record.disc_loss_min, dl);
        record.disc_loss_max = std::max(record.disc_loss_max, dl);
        ++record.batches;
      } catch (const DomainError& e) {
        throw TrainingError(fmt::format("non-finite value at epoch {}, batch {}: {}; checkpoint keeps epoch {}", epoch,
                                        start / config.batch_size, e.what(), epoch - 1));
      }
    }
    const double n = static_cast<double>(record.batches);
    for (std::size_t i = 0; i < kLossTermCount; ++i) {
      if (term_count[i] > 0) record.train.terms[i] = term_sum[i] / static_cast<double>(term_count[i]);
    }
    record.train.total = total_sum / n;
    record.disc_loss = disc_sum / n;
    finish_epoch(std::move(record));
  }
  return history;
}

}  // namespace flowpose
