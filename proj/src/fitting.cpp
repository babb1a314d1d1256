#include "flowpose/fitting.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <optional>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "flowpose/adam.hpp"
#include "flowpose/camera.hpp"
#include "flowpose/rotations.hpp"

namespace flowpose {

void FitConfig::validate() const {
  if (!(lambda_joints >= 0.0) || !(lambda_prior >= 0.0) || !(lambda_shape >= 0.0)) {
    throw ValidationError("fit: energy weights must be non-negative");
  }
  if (max_iters < 1) throw ValidationError("fit: max_iters must be at least 1");
  if (!(lr > 0.0)) throw ValidationError("fit: learning rate must be positive");
  if (!(tolerance >= 0.0)) throw ValidationError("fit: tolerance must be non-negative");
  if (!(reference_crop_px > 0.0)) throw ValidationError("fit: reference crop size must be positive");
}

Tensor camera_from_raw(const Tensor& cam_raw) {
  if (cam_raw.rank() != 2 || cam_raw.dim(1) != 3) {
    throw ShapeError("camera_from_raw: expected [T,3], got " + shape_str(cam_raw.shape()));
  }
  const Tensor scale_mask = Tensor::vector({1.0, 0.0, 0.0});
  const Tensor shift_mask = Tensor::vector({0.0, 1.0, 1.0});
  return add(mul(exp(mul(cam_raw, scale_mask)), scale_mask), mul(cam_raw, shift_mask));
}

FitProblem::FitProblem(const PoseModel& model, const Regression& regression, Tensor keypoints, Tensor confidence,
                       FitConfig config)
    : model_(&model),
      prepared_(regression.prepared),
      keypoints_(std::move(keypoints)),
      confidence_(std::move(confidence)),
      config_(config) {
  config_.validate();
  const std::size_t t = regression.mode.dim(0), j = model.body.joint_count;
  if (keypoints_.shape() != Shape{t, j, 2} || confidence_.shape() != Shape{t, j}) {
    throw ShapeError("fit: keypoints " + shape_str(keypoints_.shape()) + " / confidence " +
                     shape_str(confidence_.shape()) + " do not match " + std::to_string(t) + " frames of " +
                     std::to_string(j) + " joints");
  }
  const double d = static_cast<double>(model.flow.dim());
  NoGradGuard guard;
  prior_constant_ = 0.5 * d * std::log(2.0 * std::numbers::pi) + model.flow.log_det().item();
}

FitProblem::Evaluation FitProblem::evaluate(const Tensor& z, const Tensor& beta, const Tensor& cam_raw) const {
  Evaluation ev;
  ev.theta = model_->flow.forward(z, prepared_);
  ev.mesh = body_forward(model_->body, pose_vector_to_rotations(ev.theta), beta);
  const Tensor projected = project(ev.mesh.joints, camera_from_raw(cam_raw));
  const double px = 0.5 * config_.reference_crop_px;
  const Tensor joint_frames = scale(sum(mul(sum(square(sub(projected, keypoints_)), 2), confidence_), 1), px * px);
  const Tensor prior_frames = add_scalar(scale(sum(square(z), 1), 0.5), prior_constant_);
  const Tensor shape_frames = sum(square(beta), 1);

  const Tensor joints_term = scale(sum(joint_frames), config_.lambda_joints);
  const Tensor prior_term = scale(sum(prior_frames), config_.lambda_prior);
  const Tensor shape_term = scale(sum(shape_frames), config_.lambda_shape);
  ev.total = add(add(joints_term, prior_term), shape_term);
  ev.terms = {joints_term.item(), prior_term.item(), shape_term.item(), 0.0};
  ev.terms.total = (ev.terms.joints + ev.terms.prior) + ev.terms.shape;

  ev.per_frame.resize(frames());
  for (std::size_t t = 0; t < frames(); ++t) {
    ev.per_frame[t] = config_.lambda_joints * joint_frames.at(t) + config_.lambda_prior * prior_frames.at(t) +
                      config_.lambda_shape * shape_frames.at(t);
  }
  return ev;
}

namespace {

std::string describe(const EnergyTerms& e) {
  return fmt::format("E = {:.6g} (joints {:.6g}, prior {:.6g}, shape {:.6g})", e.total, e.joints, e.prior, e.shape);
}

}  // namespace

FitResult fit(const PoseModel& model, const KeypointSequence& keypoints, const FitConfig& config) {
  config.validate();
  const std::size_t t_count = keypoints.frames, jc = model.body.joint_count, b = model.body.shape_count;
  const std::size_t d = model.pose_dim();
  if (keypoints.joints != jc) {
    throw ShapeError("fit: keypoints have " + std::to_string(keypoints.joints) + " joints, the body model has " +
                     std::to_string(jc));
  }
  const Regression reg = model.regress(observation_rows(keypoints.keypoints, keypoints.confidence, jc));
  const FitProblem problem(model, reg, Tensor({t_count, jc, 2}, keypoints.keypoints),
                           Tensor({t_count, jc}, keypoints.confidence), config);

  Tensor z = make_param({t_count, d});
  Tensor beta = make_param({t_count, b});
  Tensor cam_raw = make_param({t_count, 3});
  std::copy(reg.beta.data().begin(), reg.beta.data().end(), beta.mutable_data().begin());
  for (std::size_t t = 0; t < t_count; ++t) {
    cam_raw.mutable_data()[3 * t] = std::log(reg.cam.at(3 * t));
    cam_raw.mutable_data()[3 * t + 1] = reg.cam.at(3 * t + 1);
    cam_raw.mutable_data()[3 * t + 2] = reg.cam.at(3 * t + 2);
  }
  ParameterStore store;
  store.add("z", z);
  store.add("beta", beta);
  store.add("cam", cam_raw);
  AdamState adam;
  adam.options.lr = config.lr;

  FitResult result;
  result.frames = t_count;
  result.joints = jc;
  result.shapes = b;
  result.config = config;
  result.frame_trace.resize(t_count);
  double best = std::numeric_limits<double>::infinity();
  std::optional<FitProblem::Evaluation> best_eval;
  std::vector<double> best_z, best_beta, best_cam;

  for (std::size_t k = 0;; ++k) {
    FitProblem::Evaluation ev;
    try {
      ev = problem.evaluate(z, beta, cam_raw);
    } catch (const DomainError& e) {
      throw FitDivergedError(fmt::format("fit diverged at iteration {}: {}; initial {}", k, e.what(),
                                         k > 0 ? describe(result.initial) : std::string("n/a")));
    }
    const double energy = ev.terms.total;
    if (k == 0) result.initial = ev.terms;
    const double e0 = result.initial.total;
    if (!std::isfinite(energy) || energy > e0 + 9.0 * std::abs(e0)) {
      throw FitDivergedError(fmt::format("fit diverged at iteration {}: {} exceeds the bound from initial {}", k,
                                         describe(ev.terms), describe(result.initial)));
    }
    result.trace.push_back(energy);
    for (std::size_t t = 0; t < t_count; ++t) result.frame_trace[t].push_back(ev.per_frame[t]);
    if (energy < best) {
      best = energy;
      result.best_iteration = k;
      best_z = z.values();
      best_beta = beta.values();
      best_cam = cam_raw.values();
      best_eval = ev;
    }
    if (k == config.max_iters) break;
    if (k > 0 && std::abs(result.trace[k - 1] - energy) < config.tolerance * std::max(1.0, std::abs(energy))) {
      result.converged = true;
      break;
    }
    adam_step(store, collect_gradients(store, backward(ev.total)), adam);
  }

  result.final_terms = best_eval->terms;
  result.z = std::move(best_z);
  result.beta = std::move(best_beta);
  result.theta = best_eval->theta.values();
  result.joints3d = best_eval->mesh.joints.values();
  result.vertices = best_eval->mesh.vertices.values();
  result.cam.resize(3 * t_count);
  for (std::size_t t = 0; t < t_count; ++t) {
    result.cam[3 * t] = std::exp(best_cam[3 * t]);
    result.cam[3 * t + 1] = best_cam[3 * t + 1];
    result.cam[3 * t + 2] = best_cam[3 * t + 2];
  }
  const auto rotations = rotations_from_pose_vector(result.theta);
  result.axis_angle.reserve(rotations.size() * 3);
  for (const auto& r : rotations) {
    const Eigen::Vector3d aa = matrix_to_axis_angle(r);
    result.axis_angle.insert(result.axis_angle.end(), {aa.x(), aa.y(), aa.z()});
  }
  return result;
}

std::string fit_result_json(const FitResult& r) {
  using nlohmann::json;
  const auto terms = [](const EnergyTerms& e) {
    return json{{"joints", e.joints}, {"prior", e.prior}, {"shape", e.shape}, {"total", e.total}};
  };
  json doc;
  doc["frame_count"] = r.frames;
  doc["joints"] = r.joints;
  doc["config"] = {{"lambda_joints", r.config.lambda_joints}, {"lambda_prior", r.config.lambda_prior},
                   {"lambda_shape", r.config.lambda_shape},   {"lr", r.config.lr},
                   {"max_iters", r.config.max_iters},         {"tolerance", r.config.tolerance},
                   {"reference_crop_px", r.config.reference_crop_px}};
  doc["initial_energy"] = terms(r.initial);
  doc["final_energy"] = terms(r.final_terms);
  doc["best_iteration"] = r.best_iteration;
  doc["converged"] = r.converged;
  doc["energy_trace"] = r.trace;
  json frames = json::array();
  for (std::size_t t = 0; t < r.frames; ++t) {
    const auto slice = [t](const std::vector<double>& v, std::size_t width) {
      return std::vector<double>(v.begin() + static_cast<long>(t * width), v.begin() + static_cast<long>((t + 1) * width));
    };
    frames.push_back({{"theta_axis_angle", slice(r.axis_angle, 3 * r.joints)},
                      {"beta", slice(r.beta, r.shapes)},
                      {"cam", {{"s", r.cam[3 * t]}, {"tx", r.cam[3 * t + 1]}, {"ty", r.cam[3 * t + 2]}}},
                      {"energy_trace", r.frame_trace[t]}});
  }
  doc["frames"] = std::move(frames);
  return doc.dump(1);
}

}  // namespace flowpose
