#include "flowpose/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <limits>
#include <thread>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "flowpose/metrics.hpp"
#include "flowpose/rotations.hpp"

namespace flowpose {

namespace {

Points frame_points(std::span<const double> data, std::size_t row, std::size_t count) {
  Points p(static_cast<Eigen::Index>(count), 3);
  std::copy_n(data.begin() + static_cast<long>(row * count * 3), count * 3, p.data());
  return p;
}

std::string csv_number(double v) { return fmt::format("{:.10g}", v); }

}  // namespace

void parallel_for(std::size_t count, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min(std::max<std::size_t>(threads, 1), count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(count);
  std::atomic<std::size_t> next{0};
  const auto work = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
  pool.clear();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

SequenceMetrics evaluate_sequence(const PoseModel& model, const SyntheticSequence& seq, std::size_t index,
                                  const EvalConfig& config) {
  if (seq.joints != model.body.joint_count || seq.shapes != model.body.shape_count) {
    throw ShapeError(fmt::format("evaluate: sequence {} has {} joints and {} shapes, the body model has {} and {}",
                                 index, seq.joints, seq.shapes, model.body.joint_count, model.body.shape_count));
  }
  NoGradGuard guard;
  const std::size_t t_count = seq.frames, jc = seq.joints, nv = seq.vertices;
  const Regression reg = model.regress(observation_rows(seq.noisy_keypoints, seq.confidence, jc));

  SequenceMetrics m;
  m.sequence = index;
  m.frames = t_count;
  std::vector<Points> pred_seq, gt_seq;
  for (std::size_t t = 0; t < t_count; ++t) {
    const Points pred = frame_points(reg.mesh.joints.data(), t, jc);
    const Points gt = frame_points(seq.gt_joints3d, t, jc);
    m.pa_mpjpe_mm += pa_mpjpe(pred, gt);
    m.mpjpe_mm += mpjpe(pred, gt);
    m.mpve_mm += mpve(frame_points(reg.mesh.vertices.data(), t, nv), frame_points(seq.gt_vertices, t, nv),
                      pred.row(0).transpose(), gt.row(0).transpose());
    pred_seq.push_back(pred);
    gt_seq.push_back(gt);
  }
  const double frames = static_cast<double>(t_count);
  m.pa_mpjpe_mm /= frames;
  m.mpjpe_mm /= frames;
  m.mpve_mm /= frames;
  if (t_count >= 3) m.accel_error = accel_error(pred_seq, gt_seq, seq.fps);

  const std::size_t n = config.samples;
  if (n == 0) return m;
  const std::size_t d = model.pose_dim(), b = model.body.shape_count;
  std::vector<double> z(t_count * n * d), beta(t_count * n * b);
  for (std::size_t t = 0; t < t_count; ++t) {
    Rng rng(derive_seed(derive_seed(config.seed, index), t));
    for (std::size_t i = 0; i < n * d; ++i) z[t * n * d + i] = standard_normal(rng);
    for (std::size_t k = 0; k < n; ++k) {
      std::copy_n(reg.beta.data().begin() + static_cast<long>(t * b), b, beta.begin() + static_cast<long>((t * n + k) * b));
    }
  }
  const Tensor poses = model.flow.forward(Tensor({t_count * n, d}, std::move(z)), reg.prepared.repeat(n));
  const MeshTensors mesh = body_forward(model.body, pose_vector_to_rotations(poses), Tensor({t_count * n, b}, std::move(beta)));

  m.min_over_n_curve.assign(n, 0.0);
  for (std::size_t t = 0; t < t_count; ++t) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < n; ++k) {
      best = std::min(best, pa_mpjpe(frame_points(mesh.joints.data(), t * n + k, jc), gt_seq[t]));
      m.min_over_n_curve[k] += best;
    }
  }
  for (double& v : m.min_over_n_curve) v /= frames;
  return m;
}

SequenceMetrics aggregate_metrics(const std::vector<SequenceMetrics>& rows) {
  SequenceMetrics agg;
  if (rows.empty()) return agg;
  double accel = 0.0;
  std::size_t accel_count = 0;
  for (const auto& r : rows) {
    const double w = static_cast<double>(r.frames);
    agg.frames += r.frames;
    agg.pa_mpjpe_mm += w * r.pa_mpjpe_mm;
    agg.mpjpe_mm += w * r.mpjpe_mm;
    agg.mpve_mm += w * r.mpve_mm;
    if (r.accel_error) {
      accel += *r.accel_error;
      ++accel_count;
    }
    if (agg.min_over_n_curve.empty()) agg.min_over_n_curve.assign(r.min_over_n_curve.size(), 0.0);
    if (r.min_over_n_curve.size() != agg.min_over_n_curve.size()) {
      throw ShapeError("aggregate_metrics: rows disagree on the number of samples");
    }
    for (std::size_t k = 0; k < r.min_over_n_curve.size(); ++k) agg.min_over_n_curve[k] += w * r.min_over_n_curve[k];
  }
  const double total = static_cast<double>(agg.frames);
  agg.pa_mpjpe_mm /= total;
  agg.mpjpe_mm /= total;
  agg.mpve_mm /= total;
  for (double& v : agg.min_over_n_curve) v /= total;
  if (accel_count > 0) agg.accel_error = accel / static_cast<double>(accel_count);
  return agg;
}

EvalReport evaluate(const PoseModel& model, const std::vector<SyntheticSequence>& sequences, const EvalConfig& config) {
  if (sequences.empty()) throw ShapeError("evaluate: no sequences");
  EvalReport report;
  report.joints = model.body.joint_count;
  report.samples = config.samples;
  report.seed = config.seed;
  report.sequences.resize(sequences.size());
  parallel_for(sequences.size(), config.threads, [&](std::size_t i) {
    report.sequences[i] = evaluate_sequence(model, sequences[i], i, config);
  });
  report.aggregate = aggregate_metrics(report.sequences);
  return report;
}

std::string eval_report_csv(const EvalReport& report) {
  std::string out =
      "sequence,frames,joints,pa_mpjpe_mm,mpjpe_mm,mpve_mm,accel_error_mm_s2,samples,min_over_n_pa_mpjpe_mm\n";
  const auto row = [&](const std::string& label, const SequenceMetrics& m) {
    out += fmt::format("{},{},{},{},{},{},{},{},{}\n", label, m.frames, report.joints, csv_number(m.pa_mpjpe_mm),
                       csv_number(m.mpjpe_mm), csv_number(m.mpve_mm),
                       m.accel_error ? csv_number(*m.accel_error) : std::string(), report.samples,
                       m.min_over_n_curve.empty() ? std::string() : csv_number(m.min_over_n_curve.back()));
  };
  for (const auto& m : report.sequences) row(std::to_string(m.sequence), m);
  row("mean", report.aggregate);
  return out;
}

std::string eval_report_json(const EvalReport& report) {
  using nlohmann::json;
  const auto entry = [](const SequenceMetrics& m) {
    json j{{"frames", m.frames},
           {"pa_mpjpe_mm", m.pa_mpjpe_mm},
           {"mpjpe_mm", m.mpjpe_mm},
           {"mpve_mm", m.mpve_mm},
           {"accel_error_mm_s2", m.accel_error ? json(*m.accel_error) : json(nullptr)}};
    if (!m.min_over_n_curve.empty()) {
      j["min_over_n_pa_mpjpe_mm"] = m.min_over_n_curve.back();
      j["min_over_n_curve"] = m.min_over_n_curve;
    }
    return j;
  };
  json doc;
  doc["joints"] = report.joints;
  doc["samples"] = report.samples;
  doc["seed"] = report.seed;
  json seqs = json::array();
  for (const auto& m : report.sequences) {
    json j = entry(m);
    j["sequence"] = m.sequence;
    seqs.push_back(std::move(j));
  }
  doc["sequences"] = std::move(seqs);
  doc["aggregate"] = entry(report.aggregate);
  return doc.dump(1);
}

}  // namespace flowpose
