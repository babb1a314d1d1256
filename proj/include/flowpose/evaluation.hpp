#pragma once

// Dataset evaluation: mode-based metrics per sequence plus the
// multiple-hypothesis protocol (minimum PA-MPJPE over n drawn samples).

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "flowpose/model.hpp"

namespace flowpose {

struct EvalConfig {
  std::size_t samples = 0;  // n for min-over-n; 0 skips sampling
  std::uint64_t seed = 1;
  std::size_t threads = 1;
};

struct SequenceMetrics {
  std::size_t sequence = 0;
  std::size_t frames = 0;
  double pa_mpjpe_mm = 0.0;
  double mpjpe_mm = 0.0;
  double mpve_mm = 0.0;
  std::optional<double> accel_error;  // mm/s^2; needs at least 3 frames
  /// Entry k - 1 is the frame mean of min over the first k draws.
  std::vector<double> min_over_n_curve;
};

struct EvalReport {
  std::size_t joints = 0;
  std::size_t samples = 0;
  std::uint64_t seed = 0;
  std::vector<SequenceMetrics> sequences;
  /// Frame-weighted means over all sequences; accel over sequences that have it.
  SequenceMetrics aggregate;
};

/// Frame-weighted aggregate of per-sequence rows.
SequenceMetrics aggregate_metrics(const std::vector<SequenceMetrics>& rows);

/// Metrics for one sequence. Draw k of frame t uses the stream
/// derive_seed(derive_seed(seed, sequence), t), so smaller n is a prefix.
SequenceMetrics evaluate_sequence(const PoseModel& model, const SyntheticSequence& seq, std::size_t index,
                                  const EvalConfig& config);

/// Evaluates every sequence, spreading sequences over config.threads workers.
EvalReport evaluate(const PoseModel& model, const std::vector<SyntheticSequence>& sequences, const EvalConfig& config);

/// Per-sequence rows followed by a "mean" row. Column order:
/// sequence,frames,joints,pa_mpjpe_mm,mpjpe_mm,mpve_mm,accel_error_mm_s2,samples,min_over_n_pa_mpjpe_mm
std::string eval_report_csv(const EvalReport& report);
std::string eval_report_json(const EvalReport& report);

/// Runs fn(i) for i in [0, count) on up to `threads` workers. Exceptions are
/// rethrown on the caller, lowest index first.
void parallel_for(std::size_t count, std::size_t threads, const std::function<void(std::size_t)>& fn);

}  // namespace flowpose
