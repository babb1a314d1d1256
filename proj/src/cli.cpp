#include "flowpose/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include "flowpose/config.hpp"
#include "flowpose/evaluation.hpp"
#include "flowpose/fitting.hpp"
#include "flowpose/metrics.hpp"
#include "flowpose/rotations.hpp"

namespace flowpose {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

class UsageError : public Error {
 public:
  using Error::Error;
};

void setup_logging() {
  auto logger = spdlog::get("flowpose");
  if (!logger) {
    logger = spdlog::stderr_logger_st("flowpose");
    logger->set_pattern("[flowpose] [%l] %v");
  }
  spdlog::set_default_logger(logger);
  spdlog::level::level_enum level = spdlog::level::warn;
  if (const char* env = std::getenv("FLOWPOSE_LOG"); env != nullptr && *env != '\0') {
    const std::string name = env;
    level = spdlog::level::from_str(name);
    if (level == spdlog::level::off && name != "off") {
      level = spdlog::level::warn;
      spdlog::warn("FLOWPOSE_LOG='{}' is not a level name; using warn", name);
    }
  }
  spdlog::set_level(level);
}

void ensure_parent(const std::string& path) {
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

void write_text(const std::string& path, const std::string& text) {
  ensure_parent(path);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out << text;
  if (!out.flush()) throw Error("failed writing " + path);
}

std::vector<double> axis_angles(std::span<const double> pose_vector) {
  std::vector<double> out;
  for (const auto& r : rotations_from_pose_vector(pose_vector)) {
    const Eigen::Vector3d aa = matrix_to_axis_angle(r);
    out.insert(out.end(), {aa.x(), aa.y(), aa.z()});
  }
  return out;
}

Points row_points(std::span<const double> data, std::size_t row, std::size_t count) {
  Points p(static_cast<Eigen::Index>(count), 3);
  std::copy_n(data.begin() + static_cast<long>(row * count * 3), count * 3, p.data());
  return p;
}

double mean_pa_mpjpe(std::span<const double> pred, std::span<const double> gt, std::size_t frames, std::size_t joints) {
  double total = 0.0;
  for (std::size_t t = 0; t < frames; ++t) total += pa_mpjpe(row_points(pred, t, joints), row_points(gt, t, joints));
  return total / static_cast<double>(frames);
}

KeypointSequence keypoints_of(const SyntheticSequence& seq) {
  KeypointSequence k;
  k.fps = seq.fps;
  k.joints = seq.joints;
  k.frames = seq.frames;
  k.keypoints = seq.noisy_keypoints;
  k.confidence = seq.confidence;
  return k;
}

void check_compatible(const PoseModel& model, std::size_t joints, const std::string& source) {
  if (joints != model.body.joint_count) {
    throw ShapeError(fmt::format("{} has {} joints, the body model has {}", source, joints, model.body.joint_count));
  }
}

std::vector<SyntheticSequence> load_dataset(const std::string& path, const char* flag) {
  if (path.empty()) throw UsageError(std::string(flag) + " is required");
  spdlog::info("reading dataset {}", path);
  return read_dataset(path);
}

// Flags shared by several subcommands.
struct Options {
  std::string config;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::string checkpoint;
  std::string dataset;
  std::string out;

  std::vector<CLI::Option*> seed_options;  // one per subcommand
  RunConfig run;

  void resolve() {
    run = config.empty() ? RunConfig{} : load_config(config);
    for (const auto* opt : seed_options) {
      if (opt->count() > 0) run.train.seed = seed;
    }
    if (threads == 0) throw UsageError("--threads must be at least 1");
  }
  std::uint64_t effective_seed() const { return run.train.seed; }
  PoseModel model() const {
    if (checkpoint.empty()) throw UsageError("--checkpoint is required (a checkpoint file or 'init')");
    spdlog::info("loading model from {}", checkpoint);
    return model_from_checkpoint(run.model, checkpoint, effective_seed());
  }
};

void add_config(CLI::App* app, Options& o) {
  app->add_option("--config", o.config, "INI configuration file")->check(CLI::ExistingFile);
}
void add_seed(CLI::App* app, Options& o) {
  o.seed_options.push_back(app->add_option("--seed", o.seed, "Random seed (overrides [train] seed; default 1)"));
}
void add_threads(CLI::App* app, Options& o) {
  app->add_option("--threads", o.threads, "Worker threads over sequences")->capture_default_str();
}
void add_checkpoint(CLI::App* app, Options& o) {
  app->add_option("--checkpoint", o.checkpoint, "Model checkpoint, or 'init' for the seeded initialization");
}

// ---- generate --------------------------------------------------------------

struct GenerateArgs {
  std::size_t sequences = 100;
  std::optional<std::size_t> frames;
  std::string keypoints_dir;
};

void cmd_generate(Options& o, const GenerateArgs& a) {
  if (o.out.empty()) throw UsageError("--out is required");
  SynthConfig sc = o.run.data;
  if (a.frames) sc.frames = *a.frames;
  const BodyModel body = model_from_path(o.run.model.body_model);
  spdlog::info("generating {} sequences of {} frames (seed {})", a.sequences, sc.frames, o.effective_seed());
  const auto data = generate_dataset(a.sequences, o.effective_seed(), body, sc);
  ensure_parent(o.out);
  write_dataset(data, o.out);
  if (!a.keypoints_dir.empty()) {
    fs::create_directories(a.keypoints_dir);
    for (std::size_t i = 0; i < data.size(); ++i) {
      write_keypoints_json(keypoints_of(data[i]), CropBox{},
                           (fs::path(a.keypoints_dir) / fmt::format("keypoints_{:04}.json", i)).string());
    }
  }
}

// ---- train -----------------------------------------------------------------

struct TrainArgs {
  std::string validation;
  std::string log;
  std::optional<std::size_t> epochs;
};

void cmd_train(Options& o, const TrainArgs& a) {
  if (o.out.empty()) throw UsageError("--out is required");
  auto training = load_dataset(o.dataset, "--dataset");
  std::vector<SyntheticSequence> validation;
  if (!a.validation.empty()) {
    validation = read_dataset(a.validation);
  } else {
    if (training.size() < 2) throw UsageError("--dataset needs at least 2 sequences to hold out validation");
    const std::size_t held = std::max<std::size_t>(1, training.size() / 10);
    validation.assign(std::make_move_iterator(training.end() - static_cast<long>(held)),
                      std::make_move_iterator(training.end()));
    training.resize(training.size() - held);
  }
  TrainConfig tc = o.run.train;
  if (a.epochs) tc.epochs = *a.epochs;
  tc.checkpoint_path = o.out;
  tc.log_path = a.log.empty() ? o.out + ".csv" : a.log;
  ensure_parent(tc.checkpoint_path);
  ensure_parent(tc.log_path);
  if (o.checkpoint.empty()) o.checkpoint = "init";
  PoseModel model = o.model();
  spdlog::info("training on {} sequences, validating on {}", training.size(), validation.size());
  train(model, training, validation, tc, [](const EpochRecord& r) {
    spdlog::info("epoch {}: val nll {:.4f}, PA-MPJPE {:.2f} mm, disc {:.4f}", r.epoch, r.validation.nll,
                 r.validation.pa_mpjpe_mm, r.disc_loss);
  });
}

// ---- eval ------------------------------------------------------------------

struct EvalArgs {
  std::size_t samples = 0;
  std::string json_path;
};

void cmd_eval(Options& o, const EvalArgs& a) {
  if (o.out.empty()) throw UsageError("--out is required");
  const auto data = load_dataset(o.dataset, "--dataset");
  const PoseModel model = o.model();
  EvalConfig ec;
  ec.samples = a.samples;
  ec.seed = o.effective_seed();
  ec.threads = o.threads;
  const EvalReport report = evaluate(model, data, ec);
  write_text(o.out, eval_report_csv(report));
  if (!a.json_path.empty()) write_text(a.json_path, eval_report_json(report));
  spdlog::info("mean PA-MPJPE {:.3f} mm over {} frames", report.aggregate.pa_mpjpe_mm, report.aggregate.frames);
}

// ---- shared input selection ------------------------------------------------

struct SourceArgs {
  std::string keypoints;
  std::optional<std::size_t> sequence;
};

// One keypoint sequence from --keypoints or --dataset/--sequence (default 0).
KeypointSequence single_source(const Options& o, const SourceArgs& s) {
  if (!s.keypoints.empty() && !o.dataset.empty()) throw UsageError("give either --keypoints or --dataset, not both");
  if (!s.keypoints.empty()) return ingest_keypoints(s.keypoints);
  const auto data = load_dataset(o.dataset, "--dataset or --keypoints");
  const std::size_t index = s.sequence.value_or(0);
  if (index >= data.size()) {
    throw UsageError(fmt::format("--sequence {} is out of range; {} has {} sequences", index, o.dataset, data.size()));
  }
  return keypoints_of(data[index]);
}

// ---- sample ----------------------------------------------------------------

struct SampleArgs {
  SourceArgs source;
  std::size_t frame = 0;
  std::size_t samples = 10;
};

void cmd_sample(Options& o, const SampleArgs& a) {
  if (o.out.empty()) throw UsageError("--out is required");
  if (a.samples == 0) throw UsageError("--samples must be at least 1");
  const KeypointSequence kp = single_source(o, a.source);
  const PoseModel model = o.model();
  check_compatible(model, kp.joints, "the input");
  if (a.frame >= kp.frames) throw UsageError(fmt::format("--frame {} is out of range ({} frames)", a.frame, kp.frames));

  NoGradGuard guard;
  const Regression reg = model.regress(observation_rows(kp.keypoints, kp.confidence, kp.joints));
  const std::size_t c = reg.context.dim(1), d = model.pose_dim();
  const std::vector<double> context(reg.context.data().begin() + static_cast<long>(a.frame * c),
                                    reg.context.data().begin() + static_cast<long>((a.frame + 1) * c));
  const std::vector<double> mode(reg.mode.data().begin() + static_cast<long>(a.frame * d),
                                 reg.mode.data().begin() + static_cast<long>((a.frame + 1) * d));
  const double mode_lp =
      model.flow.log_prob(Tensor({1, d}, mode), Tensor({1, c}, context)).item();

  Rng rng(derive_seed(o.effective_seed(), a.frame));
  json samples = json::array();
  for (const auto& s : model.flow.sample(a.samples, context, rng)) {
    samples.push_back({{"theta_axis_angle", axis_angles(s.theta)}, {"log_prob", s.log_prob}});
  }
  json doc;
  doc["frame"] = a.frame;
  doc["joints"] = kp.joints;
  doc["seed"] = o.effective_seed();
  doc["mode"] = {{"theta_axis_angle", axis_angles(mode)}, {"log_prob", mode_lp}};
  doc["samples"] = std::move(samples);
  write_text(o.out, doc.dump(1));
}

// ---- fit -------------------------------------------------------------------

struct FitArgs {
  SourceArgs source;
  std::optional<std::size_t> limit;
  bool obj = false;
};

void write_frame_objs(const BodyModel& body, std::span<const double> vertices, std::size_t frames,
                      const std::string& stem) {
  for (std::size_t t = 0; t < frames; ++t) {
    std::vector<Eigen::Vector3d> v(body.vertex_count);
    for (std::size_t n = 0; n < body.vertex_count; ++n) {
      const std::size_t base = (t * body.vertex_count + n) * 3;
      v[n] = {vertices[base], vertices[base + 1], vertices[base + 2]};
    }
    write_obj(fmt::format("{}_frame_{:03}.obj", stem, t), body, v);
  }
}

void cmd_fit(Options& o, const FitArgs& a) {
  if (o.out.empty()) throw UsageError("--out is required (an output directory)");
  const PoseModel model = o.model();
  const FitConfig fc = o.run.fit;
  fc.validate();

  // Inputs with their output index and, for synthetic data, ground truth.
  std::vector<KeypointSequence> inputs;
  std::vector<std::size_t> indices;
  std::vector<const SyntheticSequence*> truth;
  std::vector<SyntheticSequence> data;
  if (!a.source.keypoints.empty()) {
    if (!o.dataset.empty()) throw UsageError("give either --keypoints or --dataset, not both");
    inputs.push_back(ingest_keypoints(a.source.keypoints));
    indices.push_back(0);
    truth.push_back(nullptr);
  } else {
    data = load_dataset(o.dataset, "--dataset or --keypoints");
    std::size_t begin = 0, end = data.size();
    if (a.source.sequence) {
      if (*a.source.sequence >= data.size()) {
        throw UsageError(fmt::format("--sequence {} is out of range; {} has {} sequences", *a.source.sequence,
                                     o.dataset, data.size()));
      }
      begin = *a.source.sequence;
      end = begin + 1;
    }
    if (a.limit) end = std::min(end, begin + *a.limit);
    for (std::size_t i = begin; i < end; ++i) {
      inputs.push_back(keypoints_of(data[i]));
      indices.push_back(i);
      truth.push_back(&data[i]);
    }
  }
  for (const auto& in : inputs) check_compatible(model, in.joints, "the input");

  fs::create_directories(o.out);
  std::vector<std::string> rows(inputs.size());
  parallel_for(inputs.size(), o.threads, [&](std::size_t i) {
    const std::string stem = (fs::path(o.out) / fmt::format("fit_{:04}", indices[i])).string();
    const FitResult r = fit(model, inputs[i], fc);
    write_text(stem + ".json", fit_result_json(r));
    if (a.obj) write_frame_objs(model.body, r.vertices, r.frames, stem);
    std::string mode_pa, fit_pa;
    if (truth[i] != nullptr) {
      NoGradGuard guard;
      const Regression reg = model.regress(observation_rows(inputs[i].keypoints, inputs[i].confidence, r.joints));
      mode_pa = fmt::format("{:.10g}", mean_pa_mpjpe(reg.mesh.joints.data(), truth[i]->gt_joints3d, r.frames, r.joints));
      fit_pa = fmt::format("{:.10g}", mean_pa_mpjpe(r.joints3d, truth[i]->gt_joints3d, r.frames, r.joints));
    }
    rows[i] = fmt::format("{},{},{:.10g},{:.10g},{},{},{},{}\n", indices[i], r.frames, r.initial.total,
                          r.final_terms.total, r.best_iteration, r.converged ? 1 : 0, mode_pa, fit_pa);
    spdlog::info("fit {}: energy {:.6g} -> {:.6g}", indices[i], r.initial.total, r.final_terms.total);
  });
  std::string summary =
      "sequence,frames,initial_energy,final_energy,best_iteration,converged,mode_pa_mpjpe_mm,fit_pa_mpjpe_mm\n";
  for (const auto& row : rows) summary += row;
  write_text((fs::path(o.out) / "summary.csv").string(), summary);
}

// ---- export-mesh -----------------------------------------------------------

struct ExportArgs {
  std::string fit_json;
  std::optional<std::size_t> sequence;
};

void cmd_export(Options& o, const ExportArgs& a) {
  if (o.out.empty()) throw UsageError("--out is required (an output directory)");
  fs::create_directories(o.out);
  const std::string stem = (fs::path(o.out) / "mesh").string();
  if (!a.fit_json.empty()) {
    if (!o.dataset.empty()) throw UsageError("give either --fit or --dataset, not both");
    const BodyModel body = model_from_path(o.run.model.body_model);
    std::ifstream in(a.fit_json);
    if (!in) throw Error("cannot open --fit file " + a.fit_json);
    json doc;
    try {
      doc = json::parse(in);
    } catch (const json::exception& e) {
      throw FormatError(fmt::format("{}: {}", a.fit_json, e.what()));
    }
    const auto& frames = doc.at("frames");
    std::vector<double> vertices;
    for (std::size_t t = 0; t < frames.size(); ++t) {
      const auto aa = frames[t].at("theta_axis_angle").get<std::vector<double>>();
      const auto beta = frames[t].at("beta").get<std::vector<double>>();
      if (aa.size() != 3 * body.joint_count || beta.size() != body.shape_count) {
        throw ShapeError(fmt::format("{}: frame {} does not match the body model", a.fit_json, t));
      }
      std::vector<Eigen::Matrix3d> rotations;
      for (std::size_t j = 0; j < body.joint_count; ++j) {
        rotations.push_back(axis_angle_to_matrix({aa[3 * j], aa[3 * j + 1], aa[3 * j + 2]}));
      }
      for (const auto& v : body_mesh(body, rotations, beta).vertices) vertices.insert(vertices.end(), {v.x(), v.y(), v.z()});
    }
    write_frame_objs(body, vertices, frames.size(), stem);
    return;
  }
  SourceArgs source;
  source.sequence = a.sequence;
  const KeypointSequence kp = single_source(o, source);
  const PoseModel model = o.model();
  check_compatible(model, kp.joints, "the input");
  const Regression reg = model.regress(observation_rows(kp.keypoints, kp.confidence, kp.joints));
  write_frame_objs(model.body, reg.mesh.vertices.data(), kp.frames, stem);
}

}  // namespace

int run(const std::vector<std::string>& args) {
  setup_logging();
  CLI::App app{"Video pose estimation with a conditional normalizing-flow prior", "flowpose"};
  app.require_subcommand(1, 1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  Options o;
  GenerateArgs gen;
  TrainArgs tr;
  EvalArgs ev;
  SampleArgs sa;
  FitArgs fi;
  ExportArgs ex;

  auto* generate = app.add_subcommand("generate", "Write a synthetic dataset");
  add_config(generate, o);
  add_seed(generate, o);
  generate->add_option("--out", o.out, "Dataset file to write")->required();
  generate->add_option("--sequences", gen.sequences, "Number of sequences")->capture_default_str();
  generate->add_option("--frames", gen.frames, "Frames per sequence (overrides [data] frames)");
  generate->add_option("--keypoints-dir", gen.keypoints_dir, "Also write each sequence's noisy keypoints as JSON here");

  auto* train_cmd = app.add_subcommand("train", "Train a model; writes a checkpoint and a CSV metrics log");
  add_config(train_cmd, o);
  add_seed(train_cmd, o);
  add_checkpoint(train_cmd, o);
  train_cmd->add_option("--dataset", o.dataset, "Training dataset")->required();
  train_cmd->add_option("--validation", tr.validation, "Validation dataset (default: last 10% of --dataset)");
  train_cmd->add_option("--out", o.out, "Checkpoint to write after every epoch")->required();
  train_cmd->add_option("--log", tr.log, "CSV metrics log (default: <out>.csv)");
  train_cmd->add_option("--epochs", tr.epochs, "Epochs (overrides [train] epochs)");

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  add_config(eval_cmd, o);
  add_seed(eval_cmd, o);
  add_threads(eval_cmd, o);
  add_checkpoint(eval_cmd, o);
  eval_cmd->add_option("--dataset", o.dataset, "Evaluation dataset")->required();
  eval_cmd->add_option("--out", o.out, "CSV report to write")->required();
  eval_cmd->add_option("--json", ev.json_path, "Also write the report as JSON");
  eval_cmd->add_option("--samples", ev.samples, "n for minimum PA-MPJPE over n drawn samples (0 = mode only)")
      ->capture_default_str();

  auto* sample_cmd = app.add_subcommand("sample", "Draw pose hypotheses for one frame with their log-densities");
  add_config(sample_cmd, o);
  add_seed(sample_cmd, o);
  add_checkpoint(sample_cmd, o);
  sample_cmd->add_option("--dataset", o.dataset, "Dataset holding the input sequence");
  sample_cmd->add_option("--sequence", sa.source.sequence, "Sequence index in --dataset (default 0)");
  sample_cmd->add_option("--keypoints", sa.source.keypoints, "Keypoint JSON input instead of --dataset");
  sample_cmd->add_option("--frame", sa.frame, "Frame index")->capture_default_str();
  sample_cmd->add_option("--samples", sa.samples, "Number of hypotheses")->capture_default_str();
  sample_cmd->add_option("--out", o.out, "JSON file to write")->required();

  auto* fit_cmd = app.add_subcommand("fit", "Fit pose, shape and camera to 2D keypoints under the learned prior");
  add_config(fit_cmd, o);
  add_seed(fit_cmd, o);
  add_threads(fit_cmd, o);
  add_checkpoint(fit_cmd, o);
  fit_cmd->add_option("--keypoints", fi.source.keypoints, "Keypoint JSON input");
  fit_cmd->add_option("--dataset", o.dataset, "Fit every sequence of a dataset instead");
  fit_cmd->add_option("--sequence", fi.source.sequence, "Fit only this sequence of --dataset");
  fit_cmd->add_option("--limit", fi.limit, "Fit at most this many sequences of --dataset");
  fit_cmd->add_option("--out", o.out, "Output directory (fit_NNNN.json per sequence, summary.csv)")->required();
  fit_cmd->add_flag("--obj", fi.obj, "Also write one OBJ mesh per fitted frame");

  auto* export_cmd = app.add_subcommand("export-mesh", "Write OBJ meshes from a fit result or a model's mode");
  add_config(export_cmd, o);
  add_seed(export_cmd, o);
  add_checkpoint(export_cmd, o);
  export_cmd->add_option("--fit", ex.fit_json, "Fit JSON written by the fit subcommand");
  export_cmd->add_option("--dataset", o.dataset, "Dataset whose sequence is regressed with --checkpoint");
  export_cmd->add_option("--sequence", ex.sequence, "Sequence index in --dataset (default 0)");
  export_cmd->add_option("--out", o.out, "Output directory (mesh_frame_NNN.obj)")->required();

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "flowpose: error: " << e.what() << "\n";
    return 2;
  }

  try {
    o.resolve();
    if (*generate) cmd_generate(o, gen);
    else if (*train_cmd) cmd_train(o, tr);
    else if (*eval_cmd) cmd_eval(o, ev);
    else if (*sample_cmd) cmd_sample(o, sa);
    else if (*fit_cmd) cmd_fit(o, fi);
    else if (*export_cmd) cmd_export(o, ex);
  } catch (const UsageError& e) {
    std::cerr << "flowpose: error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "flowpose: error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace flowpose
