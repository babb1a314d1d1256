#include "flowpose/data_synth.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include <nlohmann/json.hpp>

#include "flowpose/binary_io.hpp"
#include "flowpose/rotations.hpp"

namespace flowpose {

using nlohmann::json;

std::vector<double> SyntheticSequence::gt_pose_vectors() const {
  std::vector<double> out;
  out.reserve(frames * joints * 6);
  for (std::size_t t = 0; t < frames; ++t) {
    std::vector<Eigen::Matrix3d> rots;
    for (std::size_t j = 0; j < joints; ++j) {
      rots.push_back(axis_angle_to_matrix(Eigen::Map<const Eigen::Vector3d>(gt_axis_angle.data() + (t * joints + j) * 3)));
    }
    const auto v = pose_vector_from_rotations(rots);
    out.insert(out.end(), v.begin(), v.end());
  }
  return out;
}

SyntheticSequence generate_sequence(Rng& rng, const BodyModel& model, const SynthConfig& config) {
  const std::size_t t_count = config.frames, jc = model.joint_count, n = model.vertex_count, b = model.shape_count;
  if (t_count == 0) throw ShapeError("generate_sequence: frame count must be positive");
  SyntheticSequence seq;
  seq.frames = t_count;
  seq.joints = jc;
  seq.vertices = n;
  seq.shapes = b;
  seq.fps = config.fps;

  // Angle trajectories: each component is a sum of 1..K sinusoids.
  seq.gt_axis_angle.assign(t_count * jc * 3, 0.0);
  seq.accel_bound.assign(jc * 3, 0.0);
  std::uniform_int_distribution<std::size_t> count_dist(1, config.max_sinusoids);
  for (std::size_t j = 0; j < jc; ++j) {
    for (int a = 0; a < 3; ++a) {
      const std::size_t k_count = count_dist(rng);
      for (std::size_t k = 0; k < k_count; ++k) {
        const double amplitude = uniform(rng, 0.0, config.max_amplitude);
        const double period = uniform(rng, config.min_period, config.max_period);
        const double phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
        const double omega = 2.0 * std::numbers::pi / period;
        for (std::size_t t = 0; t < t_count; ++t) {
          seq.gt_axis_angle[(t * jc + j) * 3 + a] += amplitude * std::sin(omega * static_cast<double>(t) + phase);
        }
        // |x(t+1) - 2x(t) + x(t-1)| = |x(t)| (2 - 2 cos w) <= 4 A sin^2(w/2).
        seq.accel_bound[j * 3 + a] += 4.0 * amplitude * std::pow(std::sin(omega / 2.0), 2);
      }
    }
  }

  seq.gt_beta.resize(b);
  for (auto& v : seq.gt_beta) v = config.beta_sigma * standard_normal(rng);
  seq.gt_beta = clamp_beta(seq.gt_beta);

  const double s = uniform(rng, 0.8, 1.2);
  seq.gt_cam = {s, uniform(rng, -0.1, 0.1), -0.4 * s + uniform(rng, -0.1, 0.1)};

  {
    NoGradGuard guard;
    std::vector<double> rot(t_count * jc * 9);
    for (std::size_t i = 0; i < t_count * jc; ++i) {
      const Eigen::Matrix3d r = axis_angle_to_matrix(Eigen::Map<const Eigen::Vector3d>(seq.gt_axis_angle.data() + 3 * i));
      for (int row = 0; row < 3; ++row) {
        for (int col = 0; col < 3; ++col) rot[i * 9 + row * 3 + col] = r(row, col);
      }
    }
    std::vector<double> betas;
    for (std::size_t t = 0; t < t_count; ++t) betas.insert(betas.end(), seq.gt_beta.begin(), seq.gt_beta.end());
    std::vector<double> cams;
    for (std::size_t t = 0; t < t_count; ++t) cams.insert(cams.end(), seq.gt_cam.begin(), seq.gt_cam.end());
    const auto mesh = body_forward(model, Tensor({t_count, jc, 3, 3}, std::move(rot)), Tensor({t_count, b}, std::move(betas)));
    seq.gt_vertices = mesh.vertices.values();
    seq.gt_joints3d = mesh.joints.values();
    seq.clean_keypoints = project(mesh.joints, Tensor({t_count, 3}, std::move(cams))).values();
  }

  seq.noisy_keypoints = seq.clean_keypoints;
  seq.confidence.assign(t_count * jc, 1.0);
  for (std::size_t i = 0; i < t_count * jc; ++i) {
    seq.noisy_keypoints[2 * i] += config.noise_sigma * standard_normal(rng);
    seq.noisy_keypoints[2 * i + 1] += config.noise_sigma * standard_normal(rng);
    if (uniform(rng, 0.0, 1.0) < config.occlusion) seq.confidence[i] = 0.0;
  }
  if (uniform(rng, 0.0, 1.0) < config.partial_fraction) seq.annotations = 0;
  return seq;
}

std::vector<SyntheticSequence> generate_dataset(std::size_t count, std::uint64_t seed, const BodyModel& model,
                                                const SynthConfig& config) {
  std::vector<SyntheticSequence> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng(derive_seed(seed, i));
    out.push_back(generate_sequence(rng, model, config));
  }
  return out;
}

ObservationEncoder::ObservationEncoder(std::size_t joints, std::size_t hidden, std::size_t feature_dim, Rng& rng)
    : net{Linear::random(3 * joints, hidden, rng), Linear::random(hidden, feature_dim, rng)}, joints_(joints) {}

Tensor ObservationEncoder::encode(const Tensor& observations) const {
  if (observations.rank() != 2 || observations.dim(1) != 3 * joints_) {
    throw ShapeError("encode_observation: expected [M," + std::to_string(3 * joints_) + "] rows for " +
                     std::to_string(joints_) + " joints, got " + shape_str(observations.shape()));
  }
  return net(observations);
}

Tensor observation_rows(const std::vector<double>& keypoints, const std::vector<double>& confidence,
                        std::size_t joints) {
  if (confidence.empty() || confidence.size() % joints != 0 || keypoints.size() != 2 * confidence.size()) {
    throw ShapeError("observation_rows: keypoint/confidence arrays do not match " + std::to_string(joints) + " joints");
  }
  const std::size_t frames = confidence.size() / joints;
  std::vector<double> rows(frames * joints * 3);
  for (std::size_t i = 0; i < frames * joints; ++i) {
    const double c = confidence[i];
    rows[3 * i] = keypoints[2 * i] * c;
    rows[3 * i + 1] = keypoints[2 * i + 1] * c;
    rows[3 * i + 2] = c;
  }
  return Tensor({frames, 3 * joints}, std::move(rows));
}

namespace {

constexpr char kDatasetMagic[8] = {'F', 'P', 'D', 'A', 'T', 'A', '0', '1'};

void expect_size(const io::Reader& r, const char* name, std::size_t got, std::size_t want) {
  if (got != want) {
    throw FormatError(r.what() + ": field '" + name + "' has " + std::to_string(got) + " values, expected " +
                      std::to_string(want));
  }
}

}  // namespace

void write_dataset(const std::vector<SyntheticSequence>& sequences, const std::string& path) {
  io::Writer w;
  w.bytes(kDatasetMagic, sizeof kDatasetMagic);
  w.u32(kDatasetVersion);
  w.u64(sequences.size());
  for (const auto& s : sequences) {
    w.u64(s.frames);
    w.u64(s.joints);
    w.u64(s.vertices);
    w.u64(s.shapes);
    w.f64(s.fps);
    w.u32(s.annotations);
    w.f64s(s.gt_axis_angle);
    w.f64s(s.gt_beta);
    w.f64s({s.gt_cam.begin(), s.gt_cam.end()});
    w.f64s(s.gt_joints3d);
    w.f64s(s.gt_vertices);
    w.f64s(s.clean_keypoints);
    w.f64s(s.noisy_keypoints);
    w.f64s(s.confidence);
    w.f64s(s.accel_bound);
  }
  w.save(path);
}

std::vector<SyntheticSequence> read_dataset(const std::string& path) {
  auto r = io::Reader::open(path, "dataset '" + path + "'");
  char magic[8];
  r.bytes(magic, sizeof magic);
  if (std::memcmp(magic, kDatasetMagic, sizeof magic) != 0) throw FormatError(r.what() + ": bad magic");
  const auto version = r.u32();
  if (version != kDatasetVersion) throw FormatError(r.what() + ": unsupported format version " + std::to_string(version));
  const auto count = r.u64();
  // Every sequence needs at least its fixed-size header.
  if (count > r.remaining() / 48) throw FormatError(r.what() + ": truncated (sequence count exceeds file size)");
  std::vector<SyntheticSequence> out;
  out.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    SyntheticSequence s;
    s.frames = r.u64();
    s.joints = r.u64();
    s.vertices = r.u64();
    s.shapes = r.u64();
    s.fps = r.f64();
    s.annotations = r.u32();
    s.gt_axis_angle = r.f64s();
    s.gt_beta = r.f64s();
    const auto cam = r.f64s();
    s.gt_joints3d = r.f64s();
    s.gt_vertices = r.f64s();
    s.clean_keypoints = r.f64s();
    s.noisy_keypoints = r.f64s();
    s.confidence = r.f64s();
    s.accel_bound = r.f64s();
    const std::size_t t = s.frames, j = s.joints;
    expect_size(r, "gt_axis_angle", s.gt_axis_angle.size(), t * j * 3);
    expect_size(r, "gt_beta", s.gt_beta.size(), s.shapes);
    expect_size(r, "gt_cam", cam.size(), 3);
    expect_size(r, "gt_joints3d", s.gt_joints3d.size(), t * j * 3);
    expect_size(r, "gt_vertices", s.gt_vertices.size(), t * s.vertices * 3);
    expect_size(r, "clean_keypoints", s.clean_keypoints.size(), t * j * 2);
    expect_size(r, "noisy_keypoints", s.noisy_keypoints.size(), t * j * 2);
    expect_size(r, "confidence", s.confidence.size(), t * j);
    expect_size(r, "accel_bound", s.accel_bound.size(), j * 3);
    std::copy(cam.begin(), cam.end(), s.gt_cam.begin());
    out.push_back(std::move(s));
  }
  if (!r.at_end()) throw FormatError(r.what() + ": trailing bytes after " + std::to_string(count) + " sequences");
  return out;
}

KeypointSequence ingest_keypoints(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open keypoint file '" + path + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError("keypoints '" + path + "': malformed JSON: " + e.what());
  }
  KeypointSequence out;
  try {
    out.fps = doc.value("fps", 30.0);
    out.joints = doc.at("joints").get<std::size_t>();
    const json& frames = doc.at("frames");
    if (!frames.is_array() || frames.empty()) throw FormatError("keypoints '" + path + "': empty frame list");
    out.frames = frames.size();
    for (std::size_t f = 0; f < frames.size(); ++f) {
      const json& frame = frames[f];
      const std::string where = "keypoints '" + path + "' frame " + std::to_string(f);
      const json& crop = frame.at("crop");
      const double cx = crop.at("cx").get<double>(), cy = crop.at("cy").get<double>(), size = crop.at("size").get<double>();
      if (!(size > 0.0)) throw FormatError(where + ": crop size must be positive");
      const json& kps = frame.at("keypoints");
      if (!kps.is_array() || kps.size() != out.joints) {
        throw FormatError(where + ": expected " + std::to_string(out.joints) + " joints, got " +
                          std::to_string(kps.is_array() ? kps.size() : 0));
      }
      for (std::size_t j = 0; j < out.joints; ++j) {
        const json& e = kps[j];
        if (e.is_null() || (e.is_array() && e.empty())) {
          out.keypoints.insert(out.keypoints.end(), {0.0, 0.0});
          out.confidence.push_back(0.0);
          continue;
        }
        if (!e.is_array() || e.size() != 3) throw FormatError(where + ": joint " + std::to_string(j) + " is not [x, y, conf]");
        out.keypoints.push_back((e[0].get<double>() - cx) / (size / 2.0));
        out.keypoints.push_back((e[1].get<double>() - cy) / (size / 2.0));
        out.confidence.push_back(std::clamp(e[2].get<double>(), 0.0, 1.0));
      }
    }
  } catch (const json::exception& e) {
    throw FormatError("keypoints '" + path + "': " + e.what());
  }
  return out;
}

void write_keypoints_json(const KeypointSequence& kp, const CropBox& crop, const std::string& path) {
  json doc;
  doc["fps"] = kp.fps;
  doc["joints"] = kp.joints;
  json frames = json::array();
  for (std::size_t f = 0; f < kp.frames; ++f) {
    json frame;
    frame["crop"] = {{"cx", crop.cx}, {"cy", crop.cy}, {"size", crop.size}};
    json points = json::array();
    for (std::size_t j = 0; j < kp.joints; ++j) {
      const std::size_t i = f * kp.joints + j;
      points.push_back({crop.cx + kp.keypoints[2 * i] * crop.size / 2.0, crop.cy + kp.keypoints[2 * i + 1] * crop.size / 2.0,
                        kp.confidence[i]});
    }
    frame["keypoints"] = std::move(points);
    frames.push_back(std::move(frame));
  }
  doc["frames"] = std::move(frames);
  std::ofstream out(path);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out << doc.dump(1) << '\n';
}

}  // namespace flowpose
