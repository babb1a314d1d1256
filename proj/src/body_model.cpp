#include "flowpose/body_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>

#include <nlohmann/json.hpp>

namespace flowpose {

using nlohmann::json;

namespace {

constexpr double kRowSumTol = 1e-6;

void check_row_sums(const char* field, const std::vector<double>& m, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      const double v = m[r * cols + c];
      if (!std::isfinite(v) || v < 0.0) {
        throw ValidationError(std::string(field) + ": negative or non-finite weight at row " + std::to_string(r) +
                              ", column " + std::to_string(c));
      }
      total += v;
    }
    if (std::abs(total - 1.0) > kRowSumTol) {
      throw ValidationError(std::string(field) + ": row " + std::to_string(r) + " sums to " + std::to_string(total));
    }
  }
}

const json& field(const json& j, const char* name) {
  auto it = j.find(name);
  if (it == j.end()) throw FormatError(std::string("model: missing field '") + name + "'");
  return *it;
}

std::vector<double> flat_matrix(const json& j, const char* name, std::size_t rows, std::size_t cols) {
  const json& m = field(j, name);
  if (!m.is_array() || m.size() != rows) {
    throw FormatError(std::string("model: field '") + name + "' must have " + std::to_string(rows) + " rows");
  }
  std::vector<double> out;
  out.reserve(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    if (!m[r].is_array() || m[r].size() != cols) {
      throw FormatError(std::string("model: field '") + name + "' row " + std::to_string(r) + " must have " +
                        std::to_string(cols) + " entries");
    }
    for (const auto& v : m[r]) out.push_back(v.get<double>());
  }
  return out;
}

json nested(const std::vector<double>& flat, std::size_t rows, std::size_t cols) {
  json out = json::array();
  for (std::size_t r = 0; r < rows; ++r) {
    out.push_back(std::vector<double>(flat.begin() + r * cols, flat.begin() + (r + 1) * cols));
  }
  return out;
}

}  // namespace

std::vector<int> BodyModel::kinematic_order() const {
  std::vector<int> order;
  std::vector<bool> placed(joint_count, false);
  while (order.size() < joint_count) {
    const std::size_t before = order.size();
    for (std::size_t j = 0; j < joint_count; ++j) {
      if (placed[j]) continue;
      if (parents[j] < 0 || placed[parents[j]]) {
        placed[j] = true;
        order.push_back(static_cast<int>(j));
      }
    }
    if (order.size() == before) throw ValidationError("parents: kinematic tree contains a cycle");
  }
  return order;
}

void validate(const BodyModel& m) {
  const std::size_t n = m.vertex_count, j = m.joint_count, b = m.shape_count;
  if (n == 0 || j == 0) throw ValidationError("model: N and J must be positive");
  if (m.template_vertices.size() != n * 3) throw ValidationError("template: expected N x 3 values");
  if (m.shape_dirs.size() != n * 3 * b) throw ValidationError("shape_dirs: expected N*3*B values");
  if (m.joint_regressor.size() != j * n) throw ValidationError("joint_regressor: expected J x N values");
  if (m.skin_weights.size() != n * j) throw ValidationError("skin_weights: expected N x J values");
  if (m.parents.size() != j) throw ValidationError("parents: expected J entries");
  for (double v : m.template_vertices) {
    if (!std::isfinite(v)) throw ValidationError("template: non-finite value");
  }
  for (double v : m.shape_dirs) {
    if (!std::isfinite(v)) throw ValidationError("shape_dirs: non-finite value");
  }
  if (m.parents[0] != -1) throw ValidationError("parents: joint 0 must be the root (parent -1)");
  for (std::size_t k = 1; k < j; ++k) {
    const int p = m.parents[k];
    if (p < 0 || p >= static_cast<int>(j)) {
      throw ValidationError("parents: joint " + std::to_string(k) + " has invalid parent " + std::to_string(p));
    }
    // Walking up from k must reach the root within J steps.
    int cur = static_cast<int>(k);
    for (std::size_t steps = 0; cur != 0; ++steps) {
      if (steps > j) throw ValidationError("parents: cycle at joint " + std::to_string(k));
      cur = m.parents[cur];
      if (cur < 0) throw ValidationError("parents: joint " + std::to_string(k) + " is not connected to joint 0");
    }
  }
  check_row_sums("joint_regressor", m.joint_regressor, j, n);
  check_row_sums("skin_weights", m.skin_weights, n, j);
  for (std::size_t f = 0; f < m.faces.size(); ++f) {
    for (int v : m.faces[f]) {
      if (v < 0 || v >= static_cast<int>(n)) throw ValidationError("faces: bad vertex index in face " + std::to_string(f));
    }
  }
}

BodyModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open model file '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError("model '" + path + "': " + e.what());
  }
  BodyModel m;
  try {
    const int version = field(j, "version").get<int>();
    if (version != kBodyModelVersion) throw FormatError("model: unsupported version " + std::to_string(version));
    m.vertex_count = field(j, "N").get<std::size_t>();
    m.joint_count = field(j, "J").get<std::size_t>();
    m.shape_count = field(j, "B").get<std::size_t>();
    m.template_vertices = flat_matrix(j, "template", m.vertex_count, 3);
    m.shape_dirs = field(j, "shape_dirs").get<std::vector<double>>();
    m.joint_regressor = flat_matrix(j, "joint_regressor", m.joint_count, m.vertex_count);
    m.parents = field(j, "parents").get<std::vector<int>>();
    m.skin_weights = flat_matrix(j, "skin_weights", m.vertex_count, m.joint_count);
    if (j.contains("faces")) m.faces = j["faces"].get<std::vector<std::array<int, 3>>>();
    if (j.contains("joint_names")) m.joint_names = j["joint_names"].get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw FormatError("model '" + path + "': " + e.what());
  }
  validate(m);
  return m;
}

void save_model(const BodyModel& m, const std::string& path) {
  json j;
  j["format"] = "flowpose-body-model";
  j["version"] = kBodyModelVersion;
  j["N"] = m.vertex_count;
  j["J"] = m.joint_count;
  j["B"] = m.shape_count;
  if (!m.joint_names.empty()) j["joint_names"] = m.joint_names;
  j["parents"] = m.parents;
  j["template"] = nested(m.template_vertices, m.vertex_count, 3);
  j["shape_dirs"] = m.shape_dirs;
  j["joint_regressor"] = nested(m.joint_regressor, m.joint_count, m.vertex_count);
  j["skin_weights"] = nested(m.skin_weights, m.vertex_count, m.joint_count);
  if (!m.faces.empty()) j["faces"] = m.faces;
  std::ofstream out(path);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out << j.dump(1) << '\n';
}

BodyModel make_toy_model() {
  struct Segment {
    const char* name;
    int parent;
    Eigen::Vector3d start, end;
    double radius;
  };
  const std::vector<Segment> segments = {
      {"pelvis", -1, {0.0, 0.0, 0.0}, {0.0, 0.25, 0.05}, 0.12},
      {"spine", 0, {0.0, 0.25, 0.05}, {0.0, 0.50, -0.02}, 0.11},
      {"neck", 1, {0.0, 0.50, -0.02}, {0.0, 0.62, 0.03}, 0.05},
      {"head", 2, {0.0, 0.62, 0.03}, {0.0, 0.85, 0.08}, 0.09},
      {"left_shoulder", 2, {0.17, 0.47, 0.0}, {0.42, 0.45, 0.12}, 0.05},
      {"left_elbow", 4, {0.42, 0.45, 0.12}, {0.60, 0.43, 0.30}, 0.04},
      {"right_shoulder", 2, {-0.17, 0.47, 0.0}, {-0.42, 0.45, 0.12}, 0.05},
      {"right_elbow", 6, {-0.42, 0.45, 0.12}, {-0.60, 0.43, 0.30}, 0.04},
  };
  constexpr std::size_t kPerJoint = 8;
  BodyModel m;
  m.joint_count = segments.size();
  m.vertex_count = kPerJoint * m.joint_count;
  m.shape_count = 4;
  const std::size_t n = m.vertex_count, jc = m.joint_count, b = m.shape_count;
  m.template_vertices.assign(n * 3, 0.0);
  m.shape_dirs.assign(n * 3 * b, 0.0);
  m.joint_regressor.assign(jc * n, 0.0);
  m.skin_weights.assign(n * jc, 0.0);

  for (std::size_t j = 0; j < jc; ++j) {
    const Segment& s = segments[j];
    m.parents.push_back(s.parent);
    m.joint_names.emplace_back(s.name);
    const Eigen::Vector3d axis = s.end - s.start;
    const Eigen::Vector3d u = axis.cross(Eigen::Vector3d::UnitZ()).normalized();
    const Eigen::Vector3d w = u.cross(axis).normalized();
    const Eigen::Vector3d radial[4] = {u, w, -u, -w};
    for (std::size_t ring = 0; ring < 2; ++ring) {
      const Eigen::Vector3d centre = s.start + (ring == 0 ? 0.0 : 0.6) * axis;
      for (std::size_t k = 0; k < 4; ++k) {
        const std::size_t v = j * kPerJoint + ring * 4 + k;
        const Eigen::Vector3d pos = centre + s.radius * radial[k];
        for (int a = 0; a < 3; ++a) m.template_vertices[v * 3 + a] = pos[a];

        // Blend directions: global scale, arm length, girth, upper-body height.
        auto dir = [&](int axis_index, std::size_t coeff) -> double& {
          return m.shape_dirs[(v * 3 + axis_index) * b + coeff];
        };
        for (int a = 0; a < 3; ++a) dir(a, 0) = 0.05 * pos[a];
        if (j >= 4) dir(0, 1) = 0.04 * pos.x() / 0.45;
        for (int a = 0; a < 3; ++a) dir(a, 2) = 0.02 * radial[k][a];
        if (pos.y() > 0.2) dir(1, 3) = 0.03;

        if (ring == 0) {
          m.joint_regressor[j * n + v] = 0.25;
          if (s.parent < 0) {
            m.skin_weights[v * jc + j] = 1.0;
          } else {
            m.skin_weights[v * jc + j] = 0.5;
            m.skin_weights[v * jc + s.parent] = 0.5;
          }
        } else {
          m.skin_weights[v * jc + j] = 1.0;
        }
      }
    }
    // Tube faces between the two rings.
    const int base = static_cast<int>(j * kPerJoint);
    for (int k = 0; k < 4; ++k) {
      const int a0 = base + k, a1 = base + (k + 1) % 4;
      const int b0 = a0 + 4, b1 = a1 + 4;
      m.faces.push_back({a0, a1, b1});
      m.faces.push_back({a0, b1, b0});
    }
  }
  validate(m);
  return m;
}

BodyModel model_from_path(const std::string& path) { return path.empty() ? make_toy_model() : load_model(path); }

Tensor regress_joints3d(const BodyModel& model, const Tensor& vertices) {
  const Tensor regressor({model.joint_count, model.vertex_count}, model.joint_regressor);
  return matmul(regressor, vertices);
}

MeshTensors body_forward(const BodyModel& model, const Tensor& rotations, const Tensor& beta) {
  const std::size_t n = model.vertex_count, jc = model.joint_count, b = model.shape_count;
  if (rotations.rank() != 4 || rotations.dim(1) != jc || rotations.dim(2) != 3 || rotations.dim(3) != 3) {
    throw ShapeError("body_forward: rotations must be [M," + std::to_string(jc) + ",3,3], got " +
                     shape_str(rotations.shape()));
  }
  const std::size_t frames = rotations.dim(0);
  if (beta.rank() != 2 || beta.dim(0) != frames || beta.dim(1) != b) {
    throw ShapeError("body_forward: beta must be [" + std::to_string(frames) + "," + std::to_string(b) + "], got " +
                     shape_str(beta.shape()));
  }

  // Shaped template T' = template + shape_dirs . beta.
  std::vector<double> dirs_t(b * n * 3);
  for (std::size_t i = 0; i < n * 3; ++i) {
    for (std::size_t k = 0; k < b; ++k) dirs_t[k * n * 3 + i] = model.shape_dirs[i * b + k];
  }
  const Tensor dirs({b, n * 3}, std::move(dirs_t));
  const Tensor templ({n, 3}, model.template_vertices);
  const Tensor shaped = add(reshape(matmul(beta, dirs), {frames, n, 3}), templ);
  const Tensor rest = regress_joints3d(model, shaped);

  // Positions are carried as displacements from the rest pose so that the
  // identity pose reproduces the shaped template bit-for-bit.
  const Tensor eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  std::vector<Tensor> global_rot(jc), delta(jc), rest_j(jc), transforms(jc);
  for (int j : model.kinematic_order()) {
    const Tensor local = reshape(slice(rotations, 1, j, j + 1), {frames, 3, 3});
    rest_j[j] = slice(rest, 1, j, j + 1);  // [M,1,3]
    const int p = model.parents[j];
    if (p < 0) {
      global_rot[j] = local;
      delta[j] = Tensor::zeros({frames, 1, 3});
    } else {
      global_rot[j] = matmul(global_rot[p], local);
      delta[j] = add(delta[p], matmul(sub(rest_j[j], rest_j[p]), sub(transpose(global_rot[p]), eye)));
    }
    // Row-vector displacement x -> x (Q^T - I) + (delta - r (Q^T - I)), as a
    // [4,3] homogeneous block.
    const Tensor qt_minus_i = sub(transpose(global_rot[j]), eye);
    transforms[j] = concat({qt_minus_i, sub(delta[j], matmul(rest_j[j], qt_minus_i))}, 1);
  }

  const Tensor shaped_h = concat({shaped, Tensor::full({frames, n, 1}, 1.0)}, 2);
  const Tensor per_joint = matmul(shaped_h, concat(transforms, 2));  // [M, N, 3J]
  std::vector<double> w(n * jc * 3);
  for (std::size_t v = 0; v < n; ++v) {
    for (std::size_t j = 0; j < jc; ++j) {
      for (int a = 0; a < 3; ++a) w[(v * jc + j) * 3 + a] = model.skin_weights[v * jc + j];
    }
  }
  const Tensor weights({n, jc * 3}, std::move(w));
  const Tensor vertices = add(shaped, sum(reshape(mul(per_joint, weights), {frames, n, jc, 3}), 2));
  std::vector<Tensor> posed(jc);
  for (std::size_t j = 0; j < jc; ++j) posed[j] = add(rest_j[j], delta[j]);

  MeshTensors out;
  out.vertices = vertices;
  out.joints = regress_joints3d(model, vertices);
  out.posed_joints = concat(posed, 1);
  out.rest_joints = rest;
  return out;
}

std::vector<double> clamp_beta(std::vector<double> beta) {
  for (auto& v : beta) {
    if (!std::isfinite(v)) throw DomainError("beta: non-finite coefficient");
    v = std::clamp(v, -kBetaClamp, kBetaClamp);
  }
  return beta;
}

Mesh body_mesh(const BodyModel& model, const std::vector<Eigen::Matrix3d>& rotations, const std::vector<double>& beta) {
  if (rotations.size() != model.joint_count) throw ShapeError("body_mesh: expected one rotation per joint");
  std::vector<double> r(model.joint_count * 9);
  for (std::size_t j = 0; j < model.joint_count; ++j) {
    for (int a = 0; a < 3; ++a) {
      for (int c = 0; c < 3; ++c) r[j * 9 + a * 3 + c] = rotations[j](a, c);
    }
  }
  NoGradGuard guard;
  const auto out = body_forward(model, Tensor({1, model.joint_count, 3, 3}, std::move(r)),
                                Tensor({1, model.shape_count}, beta));
  Mesh mesh;
  auto v = out.vertices.data();
  for (std::size_t i = 0; i < model.vertex_count; ++i) mesh.vertices.emplace_back(v[3 * i], v[3 * i + 1], v[3 * i + 2]);
  auto jv = out.joints.data();
  for (std::size_t i = 0; i < model.joint_count; ++i) mesh.joints.emplace_back(jv[3 * i], jv[3 * i + 1], jv[3 * i + 2]);
  return mesh;
}

void write_obj(const std::string& path, const BodyModel& model, const std::vector<Eigen::Vector3d>& vertices) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out << std::setprecision(9);
  for (const auto& v : vertices) out << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
  for (const auto& f : model.faces) out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
}

}  // namespace flowpose
