#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "flowpose/checkpoint.hpp"
#include "flowpose/grad_check.hpp"
#include "flowpose/rotations.hpp"
#include "flowpose/training.hpp"

using namespace flowpose;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.observation_hidden = 8;
  c.head_hidden = 8;
  c.flow_blocks = 2;
  c.flow_hidden = 8;
  c.encoder.feature_dim = 8;
  c.encoder.context_dim = 8;
  c.encoder.hafi_hidden = 4;
  c.disc_hidden = 4;
  c.disc_layers = 1;
  return c;
}

std::vector<SyntheticSequence> tiny_dataset(std::size_t count, std::uint64_t seed, std::size_t frames = 6) {
  SynthConfig sc;
  sc.frames = frames;
  return generate_dataset(count, seed, make_toy_model(), sc);
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("flowpose_test_" + name)).string();
}

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = scale * standard_normal(rng);
  return Tensor(std::move(shape), std::move(v), true);
}

}  // namespace

TEST_CASE("loss_2d on a hand-computed fixture") {
  const Tensor joints({1, 2, 3}, {0.0, 0.0, 5.0, 1.0, 0.0, 0.0});
  const Tensor cam({1, 3}, {2.0, 0.1, -0.1});
  const Tensor kp({1, 2, 2}, {0.1, -0.1, 2.2, -0.1});
  CHECK(loss_2d(joints, cam, kp, Tensor({1, 2}, {1.0, 1.0})).item() == doctest::Approx(0.005).epsilon(1e-12));
  CHECK(loss_2d(joints, cam, kp, Tensor({1, 2}, {0.0, 1.0})).item() == doctest::Approx(0.01).epsilon(1e-12));
  CHECK_THROWS_AS(loss_2d(joints, cam, kp, Tensor({1, 2}, {0.0, 0.0})), DomainError);
  CHECK_THROWS_AS(loss_2d(joints, cam, Tensor({1, 3, 2}, std::vector<double>(6, 0.0)), Tensor({1, 2}, {1.0, 1.0})),
                  ShapeError);
}

TEST_CASE("loss_2d matches a loop oracle") {
  Rng rng(3);
  const std::size_t m = 4, j = 5;
  const Tensor joints = random_tensor({m, j, 3}, rng);
  std::vector<double> cam_v;
  for (std::size_t r = 0; r < m; ++r) cam_v.insert(cam_v.end(), {uniform(rng, 0.5, 1.5), uniform(rng, -0.2, 0.2), uniform(rng, -0.2, 0.2)});
  const Tensor cam({m, 3}, cam_v);
  const Tensor kp = random_tensor({m, j, 2}, rng);
  std::vector<double> conf_v(m * j);
  for (auto& c : conf_v) c = uniform(rng, 0.0, 1.0);
  const Tensor conf({m, j}, conf_v);

  double num = 0.0, den = 0.0;
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t k = 0; k < j; ++k) {
      const std::size_t i = r * j + k;
      const double px = cam_v[3 * r] * joints.at(3 * i) + cam_v[3 * r + 1];
      const double py = cam_v[3 * r] * joints.at(3 * i + 1) + cam_v[3 * r + 2];
      const double dx = px - kp.at(2 * i), dy = py - kp.at(2 * i + 1);
      num += conf_v[i] * (dx * dx + dy * dy);
      den += conf_v[i];
    }
  }
  CHECK(loss_2d(joints, cam, kp, conf).item() == doctest::Approx(num / den).epsilon(1e-12));
}

TEST_CASE("loss_3d is root-relative") {
  Rng rng(5);
  const Tensor pred = random_tensor({3, 4, 3}, rng);
  const Tensor gt = random_tensor({3, 4, 3}, rng);

  double oracle = 0.0;
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t k = 0; k < 4; ++k) {
      for (std::size_t a = 0; a < 3; ++a) {
        const double p = pred.at((r * 4 + k) * 3 + a) - pred.at(r * 12 + a);
        const double g = gt.at((r * 4 + k) * 3 + a) - gt.at(r * 12 + a);
        oracle += (p - g) * (p - g);
      }
    }
  }
  CHECK(loss_3d(pred, gt).item() == doctest::Approx(oracle / 12.0).epsilon(1e-12));

  std::vector<double> shifted = pred.values();
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t k = 0; k < 4; ++k) {
      for (std::size_t a = 0; a < 3; ++a) shifted[(r * 4 + k) * 3 + a] += 0.3 * static_cast<double>(r + a + 1);
    }
  }
  CHECK(loss_3d(Tensor({3, 4, 3}, shifted), gt).item() == doctest::Approx(loss_3d(pred, gt).item()).epsilon(1e-12));
  CHECK(loss_3d(gt, gt).item() == 0.0);
}

TEST_CASE("nll of an identity flow at the origin is ln(2 pi)") {
  Rng rng(1);
  const ConditionalFlow flow(FlowConfig{2, 3, 2, 4}, rng);
  const auto prepared = flow.prepare(Tensor({2, 3}, {0.1, 0.2, 0.3, -1.0, 0.5, 2.0}));
  const Tensor nll = loss_nll(flow, Tensor::zeros({2, 2}), prepared);
  CHECK(nll.item() == doctest::Approx(std::log(2.0 * std::numbers::pi)).epsilon(1e-14));
}

TEST_CASE("loss accumulator weights and reporting") {
  LossAccumulator acc{LossWeights{}};
  for (std::size_t i = 0; i < kLossTermCount; ++i) acc.add(static_cast<LossTerm>(i), Tensor::scalar(1.0));
  CHECK(acc.total().item() == doctest::Approx(0.1835).epsilon(1e-14));

  LossAccumulator partial{LossWeights{}};
  partial.add(LossTerm::mode_2d, Tensor::scalar(2.0));
  partial.add(LossTerm::orth, Tensor::scalar(3.0));
  const LossReport r = partial.report();
  CHECK(r.has(LossTerm::mode_2d));
  CHECK_FALSE(r.has(LossTerm::nll));
  CHECK(r.total == partial.total().item());
  CHECK(r.total == doctest::Approx(0.01 * 2.0 + 0.1 * 3.0));

  CHECK_THROWS_AS(LossAccumulator{LossWeights{}}.total(), ShapeError);
  CHECK_THROWS_AS(partial.add(LossTerm::nll, Tensor::vector({1.0, 2.0})), ShapeError);
}

TEST_CASE("make_batch layout and annotation rows") {
  auto data = tiny_dataset(3, 9, 8);
  data[1].annotations = 0;
  const Batch b = make_batch({&data[0], &data[1], &data[2]}, 5, 2);
  CHECK(b.observations.shape() == Shape{15, 24});
  CHECK(b.keypoints.shape() == Shape{15, 8, 2});
  CHECK(b.real_motion.shape() == Shape{3, 5, 48});
  CHECK(b.pose_rows == std::vector<long>{0, 1, 2, 3, 4, 10, 11, 12, 13, 14});
  CHECK(b.joints_rows == b.pose_rows);
  CHECK(b.beta_rows == b.pose_rows);

  // Row s*T + t holds frame offset + t of sequence s.
  const auto pose2 = data[2].gt_pose_vectors();
  for (std::size_t k = 0; k < 48; ++k) {
    CHECK(b.gt_pose.at(13 * 48 + k) == pose2[5 * 48 + k]);
    CHECK(b.real_motion.at((2 * 5 + 3) * 48 + k) == pose2[5 * 48 + k]);
  }
  for (std::size_t k = 0; k < 48; ++k) CHECK(b.gt_pose.at(7 * 48 + k) == 0.0);
  CHECK(b.keypoints.at(13 * 16 + 3) == data[2].noisy_keypoints[5 * 16 + 3]);

  CHECK_THROWS_AS(make_batch({&data[0]}, 7, 2), ShapeError);
  CHECK_THROWS_AS(make_batch({}, 4), ShapeError);
}

TEST_CASE("motions_from_rows groups by sequence and draw") {
  const std::size_t s = 2, t = 3, n = 2, d = 2;
  std::vector<double> v(s * t * n * d);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i / d);
  const Tensor motions = motions_from_rows(Tensor({s * t * n, d}, v), s, t, n);
  REQUIRE(motions.shape() == Shape{s * n, t, d});
  for (std::size_t si = 0; si < s; ++si) {
    for (std::size_t k = 0; k < n; ++k) {
      for (std::size_t ti = 0; ti < t; ++ti) {
        CHECK(motions.at(((si * n + k) * t + ti) * d) == static_cast<double>((si * t + ti) * n + k));
      }
    }
  }
}

TEST_CASE("generator loss reports only the supervised terms") {
  const PoseModel model = PoseModel::create(tiny_config(), 4);
  auto data = tiny_dataset(2, 4);
  Rng rng(2);

  const Batch full = make_batch({&data[0], &data[1]}, 6);
  const auto pass = run_forward(model, full, 2, rng);
  const auto loss = generator_loss(model, model.disc.frozen(), full, pass, LossWeights{});
  for (std::size_t i = 0; i < kLossTermCount; ++i) CHECK(loss.report.terms[i].has_value());
  CHECK(loss.report.total == loss.total.item());
  CHECK(loss.report.total == loss.report.weighted_sum(LossWeights{}));

  data[0].annotations = 0;
  data[1].annotations = 0;
  const Batch weak = make_batch({&data[0], &data[1]}, 6);
  const auto weak_pass = run_forward(model, weak, 0, rng);
  const auto weak_loss = generator_loss(model, model.disc.frozen(), weak, weak_pass, LossWeights{});
  CHECK(weak_loss.report.has(LossTerm::mode_2d));
  CHECK(weak_loss.report.has(LossTerm::mode_adv));
  for (LossTerm t : {LossTerm::nll, LossTerm::exp_2d, LossTerm::exp_adv, LossTerm::mode_3d, LossTerm::mode_theta,
                     LossTerm::mode_beta, LossTerm::orth}) {
    CHECK_FALSE(weak_loss.report.has(t));
  }
}

TEST_CASE("generator and discriminator gradients stay separated") {
  const PoseModel model = PoseModel::create(tiny_config(), 6);
  const auto data = tiny_dataset(2, 6);
  Rng rng(8);
  const Batch batch = make_batch({&data[0], &data[1]}, 6);
  const auto pass = run_forward(model, batch, 2, rng);
  const auto gen = generator_loss(model, model.disc.frozen(), batch, pass, LossWeights{});
  const Gradients gen_grads = backward(gen.total);
  for (const auto& [name, t] : model.discriminator_parameters().entries()) CHECK_FALSE(gen_grads.contains(t));
  std::size_t reached = 0;
  for (const auto& [name, t] : model.generator_parameters().entries()) reached += gen_grads.contains(t) ? 1 : 0;
  CHECK(reached > 0);

  const Gradients disc_grads = backward(discriminator_loss(model.disc, batch, pass));
  for (const auto& [name, t] : model.generator_parameters().entries()) CHECK_FALSE(disc_grads.contains(t));
  for (const auto& [name, t] : model.discriminator_parameters().entries()) CHECK(disc_grads.contains(t));
}

TEST_CASE("loss gradients agree with finite differences") {
  Rng rng(12);
  const BodyModel body = make_toy_model();
  const std::size_t m = 2, j = body.joint_count, d = 6 * j;
  const Tensor pose0 = random_tensor({m, d}, rng, 0.3);
  std::vector<double> identity6(m * d);
  for (std::size_t i = 0; i < m * j; ++i) {
    const double id[6] = {1, 0, 0, 0, 1, 0};
    for (int k = 0; k < 6; ++k) identity6[6 * i + k] = id[k] + pose0.at(6 * i + k);
  }
  const Tensor pose({m, d}, identity6, true);
  const Tensor beta = random_tensor({m, body.shape_count}, rng, 0.3);
  const Tensor cam({m, 3}, {1.0, 0.05, -0.4, 0.9, -0.02, -0.35});
  const Tensor kp = random_tensor({m, j, 2}, rng, 0.3);
  std::vector<double> conf_v(m * j, 1.0);
  conf_v[3] = 0.0;
  const Tensor conf({m, j}, conf_v);
  const Tensor gt_joints = random_tensor({m, j, 3}, rng, 0.3);
  const auto joints_of = [&](const Tensor& p) { return body_forward(body, pose_vector_to_rotations(p), beta).joints; };

  SUBCASE("2D reprojection") {
    CHECK(grad_check([&](const Tensor& p) { return loss_2d(joints_of(p), cam, kp, conf); }, pose) < 1e-4);
  }
  SUBCASE("3D joints") {
    CHECK(grad_check([&](const Tensor& p) { return loss_3d(joints_of(p), gt_joints); }, pose) < 1e-4);
  }
  SUBCASE("orthonormality") {
    CHECK(grad_check([&](const Tensor& p) { return mean(pose_vector_orth_residual(p)); }, pose) < 1e-4);
  }
  SUBCASE("negative log-likelihood") {
    Rng flow_rng(3);
    ConditionalFlow flow(FlowConfig{d, 5, 2, 6}, flow_rng);
    flow.randomize(flow_rng, 0.1);
    const Tensor ctx = random_tensor({m, 5}, rng);
    CHECK(grad_check([&](const Tensor& p) { return loss_nll(flow, p, flow.prepare(ctx)); }, pose) < 1e-4);
    CHECK(grad_check([&](const Tensor& c) { return loss_nll(flow, pose, flow.prepare(c)); }, ctx) < 1e-4);
  }
  SUBCASE("adversarial") {
    Rng disc_rng(4);
    const MotionDiscriminator disc(DiscriminatorConfig{d, 4, 2}, disc_rng);
    const Tensor motions = reshape(pose, {1, m, d});
    CHECK(grad_check([&](const Tensor& x) { return adv_loss(disc.discriminate(x)); }, motions.detach()) < 1e-4);
  }
}

TEST_CASE("full generator objective differentiates through the observations") {
  const PoseModel model = PoseModel::create(tiny_config(), 10);
  auto data = tiny_dataset(1, 10, 4);
  Batch batch = make_batch({&data[0]}, 4);
  const Tensor obs0 = Tensor(batch.observations.shape(), batch.observations.values(), true);
  const auto objective = [&](const Tensor& obs) {
    Batch b = batch;
    b.observations = obs;
    Rng rng(77);  // identical latent draws for every probe
    const auto pass = run_forward(model, b, 2, rng);
    return generator_loss(model, model.disc.frozen(), b, pass, LossWeights{}).total;
  };
  CHECK(grad_check(objective, obs0) < 1e-4);
}

TEST_CASE("metrics CSV layout") {
  const auto header = metrics_csv_header();
  CHECK(std::count(header.begin(), header.end(), ',') == 16);
  EpochRecord initial;
  initial.validation = {1.5, 20.0, 30.0};
  CHECK(metrics_csv_row(initial) == "0,,,,,,,,,,,,,,1.5,20,30");
}

TEST_CASE("zero epochs leaves the initialization checkpoint") {
  const auto train_set = tiny_dataset(3, 1);
  const auto val_set = tiny_dataset(2, 2);
  PoseModel model = PoseModel::create(tiny_config(), 21);
  TrainConfig cfg;
  cfg.epochs = 0;
  cfg.frames = 6;
  cfg.checkpoint_path = temp_path("zero_epochs.ckpt");
  const auto history = train(model, train_set, val_set, cfg);
  REQUIRE(history.size() == 1);
  CHECK(history[0].batches == 0);

  const std::string reference = temp_path("zero_epochs_ref.ckpt");
  PoseModel::create(tiny_config(), 21).save(reference);
  CHECK(slurp(cfg.checkpoint_path) == slurp(reference));
  std::filesystem::remove(cfg.checkpoint_path);
  std::filesystem::remove(reference);
}

TEST_CASE("training is deterministic for a fixed seed") {
  const auto train_set = tiny_dataset(5, 3);
  const auto val_set = tiny_dataset(2, 4);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 2;
  cfg.frames = 4;
  cfg.lr = 1e-3;
  cfg.seed = 5;

  std::vector<std::string> logs, checkpoints;
  for (int run = 0; run < 2; ++run) {
    PoseModel model = PoseModel::create(tiny_config(), 30);
    cfg.log_path = temp_path("det_log_" + std::to_string(run) + ".csv");
    cfg.checkpoint_path = temp_path("det_" + std::to_string(run) + ".ckpt");
    const auto history = train(model, train_set, val_set, cfg);
    REQUIRE(history.size() == 3);
    CHECK(history[1].batches == 3);
    CHECK(history[1].disc_loss > 0.0);
    logs.push_back(slurp(cfg.log_path));
    checkpoints.push_back(slurp(cfg.checkpoint_path));
    std::filesystem::remove(cfg.log_path);
    std::filesystem::remove(cfg.checkpoint_path);
  }
  CHECK(logs[0] == logs[1]);
  CHECK(checkpoints[0] == checkpoints[1]);
  CHECK(std::count(logs[0].begin(), logs[0].end(), '\n') == 4);
}

TEST_CASE("training stops on non-finite values and keeps the last checkpoint") {
  const auto train_set = tiny_dataset(4, 7);
  const auto val_set = tiny_dataset(1, 8);
  PoseModel model = PoseModel::create(tiny_config(), 40);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 1;
  cfg.frames = 6;
  cfg.lr = 1e6;
  cfg.checkpoint_path = temp_path("nan.ckpt");
  CHECK_THROWS_AS(train(model, train_set, val_set, cfg), TrainingError);

  const std::string reference = temp_path("nan_ref.ckpt");
  PoseModel::create(tiny_config(), 40).save(reference);
  CHECK(slurp(cfg.checkpoint_path) == slurp(reference));
  std::filesystem::remove(cfg.checkpoint_path);
  std::filesystem::remove(reference);
}

TEST_CASE("train rejects unusable configurations") {
  const auto data = tiny_dataset(2, 1, 4);
  PoseModel model = PoseModel::create(tiny_config(), 1);
  TrainConfig cfg;
  cfg.frames = 8;
  CHECK_THROWS_AS(train(model, data, data, cfg), ShapeError);
  cfg.frames = 4;
  cfg.batch_size = 0;
  CHECK_THROWS_AS(train(model, data, data, cfg), ShapeError);
  CHECK_THROWS_AS(train(model, {}, data, TrainConfig{}), ShapeError);
}
