#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "flowpose/adam.hpp"
#include "flowpose/checkpoint.hpp"
#include "flowpose/grad_check.hpp"
#include "flowpose/parameters.hpp"
#include "flowpose/tensor.hpp"

using namespace flowpose;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, bool grad = false, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = uniform(rng, lo, hi);
  return Tensor(std::move(shape), std::move(v), grad);
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("flowpose_test_" + name);
}

}  // namespace

TEST_CASE("softmax of a constant row is uniform") {
  const auto s = softmax(Tensor::vector({0.0, 0.0, 0.0}));
  for (double v : s.data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("softmax rows are probability vectors") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto s = softmax(random_tensor({7}, rng, false, -5.0, 5.0));
    double total = 0.0;
    for (double v : s.data()) {
      CHECK(v >= 0.0);
      total += v;
    }
    CHECK(std::abs(total - 1.0) <= 1e-12);
  }
}

TEST_CASE("matmul with the identity leaves the operand unchanged") {
  Rng rng(5);
  const Tensor eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  const Tensor a = random_tensor({3, 4}, rng);
  const auto out = matmul(eye, a);
  CHECK(out.shape() == a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) CHECK(out.at(i) == a.at(i));
}

TEST_CASE("batched matmul agrees with per-item products") {
  Rng rng(8);
  const Tensor a = random_tensor({4, 2, 3}, rng), b = random_tensor({4, 3, 5}, rng), w = random_tensor({3, 5}, rng);
  const auto ab = matmul(a, b), aw = matmul(a, w);
  for (std::size_t n = 0; n < 4; ++n) {
    for (std::size_t i = 0; i < 2; ++i) {
      for (std::size_t j = 0; j < 5; ++j) {
        double s1 = 0.0, s2 = 0.0;
        for (std::size_t k = 0; k < 3; ++k) {
          s1 += a.at(n * 6 + i * 3 + k) * b.at(n * 15 + k * 5 + j);
          s2 += a.at(n * 6 + i * 3 + k) * w.at(k * 5 + j);
        }
        CHECK(ab.at(n * 10 + i * 5 + j) == doctest::Approx(s1).epsilon(1e-13));
        CHECK(aw.at(n * 10 + i * 5 + j) == doctest::Approx(s2).epsilon(1e-13));
      }
    }
  }
}

TEST_CASE("shape errors name the op and both shapes") {
  const Tensor a = Tensor::zeros({2, 3}), b = Tensor::zeros({4, 2});
  try {
    (void)matmul(a, b);
    FAIL("expected a shape error");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("matmul") != std::string::npos);
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[4,2]") != std::string::npos);
  }
  CHECK_THROWS_AS((void)add(Tensor::zeros({2, 3}), Tensor::zeros({3, 2})), ShapeError);
}

TEST_CASE("log and divide reject their singular domains") {
  CHECK_THROWS_AS((void)log(Tensor::vector({1.0, 0.0})), DomainError);
  CHECK_THROWS_AS((void)log(Tensor::vector({-1.0})), DomainError);
  CHECK_THROWS_AS((void)div(Tensor::vector({1.0}), Tensor::vector({0.0})), DomainError);
}

TEST_CASE("backward of simple roots") {
  SUBCASE("sum") {
    const Tensor x({3}, {0.5, -2.0, 4.0}, true);
    const auto g = backward(sum(x)).of(x);
    for (double v : g.data()) CHECK(v == 1.0);
  }
  SUBCASE("half squared norm") {
    const Tensor x({3}, {1.0, 2.0, 3.0}, true);
    const auto g = backward(scale(squared_norm(x), 0.5)).of(x);
    CHECK(g.values() == std::vector<double>{1.0, 2.0, 3.0});
  }
  SUBCASE("unreachable leaves get zeros") {
    const Tensor x({2}, {1.0, 2.0}, true), y({3}, {1.0, 1.0, 1.0}, true);
    const auto grads = backward(sum(x));
    CHECK(grads.of(y).values() == std::vector<double>{0.0, 0.0, 0.0});
  }
  SUBCASE("fan-out accumulates") {
    const Tensor x({1}, {3.0}, true);
    const auto g = backward(sum(add(mul(x, x), x))).of(x);
    CHECK(g.item() == doctest::Approx(7.0));
  }
  SUBCASE("non-scalar root is rejected") {
    const Tensor x({2}, {1.0, 2.0}, true);
    CHECK_THROWS_AS((void)backward(mul(x, x)), ShapeError);
  }
}

TEST_CASE("three-layer tanh network gradients match finite differences") {
  Rng rng(11);
  const Tensor w1 = random_tensor({5, 8}, rng), w2 = random_tensor({8, 6}, rng), w3 = random_tensor({6, 1}, rng);
  const auto net = [&](const Tensor& x) { return sum(matmul(tanh(matmul(tanh(matmul(x, w1)), w2)), w3)); };
  CHECK(grad_check(net, random_tensor({4, 5}, rng), 1e-5) < 1e-4);
  // Gradient with respect to a weight matrix as well.
  const Tensor x = random_tensor({4, 5}, rng);
  const auto wrt_w2 = [&](const Tensor& w) { return sum(matmul(tanh(matmul(tanh(matmul(x, w1)), w)), w3)); };
  CHECK(grad_check(wrt_w2, w2, 1e-5) < 1e-4);
}

TEST_CASE("grad_check basics") {
  Rng rng(2);
  CHECK(grad_check([](const Tensor& x) { return sum(x); }, random_tensor({6}, rng)) < 1e-10);
  CHECK(grad_check([](const Tensor& x) { return squared_norm(x); }, Tensor::vector({1.0, -1.0})) < 1e-6);
  CHECK_THROWS_AS(grad_check([](const Tensor& x) { return sum(log(x)); }, Tensor::vector({1e-7, 1.0}), 1e-5),
                  DomainError);
}

TEST_CASE("every differentiable op passes grad_check on random tensors") {
  Rng rng(17);
  const Tensor other = random_tensor({3, 4}, rng, false, 0.5, 1.5);
  const Tensor mat = random_tensor({4, 2}, rng);
  std::vector<std::pair<const char*, ScalarFunction>> ops = {
      {"add", [&](const Tensor& x) { return sum(square(add(x, other))); }},
      {"add_row", [&](const Tensor& x) { return sum(square(add(other, reshape(slice(x, 0, 0, 1), {4})))); }},
      {"sub", [&](const Tensor& x) { return sum(square(sub(other, x))); }},
      {"mul", [&](const Tensor& x) { return sum(mul(x, mul(x, other))); }},
      {"div", [&](const Tensor& x) { return sum(div(x, add_scalar(square(x), 1.0))); }},
      {"exp", [&](const Tensor& x) { return sum(exp(x)); }},
      {"log", [&](const Tensor& x) { return sum(log(add_scalar(square(x), 0.5))); }},
      {"tanh", [&](const Tensor& x) { return sum(mul(tanh(x), other)); }},
      {"relu", [&](const Tensor& x) { return sum(mul(relu(add_scalar(x, 0.0)), other)); }},
      {"sigmoid", [&](const Tensor& x) { return sum(mul(sigmoid(x), other)); }},
      {"softmax", [&](const Tensor& x) { return sum(mul(softmax(x), other)); }},
      {"sum_axis", [&](const Tensor& x) { return sum(square(sum(x, 0))); }},
      {"mean", [&](const Tensor& x) { return square(mean(mul(x, other))); }},
      {"concat", [&](const Tensor& x) { return sum(mul(concat({x, other}, 0), concat({other, x}, 0))); }},
      {"slice", [&](const Tensor& x) { return sum(square(slice(x, 1, 1, 3))); }},
      {"transpose", [&](const Tensor& x) { return sum(matmul(transpose(x), other)); }},
      {"matmul", [&](const Tensor& x) { return sum(square(matmul(x, mat))); }},
      {"reshape", [&](const Tensor& x) { return sum(square(matmul(reshape(x, {4, 3}), other))); }},
      {"squared_norm", [&](const Tensor& x) { return squared_norm(mul(x, other)); }},
      {"inverse", [&](const Tensor& x) {
         const Tensor sq = add(slice(x, 1, 0, 3), Tensor({3, 3}, {3, 0, 0, 0, 3, 0, 0, 0, 3}));
         return sum(mul(inverse(sq), slice(other, 1, 0, 3)));
       }},
  };
  for (const auto& [name, f] : ops) {
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) worst = std::max(worst, grad_check(f, random_tensor({3, 4}, rng)));
    INFO("op " << name);
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("gather_rows gradient scatters back") {
  const long idx[] = {2, 0, -1, 2};
  Rng rng(4);
  const auto f = [&](const Tensor& x) { return sum(square(gather_rows(x, idx))); };
  CHECK(grad_check(f, random_tensor({3, 2}, rng)) < 1e-6);
}

TEST_CASE("backward is bit-for-bit deterministic") {
  const auto run = [] {
    Rng rng(99);
    const Tensor x = random_tensor({6, 5}, rng, true), w = random_tensor({5, 5}, rng, true);
    const auto loss = sum(softmax(tanh(matmul(x, w))));
    const auto grads = backward(loss);
    auto out = grads.of(x).values();
    const auto gw = grads.of(w).values();
    out.insert(out.end(), gw.begin(), gw.end());
    return out;
  };
  CHECK(run() == run());
}

TEST_CASE("NoGradGuard produces constant leaves") {
  const Tensor x({2}, {1.0, 2.0}, true);
  NoGradGuard guard;
  const auto y = mul(x, x);
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("adam: zero gradient leaves parameters unchanged and advances the step") {
  ParameterStore store;
  const Tensor p = make_param({3}, {1.0, -2.0, 0.5});
  store.add("p", p);
  AdamState state;
  adam_step(store, {{"p", {0.0, 0.0, 0.0}}}, state);
  CHECK(p.values() == std::vector<double>{1.0, -2.0, 0.5});
  CHECK(state.step == 1);
  CHECK(state.moments.at("p").first.size() == 3);
}

TEST_CASE("adam: first step moves each coordinate by about lr") {
  ParameterStore store;
  const Tensor p = make_param({4}, {0.0, 0.0, 0.0, 0.0});
  store.add("p", p);
  AdamState state;
  const std::vector<double> g = {0.3, -2.0, 1e-3, 50.0};
  adam_step(store, {{"p", g}}, state);
  // Closed form after one step: m_hat = g, v_hat = g^2, so delta = -lr g / (|g| + eps).
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double expected = -state.options.lr * g[i] / (std::abs(g[i]) + state.options.epsilon);
    CHECK(p.at(i) == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("adam: constant positive gradient decreases the parameter monotonically") {
  ParameterStore store;
  const Tensor p = make_param({1}, {0.0});
  store.add("p", p);
  AdamState state;
  double previous = p.item();
  for (int i = 0; i < 100; ++i) {
    adam_step(store, {{"p", {1.0}}}, state);
    CHECK(p.item() < previous);
    previous = p.item();
  }
  CHECK(state.step == 100);
}

TEST_CASE("adam: non-finite gradient names the parameter") {
  ParameterStore store;
  store.add("encoder/query", make_param({2}, {1.0, 2.0}));
  AdamState state;
  try {
    adam_step(store, {{"encoder/query", {1.0, std::nan("")}}}, state);
    FAIL("expected a domain error");
  } catch (const DomainError& e) {
    CHECK(std::string(e.what()).find("encoder/query") != std::string::npos);
  }
  CHECK(state.step == 0);
}

TEST_CASE("checkpoint round trip is exact") {
  Rng rng(21);
  ParameterStore store;
  store.add("a/weight", uniform_param({3, 4}, 1.0, rng));
  store.add("b/bias", make_param({5}, {1e-300, -0.0, 3.141592653589793, 1e300, -7.25}));
  const auto path = temp_path("ckpt.bin");
  save_checkpoint(path.string(), store);
  const auto loaded = load_checkpoint(path.string());
  REQUIRE(loaded.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(loaded[i].first == store.entries()[i].first);
    CHECK(loaded[i].second.shape() == store.entries()[i].second.shape());
    const auto a = loaded[i].second.values(), b = store.entries()[i].second.values();
    CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
  }
  ParameterStore target;
  target.add("a/weight", make_param({3, 4}));
  target.add("b/bias", make_param({5}));
  target.assign_from(loaded);
  CHECK(target.at("b/bias").values() == store.at("b/bias").values());

  ParameterStore wrong;
  wrong.add("a/weight", make_param({4, 3}));
  CHECK_THROWS_AS(wrong.assign_from(loaded), FormatError);
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint loader rejects damaged files") {
  ParameterStore store;
  store.add("x", make_param({2}, {1.0, 2.0}));
  const auto path = temp_path("ckpt_bad.bin");
  save_checkpoint(path.string(), store);
  const auto size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, size - 4);
  CHECK_THROWS_AS(load_checkpoint(path.string()), FormatError);
  {
    std::ofstream out(path, std::ios::binary);
    out << "NOTACKPT";
  }
  CHECK_THROWS_AS(load_checkpoint(path.string()), FormatError);
  std::filesystem::remove(path);
}
