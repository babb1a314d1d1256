#include "flowpose/discriminator.hpp"

#include <cmath>

namespace flowpose {

MotionDiscriminator::MotionDiscriminator(DiscriminatorConfig config, Rng& rng) : config_(config) {
  const std::size_t h = config.hidden;
  const double bound = 1.0 / std::sqrt(static_cast<double>(h));
  for (std::size_t l = 0; l < config.layers; ++l) {
    const std::size_t in = l == 0 ? config.input_dim : h;
    gru.push_back({uniform_param({in, 3 * h}, bound, rng), uniform_param({h, 3 * h}, bound, rng),
                   make_param({3 * h}), make_param({3 * h})});
  }
  attention = uniform_param({h, 1}, bound, rng);
  readout = Linear::zeros(h, 1);
}

Tensor MotionDiscriminator::discriminate(const Tensor& sequences) const {
  if (sequences.rank() != 3 || sequences.dim(2) != config_.input_dim) {
    throw ShapeError("discriminate: expected [S,T," + std::to_string(config_.input_dim) + "], got " +
                     shape_str(sequences.shape()));
  }
  const std::size_t s = sequences.dim(0), t = sequences.dim(1), h = config_.hidden;
  if (t < 2) throw ShapeError("discriminate: motion sequences need at least 2 frames");

  std::vector<Tensor> inputs(t);
  for (std::size_t i = 0; i < t; ++i) inputs[i] = reshape(slice(sequences, 1, i, i + 1), {s, config_.input_dim});
  for (const auto& layer : gru) {
    // Input projections for every step at once.
    const std::size_t in = inputs.front().dim(1);
    const Tensor projected = reshape(add(matmul(reshape(concat(inputs, 1), {s * t, in}), layer.w_input), layer.b_input),
                                     {s, t * 3 * h});
    Tensor state = Tensor::zeros({s, h});
    std::vector<Tensor> outputs(t);
    for (std::size_t i = 0; i < t; ++i) {
      const Tensor xp = slice(projected, 1, i * 3 * h, (i + 1) * 3 * h);
      const Tensor hp = add(matmul(state, layer.w_hidden), layer.b_hidden);
      const Tensor r = sigmoid(add(slice(xp, 1, 0, h), slice(hp, 1, 0, h)));
      const Tensor z = sigmoid(add(slice(xp, 1, h, 2 * h), slice(hp, 1, h, 2 * h)));
      const Tensor n = flowpose::tanh(add(slice(xp, 1, 2 * h, 3 * h), mul(r, slice(hp, 1, 2 * h, 3 * h))));
      // h' = (1 - z) n + z h = n + z (h - n)
      state = add(n, mul(z, sub(state, n)));
      outputs[i] = state;
    }
    inputs = std::move(outputs);
  }
  const Tensor states = reshape(concat(inputs, 1), {s, t, h});
  const Tensor weights = softmax(reshape(matmul(states, attention), {s, t}));
  const Tensor pooled = reshape(matmul(reshape(weights, {s, 1, t}), states), {s, h});
  return reshape(sigmoid(readout(pooled)), {s});
}

MotionDiscriminator MotionDiscriminator::frozen() const {
  MotionDiscriminator out;
  out.config_ = config_;
  for (const auto& l : gru) {
    out.gru.push_back({l.w_input.detach(), l.w_hidden.detach(), l.b_input.detach(), l.b_hidden.detach()});
  }
  out.attention = attention.detach();
  out.readout = readout.detached();
  return out;
}

void MotionDiscriminator::collect(ParameterStore& store, const std::string& prefix) const {
  for (std::size_t l = 0; l < gru.size(); ++l) {
    const std::string p = prefix + "gru" + std::to_string(l) + ".";
    store.add(p + "w_input", gru[l].w_input);
    store.add(p + "w_hidden", gru[l].w_hidden);
    store.add(p + "b_input", gru[l].b_input);
    store.add(p + "b_hidden", gru[l].b_hidden);
  }
  store.add(prefix + "attention", attention);
  readout.collect(store, prefix + "readout.");
}

namespace {

void check_probs(const char* op, const Tensor& p) {
  if (p.numel() == 0) throw ShapeError(std::string(op) + ": empty batch");
}

}  // namespace

Tensor disc_loss(const Tensor& real_probs, const Tensor& fake_probs) {
  check_probs("disc_loss", real_probs);
  check_probs("disc_loss", fake_probs);
  return add(mean(square(add_scalar(real_probs, -1.0))), mean(square(fake_probs)));
}

Tensor adv_loss(const Tensor& fake_probs) {
  check_probs("adv_loss", fake_probs);
  return mean(square(add_scalar(fake_probs, -1.0)));
}

}  // namespace flowpose
