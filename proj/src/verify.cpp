#include "roifuse/verify.hpp"

#include <algorithm>
#include <functional>
#include <random>
#include <stdexcept>

#include "roifuse/training.hpp"

namespace roifuse::verify {

using tensor::LossFn;
using tensor::Parameter;
using tensor::Tape;
using tensor::Tensor;

namespace {

Tensor random_tensor(std::mt19937_64& rng, tensor::Shape shape, double lo, double hi, bool grad) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(tensor::numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v), grad);
}

// Projects an op output onto fixed random weights so every output entry
// contributes to the scalar.
LossFn weighted_sum(std::function<Tensor(Tape*)> op, const Tensor& weights) {
  return [op = std::move(op), weights](Tape* tape) { return tensor::sum(tape, tensor::mul(tape, op(tape), weights)); };
}

const std::vector<std::string> kOpBlocks{"matmul", "softmax", "layer_norm", "gelu", "attention", "bce", "smooth_l1"};

BlockReport run_op_block(const std::string& name, std::uint64_t seed) {
  const auto index = static_cast<std::uint64_t>(std::find(kOpBlocks.begin(), kOpBlocks.end(), name) - kOpBlocks.begin());
  std::mt19937_64 rng(tensor::mix_seed(seed, index));
  LossFn f;
  std::vector<Parameter> inputs;
  if (name == "matmul") {
    Tensor a = random_tensor(rng, {3, 4}, -1, 1, true), b = random_tensor(rng, {4, 5}, -1, 1, true);
    f = weighted_sum([a, b](Tape* t) { return tensor::matmul(t, a, b); }, random_tensor(rng, {3, 5}, -1, 1, false));
    inputs = {{"a", a}, {"b", b}};
  } else if (name == "softmax") {
    Tensor x = random_tensor(rng, {4, 6}, -2, 2, true);
    f = weighted_sum([x](Tape* t) { return tensor::softmax_rows(t, x); }, random_tensor(rng, {4, 6}, -1, 1, false));
    inputs = {{"x", x}};
  } else if (name == "layer_norm") {
    Tensor x = random_tensor(rng, {4, 6}, -2, 2, true);
    Tensor g = random_tensor(rng, {6}, 0.5, 1.5, true), b = random_tensor(rng, {6}, -0.5, 0.5, true);
    f = weighted_sum([x, g, b](Tape* t) { return tensor::layer_norm(t, x, g, b, tensor::kLayerNormEps); },
                     random_tensor(rng, {4, 6}, -1, 1, false));
    inputs = {{"x", x}, {"gamma", g}, {"beta", b}};
  } else if (name == "gelu") {
    Tensor x = random_tensor(rng, {5, 4}, -3, 3, true);
    f = weighted_sum([x](Tape* t) { return tensor::gelu(t, x); }, random_tensor(rng, {5, 4}, -1, 1, false));
    inputs = {{"x", x}};
  } else if (name == "attention") {
    Tensor q = random_tensor(rng, {6, 4}, -1, 1, true), k = random_tensor(rng, {8, 4}, -1, 1, true);
    Tensor v = random_tensor(rng, {8, 4}, -1, 1, true);
    f = weighted_sum([q, k, v](Tape* t) { return tensor::attention(t, q, k, v, 2, 2); },
                     random_tensor(rng, {6, 4}, -1, 1, false));
    inputs = {{"query", q}, {"key", k}, {"value", v}};
  } else if (name == "bce") {
    Tensor x = random_tensor(rng, {5, 1}, -4, 4, true);
    std::vector<double> labels{1, 0, 1, 1, 0};
    f = [x, labels](Tape* t) { return tensor::bce_with_logits(t, x, labels); };
    inputs = {{"logits", x}};
  } else if (name == "smooth_l1") {
    Tensor pred = random_tensor(rng, {4, 7}, -1, 1, true);
    // Offsets stay clear of the |d| = 1 kink so central differences are exact enough.
    std::vector<double> target(pred.size());
    std::uniform_real_distribution<double> near(0.1, 0.6), far(1.5, 3.0);
    for (std::size_t i = 0; i < target.size(); ++i) {
      const double off = (i % 3 == 0) ? far(rng) : near(rng);
      target[i] = pred.data()[i] + ((i % 2 == 0) ? off : -off);
    }
    const std::vector<bool> mask{true, false, true, true};
    f = [pred, target, mask](Tape* t) { return tensor::smooth_l1_rows(t, pred, target, mask); };
    inputs = {{"pred", pred}};
  } else {
    throw std::invalid_argument("unknown op block " + name);
  }
  const auto r = tensor::finite_difference_check(f, inputs);
  return {name, r.per_tensor, r.max_rel_error};
}

std::vector<std::string> encoder_sublayers(const model::ModelConfig& config) {
  std::vector<std::string> subs{"point_self", "point_norm"};
  if (!config.lidar_only) subs.insert(subs.end(), {"image_self", "image_norm", "cross", "cross_norm"});
  subs.insert(subs.end(), {"ffn", "ffn_norm"});
  return subs;
}

// Parameter-name prefix selecting the tensors of a model block.
std::string block_prefix(const std::string& block) {
  if (block == "embedding") return "embed.";
  if (block == "decoder") return "decoder.";
  if (block == "heads") return "head.";
  if (block == "loss") return "";
  return block + ".";
}

}  // namespace

model::ModelConfig gradcheck_model_config() {
  model::ModelConfig c;
  c.channels = 8;
  c.heads = 2;
  c.encoder_layers = 3;
  c.decoder_layers = 1;
  c.ffn_mult = 4;
  c.num_points = 6;
  c.pool_size = 2;
  c.image_channels = 4;
  c.point_extras = 1;
  return c;
}

std::vector<std::string> gradcheck_blocks(const model::ModelConfig& config) {
  std::vector<std::string> out = kOpBlocks;
  out.push_back("embedding");
  for (std::size_t i = 0; i < config.encoder_layers; ++i) {
    for (const auto& s : encoder_sublayers(config)) out.push_back("encoder.layer" + std::to_string(i) + "." + s);
  }
  out.insert(out.end(), {"decoder", "heads", "loss"});
  return out;
}

std::vector<BlockReport> run_gradcheck(std::uint64_t seed, const std::string& only, const model::ModelConfig& config) {
  const auto blocks = gradcheck_blocks(config);
  if (!only.empty() && std::find(blocks.begin(), blocks.end(), only) == blocks.end()) {
    throw std::invalid_argument("unknown gradcheck block '" + only + "'");
  }
  std::vector<BlockReport> reports;
  for (const auto& b : kOpBlocks) {
    if (only.empty() || only == b) reports.push_back(run_op_block(b, seed));
  }
  if (!only.empty() && !reports.empty()) return reports;

  // Two RoIs: the first sees an image, the second does not; the first is a
  // positive with a regression target, the second a negative.
  model::RefinementModel net = model::RefinementModel::create(config, seed);
  std::mt19937_64 rng(tensor::mix_seed(seed, 77));
  const std::size_t feat = roi::point_feature_dim(config.point_extras);
  std::vector<model::RoiInput> rois(2);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (auto& r : rois) {
    r.point_features.resize(config.num_points * feat);
    for (auto& x : r.point_features) x = u(rng);
    r.pooled_image.resize(config.pool_size * config.pool_size * config.image_channels);
    for (auto& x : r.pooled_image) x = u(rng);
  }
  rois[0].image_valid = true;
  const std::vector<const model::RoiInput*> ptrs{&rois[0], &rois[1]};
  const model::RoiBatch batch = model::make_batch(ptrs, config);
  std::vector<training::TrainTarget> targets(2);
  targets[0].label = training::Label::kPositive;
  decoder::BoxResidual res;
  std::uniform_real_distribution<double> small(-0.3, 0.3);
  res = {small(rng), small(rng), small(rng), small(rng), small(rng), small(rng), small(rng)};
  targets[0].regression_target = res;
  const LossFn loss = [&](Tape* tape) {
    return training::total_loss(tape, net.forward(tape, batch), targets, {}).total;
  };

  for (std::size_t i = kOpBlocks.size(); i < blocks.size(); ++i) {
    const std::string& b = blocks[i];
    if (!only.empty() && only != b) continue;
    const std::string prefix = block_prefix(b);
    std::vector<Parameter> selected;
    for (const auto& p : net.parameters().items()) {
      if (p.name.compare(0, prefix.size(), prefix) == 0) selected.push_back(p);
    }
    const auto r = tensor::finite_difference_check(loss, selected);
    reports.push_back({b, r.per_tensor, r.max_rel_error});
  }
  return reports;
}

}  // namespace roifuse::verify
