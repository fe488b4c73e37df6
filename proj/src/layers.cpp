#include "roifuse/layers.hpp"

namespace roifuse::tensor {

LinearParams LinearParams::create(ParameterSet& params, const std::string& name, std::size_t d_in,
                                  std::size_t d_out, std::mt19937_64& rng) {
  LinearParams p;
  p.weight = params.add(name + ".weight", xavier_uniform(rng, d_in, d_out));
  p.bias = params.add(name + ".bias", Tensor::zeros({d_out}));
  return p;
}

LayerNormParams LayerNormParams::create(ParameterSet& params, const std::string& name, std::size_t d) {
  LayerNormParams p;
  p.gamma = params.add(name + ".gamma", Tensor::full({d}, 1.0));
  p.beta = params.add(name + ".beta", Tensor::zeros({d}));
  return p;
}

AttentionParams AttentionParams::create(ParameterSet& params, const std::string& name, std::size_t channels,
                                        std::mt19937_64& rng) {
  AttentionParams p;
  p.query = LinearParams::create(params, name + ".query", channels, channels, rng);
  p.key = LinearParams::create(params, name + ".key", channels, channels, rng);
  p.value = LinearParams::create(params, name + ".value", channels, channels, rng);
  p.output = LinearParams::create(params, name + ".output", channels, channels, rng);
  return p;
}

FeedForwardParams FeedForwardParams::create(ParameterSet& params, const std::string& name, std::size_t channels,
                                            std::size_t hidden, std::mt19937_64& rng) {
  FeedForwardParams p;
  p.fc1 = LinearParams::create(params, name + ".fc1", channels, hidden, rng);
  p.fc2 = LinearParams::create(params, name + ".fc2", hidden, channels, rng);
  return p;
}

Tensor multi_head_attention(Tape* tape, const Tensor& q_in, const Tensor& k_in, const Tensor& v_in,
                            const AttentionParams& params, std::size_t heads, std::size_t groups) {
  const Tensor q = params.query(tape, q_in);
  const Tensor k = params.key(tape, k_in);
  const Tensor v = params.value(tape, v_in);
  return params.output(tape, attention(tape, q, k, v, heads, groups));
}

}  // namespace roifuse::tensor
