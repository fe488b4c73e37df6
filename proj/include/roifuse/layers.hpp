#pragma once

#include <random>
#include <string>

#include "roifuse/tensor.hpp"

namespace roifuse::tensor {

inline constexpr double kLayerNormEps = 1e-5;

struct LinearParams {
  Tensor weight;  // [d_in x d_out]
  Tensor bias;    // [d_out]

  static LinearParams create(ParameterSet& params, const std::string& name, std::size_t d_in,
                             std::size_t d_out, std::mt19937_64& rng);
  Tensor operator()(Tape* tape, const Tensor& x) const { return linear(tape, x, weight, bias); }
};

struct LayerNormParams {
  Tensor gamma;
  Tensor beta;

  static LayerNormParams create(ParameterSet& params, const std::string& name, std::size_t d);
  Tensor operator()(Tape* tape, const Tensor& x) const { return layer_norm(tape, x, gamma, beta, kLayerNormEps); }
};

/// Query/key/value projections plus the output projection of one
/// multi-head attention block.
struct AttentionParams {
  LinearParams query, key, value, output;

  static AttentionParams create(ParameterSet& params, const std::string& name, std::size_t channels,
                                std::mt19937_64& rng);
};

/// Two linear layers with GELU between them.
struct FeedForwardParams {
  LinearParams fc1, fc2;

  static FeedForwardParams create(ParameterSet& params, const std::string& name, std::size_t channels,
                                  std::size_t hidden, std::mt19937_64& rng);
  Tensor operator()(Tape* tape, const Tensor& x) const { return fc2(tape, gelu(tape, fc1(tape, x))); }
};

/// Projects inputs, runs per-head softmax(Q K^T / sqrt(d)) V with d = C / H,
/// concatenates heads and applies the output projection. `groups` splits
/// query and key rows into independent blocks (one per RoI).
Tensor multi_head_attention(Tape* tape, const Tensor& q_in, const Tensor& k_in, const Tensor& v_in,
                            const AttentionParams& params, std::size_t heads, std::size_t groups = 1);

}  // namespace roifuse::tensor
