#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "roifuse/gradcheck.hpp"
#include "roifuse/model.hpp"

namespace roifuse::verify {

struct BlockReport {
  std::string block;
  std::vector<tensor::NamedError> tensors;
  double max_rel_error = 0.0;
};

/// Small fused model used by the gradient checks: 3 encoder layers, C = 8,
/// 2 heads, N = 6 points, S = 2.
model::ModelConfig gradcheck_model_config();

/// Block names in run order: primitive ops (matmul, softmax, layer_norm,
/// gelu, attention, bce, smooth_l1), then parameter groups of the model
/// (embedding, encoder.layerI.<sublayer>, decoder, heads) and the composite
/// loss over every parameter.
std::vector<std::string> gradcheck_blocks(const model::ModelConfig& config);

/// Runs the finite-difference check for every block, or only `only` when
/// nonempty (throws std::invalid_argument for an unknown block name).
std::vector<BlockReport> run_gradcheck(std::uint64_t seed, const std::string& only = {},
                                       const model::ModelConfig& config = gradcheck_model_config());

}  // namespace roifuse::verify
