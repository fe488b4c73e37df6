#pragma once

#include <array>
#include <random>
#include <string>
#include <vector>

#include "roifuse/geometry.hpp"
#include "roifuse/layers.hpp"

namespace roifuse::decoder {

using geometry::Box3D;
using tensor::Tape;
using tensor::Tensor;

inline constexpr std::size_t kResidualDim = 7;

/// Box correction relative to a proposal: center offsets normalized by the
/// proposal diagonal (x, y) and height (z), log size ratios, yaw difference.
struct BoxResidual {
  double dx = 0.0, dy = 0.0, dz = 0.0;
  double dl = 0.0, dh = 0.0, dw = 0.0;
  double dtheta = 0.0;

  std::array<double, kResidualDim> to_array() const { return {dx, dy, dz, dl, dh, dw, dtheta}; }
  static BoxResidual from_array(std::span<const double> v);
};

/// x' = x + dx*diag, y' = y + dy*diag, z' = z + dz*h, l' = l*exp(dl), ...,
/// theta' = wrap(theta + dtheta). Throws on non-finite residuals.
Box3D apply_residuals(const Box3D& proposal, const BoxResidual& r);
/// Inverse of apply_residuals (dtheta wrapped to (-pi, pi]).
BoxResidual encode_residuals(const Box3D& proposal, const Box3D& target);

struct DecoderLayerParams {
  tensor::AttentionParams attention;
  tensor::LayerNormParams norm;
  tensor::FeedForwardParams ffn;
  tensor::LayerNormParams ffn_norm;
};

struct DecoderParams {
  Tensor query;  // learnable embedding E, [1 x C]
  std::vector<DecoderLayerParams> layers;
  tensor::LinearParams regression;  // C -> 7
  tensor::LinearParams confidence;  // C -> 1

  static DecoderParams create(tensor::ParameterSet& params, const std::string& prefix, std::size_t channels,
                              std::size_t ffn_mult, std::size_t num_layers, std::mt19937_64& rng);
};

/// Per RoI: E' = LN(Attn(E, F, F) + E), E'' = LN(FFN(E') + E'), repeated per
/// decoding layer with E'' as the next query. fused: [groups * N x C];
/// returns [groups x C].
Tensor decode(Tape* tape, const Tensor& fused, const DecoderParams& params, std::size_t heads, std::size_t groups);

struct Prediction {
  Tensor residuals;  // [groups x 7]
  Tensor logits;     // [groups x 1]
};

Prediction predict(Tape* tape, const Tensor& embedding, const DecoderParams& params);

}  // namespace roifuse::decoder
