#pragma once

#include <optional>
#include <random>
#include <string>
#include <vector>

#include "roifuse/layers.hpp"

namespace roifuse::encoder {

using tensor::Tape;
using tensor::Tensor;

struct EncoderConfig {
  std::size_t num_layers = 3;
  std::size_t channels = 64;
  std::size_t heads = 4;
  std::size_t ffn_mult = 4;
  /// When false the image stream is dropped entirely (LiDAR-only mode).
  bool cross_attention = true;
};

void validate(const EncoderConfig& config);

/// One fusion layer. Image-side blocks are absent in LiDAR-only mode.
struct EncoderLayerParams {
  tensor::AttentionParams point_self;
  tensor::LayerNormParams point_norm;
  std::optional<tensor::AttentionParams> image_self;
  std::optional<tensor::LayerNormParams> image_norm;
  std::optional<tensor::AttentionParams> cross;
  std::optional<tensor::LayerNormParams> cross_norm;
  tensor::FeedForwardParams ffn;
  tensor::LayerNormParams ffn_norm;

  static EncoderLayerParams create(tensor::ParameterSet& params, const std::string& prefix,
                                   const EncoderConfig& config, std::mt19937_64& rng);
};

struct EncodedTokens {
  Tensor points;  // [groups * N x C]
  Tensor image;   // [groups * S^2 x C]; undefined in LiDAR-only mode
};

/// Point and image tokens hold `groups` RoIs stacked row-wise; attention never
/// crosses RoI boundaries. For RoI g:
///   P  = LN(SelfAttn(F_P) + F_P)
///   I  = LN(SelfAttn(F_I) + F_I)
///   X  = LN(CrossAttn(q = P, kv = I) + P)   if image_valid[g], else X = P
///   F_P' = LN(FFN(X) + X),  F_I' = I
EncodedTokens encode_layer(Tape* tape, const Tensor& point_tokens, const Tensor& image_tokens,
                           const std::vector<bool>& image_valid, const EncoderLayerParams& params,
                           const EncoderConfig& config);

/// Applies the layers in order, chaining both streams; returns point tokens.
Tensor encode(Tape* tape, const Tensor& point_tokens, const Tensor& image_tokens, const std::vector<bool>& image_valid,
              const std::vector<EncoderLayerParams>& layers, const EncoderConfig& config);

}  // namespace roifuse::encoder
