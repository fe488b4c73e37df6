#include "roifuse/encoder.hpp"

#include <algorithm>
#include <stdexcept>

namespace roifuse::encoder {

void validate(const EncoderConfig& config) {
  if (config.num_layers == 0) throw std::invalid_argument("encoder needs at least one layer");
  if (config.heads == 0 || config.channels % config.heads != 0) {
    throw std::invalid_argument("encoder channels must be divisible by heads");
  }
  if (config.ffn_mult == 0) throw std::invalid_argument("encoder ffn_mult must be positive");
}

EncoderLayerParams EncoderLayerParams::create(tensor::ParameterSet& params, const std::string& prefix,
                                              const EncoderConfig& config, std::mt19937_64& rng) {
  using tensor::AttentionParams;
  using tensor::LayerNormParams;
  const std::size_t c = config.channels;
  EncoderLayerParams p;
  p.point_self = AttentionParams::create(params, prefix + ".point_self", c, rng);
  p.point_norm = LayerNormParams::create(params, prefix + ".point_norm", c);
  if (config.cross_attention) {
    p.image_self = AttentionParams::create(params, prefix + ".image_self", c, rng);
    p.image_norm = LayerNormParams::create(params, prefix + ".image_norm", c);
    p.cross = AttentionParams::create(params, prefix + ".cross", c, rng);
    // Start close to the point-only layer.
    for (double& w : p.cross->output.weight.mutable_data()) w *= 0.01;
    p.cross_norm = LayerNormParams::create(params, prefix + ".cross_norm", c);
  }
  p.ffn = tensor::FeedForwardParams::create(params, prefix + ".ffn", c, config.ffn_mult * c, rng);
  p.ffn_norm = LayerNormParams::create(params, prefix + ".ffn_norm", c);
  return p;
}

EncodedTokens encode_layer(Tape* tape, const Tensor& point_tokens, const Tensor& image_tokens,
                           const std::vector<bool>& image_valid, const EncoderLayerParams& params,
                           const EncoderConfig& config) {
  const std::size_t groups = image_valid.size();
  if (groups == 0) throw std::invalid_argument("encode_layer: no RoIs");
  if (point_tokens.cols() != config.channels) {
    throw std::invalid_argument("encode_layer: point tokens have " + std::to_string(point_tokens.cols()) +
                                " channels, expected " + std::to_string(config.channels));
  }
  using tensor::add;
  const Tensor attended =
      multi_head_attention(tape, point_tokens, point_tokens, point_tokens, params.point_self, config.heads, groups);
  const Tensor p_attn = params.point_norm(tape, add(tape, attended, point_tokens));

  EncodedTokens out;
  Tensor fused = p_attn;
  const bool fusion = config.cross_attention && params.cross.has_value();
  if (fusion) {
    if (!image_tokens.defined() || image_tokens.cols() != config.channels) {
      throw std::invalid_argument("encode_layer: image tokens missing or with wrong channel count");
    }
    const Tensor i_self =
        multi_head_attention(tape, image_tokens, image_tokens, image_tokens, *params.image_self, config.heads, groups);
    out.image = (*params.image_norm)(tape, add(tape, i_self, image_tokens));
    if (std::any_of(image_valid.begin(), image_valid.end(), [](bool v) { return v; })) {
      const Tensor crossed = multi_head_attention(tape, p_attn, out.image, out.image, *params.cross, config.heads, groups);
      const Tensor cross = (*params.cross_norm)(tape, add(tape, crossed, p_attn));
      fused = tensor::select_groups(tape, image_valid, cross, p_attn);
    }
  }
  out.points = params.ffn_norm(tape, add(tape, params.ffn(tape, fused), fused));
  return out;
}

Tensor encode(Tape* tape, const Tensor& point_tokens, const Tensor& image_tokens, const std::vector<bool>& image_valid,
              const std::vector<EncoderLayerParams>& layers, const EncoderConfig& config) {
  if (layers.empty()) throw std::invalid_argument("encode: no layers");
  Tensor points = point_tokens;
  Tensor image = image_tokens;
  for (const auto& layer : layers) {
    EncodedTokens next = encode_layer(tape, points, image, image_valid, layer, config);
    points = next.points;
    image = next.image;
  }
  return points;
}

}  // namespace roifuse::encoder
