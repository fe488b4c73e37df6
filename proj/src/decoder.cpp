#include "roifuse/decoder.hpp"

#include <cmath>
#include <stdexcept>

namespace roifuse::decoder {

BoxResidual BoxResidual::from_array(std::span<const double> v) {
  if (v.size() != kResidualDim) throw std::invalid_argument("residual needs 7 values");
  return {v[0], v[1], v[2], v[3], v[4], v[5], v[6]};
}

Box3D apply_residuals(const Box3D& proposal, const BoxResidual& r) {
  for (double v : r.to_array()) {
    if (!std::isfinite(v)) throw std::invalid_argument("apply_residuals: non-finite residual");
  }
  const double diag = proposal.diagonal();
  Box3D out;
  out.x = proposal.x + r.dx * diag;
  out.y = proposal.y + r.dy * diag;
  out.z = proposal.z + r.dz * proposal.h;
  out.l = proposal.l * std::exp(r.dl);
  out.h = proposal.h * std::exp(r.dh);
  out.w = proposal.w * std::exp(r.dw);
  out.theta = geometry::wrap_angle(proposal.theta + r.dtheta);
  return out;
}

BoxResidual encode_residuals(const Box3D& proposal, const Box3D& target) {
  const double diag = proposal.diagonal();
  return {(target.x - proposal.x) / diag,
          (target.y - proposal.y) / diag,
          (target.z - proposal.z) / proposal.h,
          std::log(target.l / proposal.l),
          std::log(target.h / proposal.h),
          std::log(target.w / proposal.w),
          geometry::wrap_angle(target.theta - proposal.theta)};
}

DecoderParams DecoderParams::create(tensor::ParameterSet& params, const std::string& prefix, std::size_t channels,
                                    std::size_t ffn_mult, std::size_t num_layers, std::mt19937_64& rng) {
  if (num_layers == 0) throw std::invalid_argument("decoder needs at least one layer");
  DecoderParams p;
  // Same bound as a [1 x C] projection.
  p.query = params.add(prefix + ".query", tensor::xavier_uniform(rng, 1, channels));
  for (std::size_t i = 0; i < num_layers; ++i) {
    const std::string name = prefix + ".layer" + std::to_string(i);
    p.layers.push_back({tensor::AttentionParams::create(params, name + ".attn", channels, rng),
                        tensor::LayerNormParams::create(params, name + ".norm", channels),
                        tensor::FeedForwardParams::create(params, name + ".ffn", channels, ffn_mult * channels, rng),
                        tensor::LayerNormParams::create(params, name + ".ffn_norm", channels)});
  }
  p.regression = tensor::LinearParams::create(params, "head.regression", channels, kResidualDim, rng);
  // Start near the identity correction.
  for (double& w : p.regression.weight.mutable_data()) w *= 0.01;
  p.confidence = tensor::LinearParams::create(params, "head.confidence", channels, 1, rng);
  return p;
}

Tensor decode(Tape* tape, const Tensor& fused, const DecoderParams& params, std::size_t heads, std::size_t groups) {
  if (groups == 0 || fused.rows() % groups != 0) throw std::invalid_argument("decode: token rows not divisible by RoIs");
  if (fused.cols() != params.query.cols()) {
    throw std::invalid_argument("decode: fused tokens have " + std::to_string(fused.cols()) + " channels, query has " +
                                std::to_string(params.query.cols()));
  }
  Tensor e = tensor::repeat_rows(tape, params.query, groups);
  for (const auto& layer : params.layers) {
    const Tensor attended = multi_head_attention(tape, e, fused, fused, layer.attention, heads, groups);
    const Tensor e1 = layer.norm(tape, tensor::add(tape, attended, e));
    e = layer.ffn_norm(tape, tensor::add(tape, layer.ffn(tape, e1), e1));
  }
  return e;
}

Prediction predict(Tape* tape, const Tensor& embedding, const DecoderParams& params) {
  return {params.regression(tape, embedding), params.confidence(tape, embedding)};
}

}  // namespace roifuse::decoder
