#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "roifuse/decoder.hpp"
#include "roifuse/encoder.hpp"
#include "roifuse/roi.hpp"

namespace roifuse::model {

using tensor::Tape;
using tensor::Tensor;

struct ModelConfig {
  std::size_t channels = 64;
  std::size_t heads = 4;
  std::size_t encoder_layers = 3;
  std::size_t decoder_layers = 1;
  std::size_t ffn_mult = 4;
  std::size_t num_points = 256;  // N
  std::size_t pool_size = 7;     // S
  std::size_t image_channels = 8;
  std::size_t point_extras = 1;
  double expand_ratio = 2.0;  // k
  bool lidar_only = false;

  encoder::EncoderConfig encoder_config() const {
    return {encoder_layers, channels, heads, ffn_mult, !lidar_only};
  }
};

void validate(const ModelConfig& config);

/// Sensor data for one scene: the point cloud and per-camera feature maps.
struct SensorFrame {
  const geometry::PointCloud* points = nullptr;
  std::span<const roi::CameraView> cameras;
};

/// Geometry-dependent, parameter-free inputs for one RoI.
struct RoiInput {
  std::vector<double> point_features;  // [N x (27+E)]
  std::vector<double> pooled_image;    // [S*S x C_img]
  bool image_valid = false;
  std::size_t points_inside = 0;
};

RoiInput prepare_roi(const SensorFrame& frame, const geometry::Box3D& box, const ModelConfig& config,
                     std::uint64_t seed, const roi::PoolOptions& pool = {});

struct RoiBatch {
  Tensor point_features;  // [B*N x (27+E)]
  Tensor pooled_image;    // [B*S*S x C_img]
  std::vector<bool> image_valid;
  std::size_t size() const { return image_valid.size(); }
};

RoiBatch make_batch(std::span<const RoiInput* const> rois, const ModelConfig& config);

/// Learnable parameters and forward pass of the refinement network.
class RefinementModel {
 public:
  static RefinementModel create(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  tensor::ParameterSet& parameters() { return params_; }
  const tensor::ParameterSet& parameters() const { return params_; }

  /// Image tokens per RoI, zeroed for RoIs without a valid view.
  Tensor image_tokens(Tape* tape, const RoiBatch& batch) const;
  Tensor point_tokens(Tape* tape, const RoiBatch& batch) const;
  decoder::Prediction forward(Tape* tape, const RoiBatch& batch) const;

  const tensor::LinearParams& point_embedding() const { return point_embed_; }
  const std::optional<tensor::LinearParams>& image_embedding() const { return image_embed_; }
  const std::vector<encoder::EncoderLayerParams>& encoder_layers() const { return layers_; }
  const decoder::DecoderParams& decoder() const { return decoder_; }

 private:
  RefinementModel() = default;

  ModelConfig config_;
  tensor::ParameterSet params_;
  tensor::LinearParams point_embed_;
  std::optional<tensor::LinearParams> image_embed_;
  std::vector<encoder::EncoderLayerParams> layers_;
  decoder::DecoderParams decoder_;
};

}  // namespace roifuse::model
