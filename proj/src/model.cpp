#include "roifuse/model.hpp"

#include <algorithm>
#include <stdexcept>

namespace roifuse::model {

void validate(const ModelConfig& config) {
  encoder::validate(config.encoder_config());
  if (config.decoder_layers == 0) throw std::invalid_argument("model.decoder_layers must be >= 1");
  if (config.num_points == 0) throw std::invalid_argument("model.num_points must be >= 1");
  if (config.pool_size == 0) throw std::invalid_argument("model.pool_size must be >= 1");
  if (config.image_channels == 0) throw std::invalid_argument("model.image_channels must be >= 1");
  if (!(config.expand_ratio >= 1.0)) throw std::invalid_argument("model.expand_ratio must be >= 1");
}

RoiInput prepare_roi(const SensorFrame& frame, const geometry::Box3D& box, const ModelConfig& config,
                     std::uint64_t seed, const roi::PoolOptions& pool) {
  RoiInput in;
  const roi::RoiPoints pts = roi::gather_roi_points(*frame.points, box, config.expand_ratio, config.num_points, seed);
  in.points_inside = pts.num_inside;
  in.point_features = roi::point_features(pts, box);
  if (config.lidar_only) return in;
  roi::PooledImage pooled = roi::pool_image_roi(frame.cameras, box, config.expand_ratio, config.pool_size, pool);
  in.image_valid = pooled.valid;
  in.pooled_image = std::move(pooled.values);
  const std::size_t expected = config.pool_size * config.pool_size * config.image_channels;
  if (frame.cameras.empty()) {
    in.pooled_image.assign(expected, 0.0);
  } else if (in.pooled_image.size() != expected) {
    throw std::invalid_argument("feature maps have " + std::to_string(frame.cameras.front().features.channels) +
                                " channels, model expects " + std::to_string(config.image_channels));
  }
  return in;
}

RoiBatch make_batch(std::span<const RoiInput* const> rois, const ModelConfig& config) {
  if (rois.empty()) throw std::invalid_argument("make_batch: empty batch");
  const std::size_t feat = roi::point_feature_dim(config.point_extras);
  const std::size_t n = config.num_points;
  const std::size_t cells = config.pool_size * config.pool_size;
  std::vector<double> points;
  points.reserve(rois.size() * n * feat);
  std::vector<double> image;
  RoiBatch batch;
  for (const RoiInput* r : rois) {
    if (r->point_features.size() != n * feat) {
      throw std::invalid_argument("make_batch: RoI point features do not match N x (27+E)");
    }
    points.insert(points.end(), r->point_features.begin(), r->point_features.end());
    batch.image_valid.push_back(r->image_valid);
    if (!config.lidar_only) image.insert(image.end(), r->pooled_image.begin(), r->pooled_image.end());
  }
  batch.point_features = Tensor({rois.size() * n, feat}, std::move(points));
  if (!config.lidar_only) batch.pooled_image = Tensor({rois.size() * cells, config.image_channels}, std::move(image));
  return batch;
}

RefinementModel RefinementModel::create(const ModelConfig& config, std::uint64_t seed) {
  validate(config);
  RefinementModel m;
  m.config_ = config;
  std::mt19937_64 rng(seed);
  const std::size_t c = config.channels;
  m.point_embed_ =
      tensor::LinearParams::create(m.params_, "embed.point", roi::point_feature_dim(config.point_extras), c, rng);
  if (!config.lidar_only) {
    m.image_embed_ = tensor::LinearParams::create(m.params_, "embed.image", config.image_channels, c, rng);
  }
  const auto enc = config.encoder_config();
  for (std::size_t i = 0; i < config.encoder_layers; ++i) {
    m.layers_.push_back(encoder::EncoderLayerParams::create(m.params_, "encoder.layer" + std::to_string(i), enc, rng));
  }
  m.decoder_ = decoder::DecoderParams::create(m.params_, "decoder", c, config.ffn_mult, config.decoder_layers, rng);
  return m;
}

Tensor RefinementModel::point_tokens(Tape* tape, const RoiBatch& batch) const {
  return roi::embed_points(tape, batch.point_features, point_embed_);
}

Tensor RefinementModel::image_tokens(Tape* tape, const RoiBatch& batch) const {
  if (!image_embed_) return {};
  const Tensor projected = (*image_embed_)(tape, batch.pooled_image);
  if (std::all_of(batch.image_valid.begin(), batch.image_valid.end(), [](bool v) { return v; })) return projected;
  return tensor::select_groups(tape, batch.image_valid, projected, Tensor::zeros(projected.shape()));
}

decoder::Prediction RefinementModel::forward(Tape* tape, const RoiBatch& batch) const {
  const Tensor points = point_tokens(tape, batch);
  const Tensor image = image_tokens(tape, batch);
  const Tensor fused = encoder::encode(tape, points, image, batch.image_valid, layers_, config_.encoder_config());
  const Tensor embedding = decoder::decode(tape, fused, decoder_, config_.heads, batch.size());
  return decoder::predict(tape, embedding, decoder_);
}

}  // namespace roifuse::model
