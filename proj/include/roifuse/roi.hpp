#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "roifuse/geometry.hpp"
#include "roifuse/layers.hpp"
#include "roifuse/tensor.hpp"

namespace roifuse::roi {

using geometry::Box3D;
using geometry::CameraModel;
using geometry::PointCloud;
using geometry::Rect2D;

struct Proposal {
  Box3D box;
  double score = 0.0;
  int class_id = 0;
  /// Index of the ground-truth box this proposal was derived from, -1 for
  /// false positives or unknown provenance.
  int source = -1;
};

/// Dense image features, [channels x height x width] row-major. `stride` is
/// the number of image pixels per feature cell.
struct FeatureMap {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  double stride = 1.0;
  std::vector<double> data;

  double at(std::size_t c, std::size_t y, std::size_t x) const { return data[(c * height + y) * width + x]; }
  /// Bilinear sample at continuous cell coordinates (cell centers are integers),
  /// clamped to the map.
  double sample(std::size_t c, double y, double x) const;
  /// Continuous cell coordinate of an image pixel coordinate.
  double to_cell(double pixel) const { return (pixel - 0.5 * (stride - 1.0)) / stride; }
};

/// Throws when dimensions, stride, or data length are inconsistent.
void validate(const FeatureMap& map);

/// Raw exchange format: magic "RFFMAP\0\0", u32 version, u64 channels,
/// u64 height, u64 width, f64 stride, then f64 data; little-endian.
void write_feature_map(const std::filesystem::path& path, const FeatureMap& map);
FeatureMap read_feature_map(const std::filesystem::path& path);

struct CameraView {
  CameraModel camera;
  FeatureMap features;
};

// ---- point branch -------------------------------------------------------------

struct RoiPoints {
  PointCloud points;       // exactly N points
  std::vector<bool> real;  // true for the first occurrence of a sampled point
  std::size_t num_inside = 0;
};

/// Points inside expand_box(box, k), subsampled (seeded, without replacement,
/// original order kept) or padded to N. Padding cycles through the real
/// points, or uses all-zero sentinels when the region is empty.
RoiPoints gather_roi_points(const PointCloud& cloud, const Box3D& box, double k, std::size_t n,
                            std::uint64_t seed);

/// 24 corner offsets + 3 center offsets + extras.
std::size_t point_feature_dim(std::size_t num_extras);

/// Per-point geometric features before the learnable projection, [N x (27+E)]:
/// (p - c_1, ..., p - c_8, p - center, extras) using the corners of `box`
/// (not the expanded box). An empty region yields all-zero rows.
std::vector<double> point_features(const RoiPoints& pts, const Box3D& box);

/// Applies the learnable projection to a feature block [rows x (27+E)].
tensor::Tensor embed_points(tensor::Tape* tape, const tensor::Tensor& features,
                            const tensor::LinearParams& projection);

// ---- image branch -------------------------------------------------------------

struct PoolOptions {
  /// Uniform jitter (in feature cells) applied independently to each edge of
  /// the projected rectangle; 0 disables it.
  double rect_jitter = 0.0;
  std::mt19937_64* rng = nullptr;
};

struct PooledImage {
  std::vector<double> values;  // [S*S x C_img], zero when invalid
  bool valid = false;
  int camera = -1;
  Rect2D rect;  // clipped rectangle in cell coordinates
};

/// Projects the corners of expand_box(box, k), picks the camera with the most
/// depth-valid corners (ties: larger visible rectangle, then lower index),
/// and bilinearly samples an S x S grid over the clipped circumscribed
/// rectangle (grid includes the rectangle edges).
PooledImage pool_image_roi(std::span<const CameraView> cameras, const Box3D& box, double k, std::size_t s,
                           const PoolOptions& options = {});

struct ImageTokens {
  tensor::Tensor tokens;  // [S*S x C]
  bool valid = false;
};

/// pool_image_roi followed by the learnable projection to C channels; zero
/// tokens when no camera sees the region.
ImageTokens extract_image_roi(tensor::Tape* tape, std::span<const CameraView> cameras, const Box3D& box,
                              double k, std::size_t s, const tensor::LinearParams& projection,
                              const PoolOptions& options = {});

// ---- frozen backbone ----------------------------------------------------------

/// Two 3x3 stride-2 convolutions (edge-replicated borders, ReLU between them):
/// a stride-4 map with ceil(H/4) x ceil(W/4) cells.
struct BackboneParams {
  std::size_t in_channels = 3;
  std::size_t hidden_channels = 8;
  std::size_t out_channels = 8;
  std::vector<double> w1, b1;  // [hidden x in x 3 x 3], [hidden]
  std::vector<double> w2, b2;  // [out x hidden x 3 x 3], [out]

  static BackboneParams create(std::uint64_t seed, std::size_t out_channels = 8, std::size_t hidden_channels = 8);
};

/// image: [3 x H x W].
FeatureMap synthetic_backbone(const tensor::Tensor& image, const BackboneParams& params);

}  // namespace roifuse::roi
