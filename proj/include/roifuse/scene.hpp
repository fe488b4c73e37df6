#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "roifuse/geometry.hpp"
#include "roifuse/roi.hpp"
#include "roifuse/tensor.hpp"

namespace roifuse::scene {

using geometry::Box3D;
using geometry::CameraModel;
using geometry::PointCloud;
using roi::Proposal;

struct GroundTruth {
  Box3D box;
  int class_id = 0;
  std::size_t num_points = 0;  // points_in_box over the full cloud
};

struct CameraImage {
  CameraModel camera;
  tensor::Tensor image;  // [3 x H x W], values in [0, 1]
};

struct Scene {
  std::uint64_t id = 0;
  PointCloud points;  // one extra channel: reflectivity
  std::vector<CameraImage> cameras;
  std::vector<GroundTruth> gt;
  std::vector<Proposal> proposals;
};

struct ClassPrior {
  double length = 4.2, height = 1.6, width = 1.8;
  double size_sigma = 0.08;  // log-normal spread applied to each extent
  double weight = 1.0;       // relative sampling frequency
  std::array<double, 3> shade{0.8, 0.2, 0.15};
};

struct ProposalNoise {
  double center_sigma_x = 0.25;
  double center_sigma_y = 0.25;
  double center_sigma_z = 0.1;
  double size_sigma = 0.08;  // on log extents
  double yaw_sigma = 0.08;
  /// Sigmas scale by (1 + range_gain * range / range_max).
  double range_gain = 1.0;
  double drop_rate = 0.05;
  double false_positive_rate = 2.0;  // Poisson mean per scene
};

struct GenConfig {
  std::size_t scene_count = 8;
  std::size_t objects_min = 3;
  std::size_t objects_max = 6;
  double range_min = 6.0;  // BEV distance of object centers
  double range_max = 70.0;
  double ground_z = -1.7;
  double points_at_10m = 250.0;  // object point count at 10 m, falls off as 1/r^2
  std::size_t max_object_points = 400;
  double point_jitter = 0.03;
  std::size_t clutter_points = 1500;
  double clutter_height = 3.0;
  std::size_t camera_count = 4;
  int image_width = 128;
  int image_height = 40;
  double focal = 64.0;
  std::size_t placement_retries = 200;
  double max_bev_overlap = 0.1;
  ProposalNoise noise;
  std::vector<ClassPrior> classes = default_classes();
  std::uint64_t seed = 0;

  static std::vector<ClassPrior> default_classes();
};

/// Throws std::invalid_argument naming the offending field.
void validate(const GenConfig& config);

/// Deterministic in (config, seed). Throws std::runtime_error when objects
/// cannot be placed without overlap within the retry budget.
Scene generate_scene(const GenConfig& config, std::uint64_t seed);

/// Scene `index` of a dataset: seed derived from (config.seed, index).
Scene generate_indexed(const GenConfig& config, std::uint64_t index);

/// Perturbed copies of the ground truth plus false positives drawn from the
/// box prior. `source` is the gt index for true-derived proposals.
std::vector<Proposal> simulate_proposals(std::span<const GroundTruth> gt, const GenConfig& config,
                                         std::uint64_t seed);

/// Renders flat-shaded silhouettes of the boxes over a sky/ground backdrop.
tensor::Tensor render_image(const CameraModel& camera, std::span<const GroundTruth> gt, const GenConfig& config,
                            std::uint64_t seed);

// ---- augmentation ----------------------------------------------------------------

enum class AugmentOp { kFlipX, kRotate, kScale };

struct Augmentation {
  AugmentOp op = AugmentOp::kRotate;
  double value = 0.0;  // angle for kRotate, factor for kScale
};

/// Moves the world (points, gt, proposals) and composes every camera's
/// extrinsics with the inverse motion so projections are unchanged. Images
/// are untouched.
Scene augment(const Scene& scene, const Augmentation& aug);

struct AugmentRanges {
  double flip_probability = 0.5;
  double max_rotation = 0.785398163397448;  // pi/4
  double min_scale = 0.95;
  double max_scale = 1.05;
};

/// Random flip, then rotation, then scaling, drawn from `rng`.
std::vector<Augmentation> sample_augmentations(std::mt19937_64& rng, const AugmentRanges& ranges);
Scene augment(const Scene& scene, std::span<const Augmentation> ops);

// ---- sensor features ---------------------------------------------------------------

std::vector<roi::CameraView> camera_views(const Scene& scene, const roi::BackboneParams& backbone);

// ---- dataset files -------------------------------------------------------------------

inline constexpr int kDatasetVersion = 1;
inline constexpr const char* kDatasetFormat = "roifuse.scene";

std::string encode_scene(const Scene& scene);
/// `line` is used in error messages only.
Scene decode_scene(const std::string& text, std::size_t line);

class DatasetWriter {
 public:
  explicit DatasetWriter(const std::filesystem::path& path);
  void write(const Scene& scene);
  void close();

 private:
  std::ofstream out_;
  std::filesystem::path path_;
};

/// Streams one scene at a time.
class DatasetReader {
 public:
  explicit DatasetReader(const std::filesystem::path& path);
  std::optional<Scene> next();
  std::size_t line() const { return line_; }

 private:
  std::ifstream in_;
  std::filesystem::path path_;
  std::size_t line_ = 0;
};

void write_dataset(const std::filesystem::path& path, std::span<const Scene> scenes);
std::vector<Scene> read_dataset(const std::filesystem::path& path);

}  // namespace roifuse::scene
