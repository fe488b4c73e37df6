#pragma once

#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "roifuse/geometry.hpp"
#include "roifuse/scene.hpp"

namespace roifuse::eval {

using geometry::Box3D;
using geometry::IouMode;

struct Detection {
  Box3D box;
  double score = 0.0;
  int class_id = 0;
};

struct MatchResult {
  std::vector<int> det_to_gt;    // matched gt index per detection, -1 for FP
  std::vector<bool> gt_matched;  // per gt
};

/// Greedy matching in descending score order (ties: lower index first); each
/// detection takes the highest-IoU unmatched gt (ties: lower index) with
/// IoU >= threshold.
MatchResult match_detections(std::span<const Detection> dets, std::span<const Box3D> gts, double threshold,
                             IouMode mode = IouMode::k3d);

enum class RecallGrid { kR11, kR40 };

/// One ranked detection across the whole evaluated set.
struct RankedDetection {
  double score = 0.0;
  bool true_positive = false;
};

/// Interpolated AP: mean over recall positions r of max precision at recall
/// >= r (R11: r in {0, 0.1, ..., 1}; R40: r in {1/40, ..., 1}). Recall
/// comparisons are done in exact integer arithmetic. Rank order is the
/// given order after a stable sort by descending score.
double average_precision(std::vector<RankedDetection> dets, std::size_t num_gt, RecallGrid grid = RecallGrid::kR11);

struct PrPoint {
  double recall = 0.0;
  double precision = 0.0;
};
std::vector<PrPoint> pr_curve(std::vector<RankedDetection> dets, std::size_t num_gt);

struct Level {
  std::string name;
  std::size_t min_points = 1;
  std::size_t max_points = std::numeric_limits<std::size_t>::max();

  bool includes(std::size_t n) const { return n >= min_points && n <= max_points; }
};

struct Bucket {
  std::string name;
  double min_range = 0.0;
  double max_range = std::numeric_limits<double>::infinity();

  /// Half-open [min, max).
  bool includes(double r) const { return r >= min_range && r < max_range; }
};

struct EvalConfig {
  std::vector<double> thresholds{0.7, 0.8};
  RecallGrid grid = RecallGrid::kR11;
  std::vector<Level> levels{{"LEVEL_1", 6}, {"LEVEL_2", 1}};
  /// The first bucket is the overall row.
  std::vector<Bucket> buckets{{"overall", 0.0}, {"0-30m", 0.0, 30.0}, {"30-50m", 30.0, 50.0}, {"50m-inf", 50.0}};
  IouMode iou_mode = IouMode::k3d;
  bool class_aware = false;
};

/// Throws std::invalid_argument naming the offending field.
void validate(const EvalConfig& config);

/// BEV center range sqrt(x^2 + y^2).
double bev_range(const Box3D& box);

struct SceneEval {
  std::uint64_t id = 0;
  std::vector<scene::GroundTruth> gt;
  std::vector<Detection> detections;
};

struct ReportRow {
  std::string level;
  std::string bucket;
  double threshold = 0.0;
  std::optional<double> ap;  // empty when the slice has no gt
  std::size_t num_gt = 0;
  std::size_t num_det = 0;
  std::string source;
};

/// Ranked detections for one (level, bucket, threshold) slice. A detection
/// matched to a gt outside the slice is ignored; an unmatched one counts as
/// FP when its own range falls in the bucket.
std::vector<RankedDetection> slice_detections(std::span<const SceneEval> scenes, const Level& level,
                                              const Bucket& bucket, double threshold, const EvalConfig& config,
                                              std::size_t* num_gt);

std::vector<ReportRow> bucketize_and_report(std::span<const SceneEval> scenes, const EvalConfig& config,
                                            const std::string& source);

/// Aligned text table; several sources are shown side by side.
std::string format_table(std::span<const std::vector<ReportRow>> reports, const EvalConfig& config);
/// One JSON object per line.
std::string format_records(std::span<const ReportRow> rows, const EvalConfig& config);

struct PlotSeries {
  std::string name;
  std::vector<PrPoint> curve;
};
std::string pr_curve_svg(std::span<const PlotSeries> series, const std::string& title);
/// Grouped bars: one group per bucket, one bar per source.
std::string distance_bars_svg(std::span<const std::vector<ReportRow>> reports, const std::string& level,
                              double threshold, const std::string& title);

}  // namespace roifuse::eval
