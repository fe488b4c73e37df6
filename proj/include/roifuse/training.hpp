#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "roifuse/decoder.hpp"
#include "roifuse/model.hpp"
#include "roifuse/scene.hpp"

namespace roifuse::training {

using decoder::BoxResidual;
using geometry::Box3D;
using tensor::Tape;
using tensor::Tensor;

enum class Label { kNegative, kPositive };

struct TrainTarget {
  Label label = Label::kNegative;
  /// Max-IoU ground truth, present whenever some gt overlaps the proposal.
  std::optional<Box3D> matched_gt;
  std::optional<BoxResidual> regression_target;  // present iff positive
  double iou = 0.0;
  int gt_index = -1;

  bool positive() const { return label == Label::kPositive; }
};

/// Each proposal goes to its max-3D-IoU gt (lowest index on ties); positive
/// iff that IoU >= t.
std::vector<TrainTarget> assign_targets(std::span<const Box3D> proposals, std::span<const Box3D> gt, double t);

/// Mean BCE over RoIs. logits: [B x 1].
Tensor confidence_loss(Tape* tape, const Tensor& logits, std::span<const TrainTarget> targets);
/// Summed smooth-L1 over the 7 residuals, mean over positives (0 without any).
Tensor regression_loss(Tape* tape, const Tensor& residuals, std::span<const TrainTarget> targets);

struct LossWeights {
  double confidence = 1.0;
  double regression = 1.0;
};

struct LossTerms {
  Tensor total;
  Tensor confidence;
  Tensor regression;
};

LossTerms total_loss(Tape* tape, const decoder::Prediction& prediction, std::span<const TrainTarget> targets,
                     const LossWeights& weights);

// ---- optimizer -------------------------------------------------------------------

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam(tensor::ParameterSet& params, const AdamConfig& config);
  /// One bias-corrected update using the gradients currently stored on the
  /// parameters.
  void step(double learning_rate);
  std::size_t steps() const { return steps_; }

 private:
  tensor::ParameterSet* params_;
  AdamConfig config_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t steps_ = 0;
};

/// Linear warmup over the first ceil(warmup_fraction * total) steps, then a
/// single cosine decay to zero.
double scheduled_learning_rate(double base, std::size_t step, std::size_t total, double warmup_fraction);

// ---- loop ------------------------------------------------------------------------

struct TrainConfig {
  double iou_threshold = 0.55;
  double learning_rate = 1e-3;
  std::size_t epochs = 10;
  std::size_t batch_size = 32;  // RoIs
  std::uint64_t seed = 0;
  LossWeights weights;
  AdamConfig adam;
  double warmup_fraction = 0.1;
  bool augment = false;
  scene::AugmentRanges augment_ranges;
};

/// Throws std::invalid_argument naming the offending field.
void validate(const TrainConfig& config);

struct EpochMetrics {
  std::size_t epoch = 0;
  double loss = 0.0;
  double confidence_loss = 0.0;
  double regression_loss = 0.0;
  double mean_iou = 0.0;           // refined vs matched gt over positive RoIs
  double mean_proposal_iou = 0.0;  // same RoIs, before refinement
  double overlap_iou = 0.0;        // refined vs matched gt over every RoI overlapping some gt
  double overlap_proposal_iou = 0.0;
  double accuracy = 0.0;           // sign(logit) vs label
  double learning_rate = 0.0;      // at the last step of the epoch
  std::size_t rois = 0;
  std::size_t positives = 0;
};

struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

/// Seeded Adam training. Throws DivergenceError on a non-finite loss.
std::vector<EpochMetrics> train(std::span<const scene::Scene> dataset, model::RefinementModel& model,
                                const TrainConfig& config, const roi::BackboneParams& backbone,
                                const EpochCallback& on_epoch = {});

// ---- inference -------------------------------------------------------------------

struct RefinedBox {
  Box3D box;
  double score = 0.0;  // sigmoid(confidence logit)
  int class_id = 0;
  std::size_t proposal = 0;
};

/// Seed used to sample the points of proposal `index` in scene `scene_id`.
std::uint64_t roi_seed(std::uint64_t base, std::uint64_t scene_id, std::size_t index);

/// Refines every proposal of the scene (output order = proposal order).
std::vector<RefinedBox> refine_scene(const model::RefinementModel& model, const scene::Scene& scene,
                                     std::span<const roi::CameraView> views, std::uint64_t seed,
                                     const roi::PoolOptions& pool = {});

}  // namespace roifuse::training
