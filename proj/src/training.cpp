#include "roifuse/training.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "roifuse/parallel.hpp"

namespace roifuse::training {

std::vector<TrainTarget> assign_targets(std::span<const Box3D> proposals, std::span<const Box3D> gt, double t) {
  std::vector<TrainTarget> out(proposals.size());
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    TrainTarget& target = out[i];
    for (std::size_t j = 0; j < gt.size(); ++j) {
      const double v = geometry::iou_3d(proposals[i], gt[j]);
      if (v > target.iou) {
        target.iou = v;
        target.gt_index = static_cast<int>(j);
      }
    }
    if (target.gt_index < 0) continue;
    target.matched_gt = gt[target.gt_index];
    if (target.iou >= t) {
      target.label = Label::kPositive;
      target.regression_target = decoder::encode_residuals(proposals[i], *target.matched_gt);
    }
  }
  return out;
}

Tensor confidence_loss(Tape* tape, const Tensor& logits, std::span<const TrainTarget> targets) {
  std::vector<double> labels;
  labels.reserve(targets.size());
  for (const auto& t : targets) labels.push_back(t.positive() ? 1.0 : 0.0);
  return tensor::bce_with_logits(tape, logits, labels);
}

Tensor regression_loss(Tape* tape, const Tensor& residuals, std::span<const TrainTarget> targets) {
  std::vector<double> flat(targets.size() * decoder::kResidualDim, 0.0);
  std::vector<bool> mask(targets.size(), false);
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (!targets[i].positive()) continue;
    mask[i] = true;
    const auto a = targets[i].regression_target->to_array();
    std::copy(a.begin(), a.end(), flat.begin() + static_cast<std::ptrdiff_t>(i * decoder::kResidualDim));
  }
  return tensor::smooth_l1_rows(tape, residuals, flat, mask);
}

LossTerms total_loss(Tape* tape, const decoder::Prediction& prediction, std::span<const TrainTarget> targets,
                     const LossWeights& weights) {
  LossTerms terms;
  terms.confidence = confidence_loss(tape, prediction.logits, targets);
  terms.regression = regression_loss(tape, prediction.residuals, targets);
  terms.total = tensor::add(tape, tensor::scale(tape, terms.confidence, weights.confidence),
                            tensor::scale(tape, terms.regression, weights.regression));
  return terms;
}

// ---- optimizer -------------------------------------------------------------------

Adam::Adam(tensor::ParameterSet& params, const AdamConfig& config) : params_(&params), config_(config) {
  for (const auto& p : params.items()) {
    m_.emplace_back(p.tensor.size(), 0.0);
    v_.emplace_back(p.tensor.size(), 0.0);
  }
}

void Adam::step(double learning_rate) {
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double c1 = 1.0 - std::pow(config_.beta1, t);
  const double c2 = 1.0 - std::pow(config_.beta2, t);
  auto& items = params_->items();
  for (std::size_t i = 0; i < items.size(); ++i) {
    Tensor& p = items[i].tensor;
    if (!p.has_grad()) continue;
    auto data = p.mutable_data();
    const auto grad = p.grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < data.size(); ++j) {
      m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * grad[j];
      v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * grad[j] * grad[j];
      data[j] -= learning_rate * (m[j] / c1) / (std::sqrt(v[j] / c2) + config_.eps);
    }
  }
}

double scheduled_learning_rate(double base, std::size_t step, std::size_t total, double warmup_fraction) {
  if (total == 0) return base;
  const auto warmup = static_cast<std::size_t>(std::ceil(warmup_fraction * static_cast<double>(total)));
  if (step < warmup) return base * static_cast<double>(step + 1) / static_cast<double>(warmup);
  const double span = static_cast<double>(std::max<std::size_t>(1, total - warmup));
  const double progress = std::min(1.0, static_cast<double>(step - warmup) / span);
  return base * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

// ---- loop ------------------------------------------------------------------------

void validate(const TrainConfig& c) {
  if (!(c.iou_threshold > 0.0 && c.iou_threshold < 1.0)) {
    throw std::invalid_argument("train.iou_threshold must be in (0, 1)");
  }
  if (!(c.learning_rate >= 0.0)) throw std::invalid_argument("train.learning_rate must be >= 0");
  if (c.batch_size == 0) throw std::invalid_argument("train.batch_size must be >= 1");
  if (!(c.weights.confidence >= 0.0)) throw std::invalid_argument("train.weight_confidence must be >= 0");
  if (!(c.weights.regression >= 0.0)) throw std::invalid_argument("train.weight_regression must be >= 0");
  if (!(c.adam.beta1 >= 0.0 && c.adam.beta1 < 1.0)) throw std::invalid_argument("train.beta1 must be in [0, 1)");
  if (!(c.adam.beta2 >= 0.0 && c.adam.beta2 < 1.0)) throw std::invalid_argument("train.beta2 must be in [0, 1)");
  if (!(c.adam.eps > 0.0)) throw std::invalid_argument("train.adam_eps must be > 0");
  if (!(c.warmup_fraction >= 0.0 && c.warmup_fraction < 1.0)) {
    throw std::invalid_argument("train.warmup_fraction must be in [0, 1)");
  }
  if (!(c.augment_ranges.min_scale > 0.0 && c.augment_ranges.min_scale <= c.augment_ranges.max_scale)) {
    throw std::invalid_argument("train.augment_min_scale must be > 0 and <= train.augment_max_scale");
  }
}

std::uint64_t roi_seed(std::uint64_t base, std::uint64_t scene_id, std::size_t index) {
  return tensor::mix_seed(tensor::mix_seed(base, scene_id), index);
}

namespace {

struct RoiRef {
  std::size_t scene;
  std::size_t proposal;
};

// Per-epoch view of the data: possibly augmented scenes with matching
// camera poses, prepared RoI inputs, and targets.
struct EpochData {
  std::vector<scene::Scene> scenes;
  std::vector<std::vector<roi::CameraView>> views;
  std::vector<model::RoiInput> inputs;
  std::vector<TrainTarget> targets;
};

std::vector<roi::CameraView> rebase_views(const std::vector<roi::CameraView>& base, const scene::Scene& s) {
  std::vector<roi::CameraView> out = base;
  for (std::size_t i = 0; i < out.size(); ++i) out[i].camera = s.cameras[i].camera;
  return out;
}

void prepare_epoch(EpochData& data, std::span<const RoiRef> refs, const model::ModelConfig& mc, double t,
                   std::uint64_t seed) {
  data.inputs.assign(refs.size(), {});
  data.targets.assign(refs.size(), {});
  parallel_for(refs.size(), [&](std::size_t i) {
    const scene::Scene& s = data.scenes[refs[i].scene];
    const model::SensorFrame frame{&s.points, data.views[refs[i].scene]};
    data.inputs[i] = model::prepare_roi(frame, s.proposals[refs[i].proposal].box, mc, roi_seed(seed, s.id, refs[i].proposal));
  });
  std::vector<std::vector<TrainTarget>> per_scene(data.scenes.size());
  parallel_for(data.scenes.size(), [&](std::size_t si) {
    const scene::Scene& s = data.scenes[si];
    std::vector<Box3D> props, gts;
    for (const auto& p : s.proposals) props.push_back(p.box);
    for (const auto& g : s.gt) gts.push_back(g.box);
    per_scene[si] = assign_targets(props, gts, t);
  });
  for (std::size_t i = 0; i < refs.size(); ++i) data.targets[i] = per_scene[refs[i].scene][refs[i].proposal];
}

}  // namespace

std::vector<EpochMetrics> train(std::span<const scene::Scene> dataset, model::RefinementModel& model,
                                const TrainConfig& config, const roi::BackboneParams& backbone,
                                const EpochCallback& on_epoch) {
  validate(config);
  if (dataset.empty()) throw std::invalid_argument("training dataset is empty");
  const model::ModelConfig& mc = model.config();

  std::vector<std::vector<roi::CameraView>> base_views(dataset.size());
  if (!mc.lidar_only) {
    parallel_for(dataset.size(), [&](std::size_t i) { base_views[i] = scene::camera_views(dataset[i], backbone); });
  }
  std::vector<RoiRef> refs;
  for (std::size_t s = 0; s < dataset.size(); ++s) {
    for (std::size_t p = 0; p < dataset[s].proposals.size(); ++p) refs.push_back({s, p});
  }
  if (refs.empty()) throw std::invalid_argument("training dataset has no proposals");

  EpochData data;
  if (!config.augment) {
    data.scenes.assign(dataset.begin(), dataset.end());
    data.views = base_views;
    prepare_epoch(data, refs, mc, config.iou_threshold, config.seed);
  }

  const std::size_t batches = (refs.size() + config.batch_size - 1) / config.batch_size;
  const std::size_t total_steps = batches * config.epochs;
  Adam adam(model.parameters(), config.adam);
  std::vector<EpochMetrics> history;
  std::vector<std::size_t> order(refs.size());

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    if (config.augment) {
      data.scenes.clear();
      data.views.clear();
      for (std::size_t s = 0; s < dataset.size(); ++s) {
        std::mt19937_64 aug_rng(tensor::mix_seed(tensor::mix_seed(config.seed, 0xa06 + epoch), s));
        const auto ops = scene::sample_augmentations(aug_rng, config.augment_ranges);
        data.scenes.push_back(scene::augment(dataset[s], ops));
        data.views.push_back(rebase_views(base_views[s], data.scenes.back()));
      }
      prepare_epoch(data, refs, mc, config.iou_threshold, tensor::mix_seed(config.seed, epoch));
    }
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::mt19937_64 shuffle_rng(tensor::mix_seed(config.seed, 0x5u + epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    EpochMetrics m;
    m.epoch = epoch + 1;
    double loss_sum = 0.0, conf_sum = 0.0, reg_sum = 0.0;
    double iou_sum = 0.0, prop_iou_sum = 0.0, overlap_sum = 0.0, overlap_prop_sum = 0.0;
    std::size_t correct = 0, overlapping = 0;
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t lo = b * config.batch_size;
      const std::size_t hi = std::min(refs.size(), lo + config.batch_size);
      std::vector<const model::RoiInput*> inputs;
      std::vector<TrainTarget> targets;
      for (std::size_t i = lo; i < hi; ++i) {
        inputs.push_back(&data.inputs[order[i]]);
        targets.push_back(data.targets[order[i]]);
      }
      const model::RoiBatch batch = model::make_batch(inputs, mc);
      const std::size_t step = epoch * batches + b;
      const double lr = scheduled_learning_rate(config.learning_rate, step, total_steps, config.warmup_fraction);
      Tape tape;
      decoder::Prediction pred;
      LossTerms terms;
      try {
        model.parameters().zero_grad();
        pred = model.forward(&tape, batch);
        terms = total_loss(&tape, pred, targets, config.weights);
        tape.backward(terms.total);
      } catch (const tensor::NonFiniteError& e) {
        throw DivergenceError("training diverged at epoch " + std::to_string(epoch + 1) + ", step " +
                              std::to_string(step) + " (learning rate " + std::to_string(lr) + "): " + e.what());
      }
      const double loss = terms.total.item();
      if (!std::isfinite(loss)) {
        throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch + 1) + ", step " +
                              std::to_string(step) + ": confidence " + std::to_string(terms.confidence.item()) +
                              ", regression " + std::to_string(terms.regression.item()));
      }
      adam.step(lr);
      m.learning_rate = lr;

      const double n = static_cast<double>(targets.size());
      std::size_t pos = 0;
      for (const auto& t : targets) pos += t.positive() ? 1 : 0;
      loss_sum += loss * n;
      conf_sum += terms.confidence.item() * n;
      reg_sum += terms.regression.item() * static_cast<double>(pos);
      m.positives += pos;
      m.rois += targets.size();
      for (std::size_t i = 0; i < targets.size(); ++i) {
        const bool predicted_positive = pred.logits.data()[i] > 0.0;
        if (predicted_positive == targets[i].positive()) ++correct;
        if (!targets[i].matched_gt) continue;
        const RoiRef& ref = refs[order[lo + i]];
        const Box3D& proposal = data.scenes[ref.scene].proposals[ref.proposal].box;
        const auto row = pred.residuals.data().subspan(i * decoder::kResidualDim, decoder::kResidualDim);
        const Box3D refined = decoder::apply_residuals(proposal, BoxResidual::from_array(row));
        const double iou = geometry::iou_3d(refined, *targets[i].matched_gt);
        overlap_sum += iou;
        overlap_prop_sum += targets[i].iou;
        ++overlapping;
        if (targets[i].positive()) {
          iou_sum += iou;
          prop_iou_sum += targets[i].iou;
        }
      }
    }
    const double rois = static_cast<double>(m.rois);
    m.loss = loss_sum / rois;
    m.confidence_loss = conf_sum / rois;
    m.regression_loss = m.positives > 0 ? reg_sum / static_cast<double>(m.positives) : 0.0;
    m.accuracy = static_cast<double>(correct) / rois;
    if (m.positives > 0) {
      m.mean_iou = iou_sum / static_cast<double>(m.positives);
      m.mean_proposal_iou = prop_iou_sum / static_cast<double>(m.positives);
    }
    if (overlapping > 0) {
      m.overlap_iou = overlap_sum / static_cast<double>(overlapping);
      m.overlap_proposal_iou = overlap_prop_sum / static_cast<double>(overlapping);
    }
    history.push_back(m);
    if (on_epoch) on_epoch(m);
  }
  return history;
}

// ---- inference -------------------------------------------------------------------

std::vector<RefinedBox> refine_scene(const model::RefinementModel& model, const scene::Scene& scene,
                                     std::span<const roi::CameraView> views, std::uint64_t seed,
                                     const roi::PoolOptions& pool) {
  const model::ModelConfig& mc = model.config();
  const model::SensorFrame frame{&scene.points, views};
  std::vector<model::RoiInput> inputs;
  inputs.reserve(scene.proposals.size());
  for (std::size_t i = 0; i < scene.proposals.size(); ++i) {
    inputs.push_back(model::prepare_roi(frame, scene.proposals[i].box, mc, roi_seed(seed, scene.id, i), pool));
  }
  std::vector<RefinedBox> out;
  constexpr std::size_t kChunk = 64;
  for (std::size_t lo = 0; lo < inputs.size(); lo += kChunk) {
    const std::size_t hi = std::min(inputs.size(), lo + kChunk);
    std::vector<const model::RoiInput*> ptrs;
    for (std::size_t i = lo; i < hi; ++i) ptrs.push_back(&inputs[i]);
    const auto pred = model.forward(nullptr, model::make_batch(ptrs, mc));
    for (std::size_t i = lo; i < hi; ++i) {
      const auto row = pred.residuals.data().subspan((i - lo) * decoder::kResidualDim, decoder::kResidualDim);
      const auto& p = scene.proposals[i];
      out.push_back({decoder::apply_residuals(p.box, BoxResidual::from_array(row)),
                     tensor::sigmoid(pred.logits.data()[i - lo]), p.class_id, i});
    }
  }
  return out;
}

}  // namespace roifuse::training
