#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <random>

#include "roifuse/training.hpp"

using namespace roifuse;
using namespace roifuse::training;
using tensor::Tensor;

namespace {

model::ModelConfig tiny_model() {
  model::ModelConfig c;
  c.channels = 8;
  c.heads = 2;
  c.encoder_layers = 2;
  c.num_points = 8;
  c.pool_size = 2;
  c.image_channels = 4;
  return c;
}

scene::GenConfig tiny_gen() {
  scene::GenConfig g;
  g.objects_min = 2;
  g.objects_max = 3;
  g.clutter_points = 200;
  g.image_width = 64;
  g.image_height = 24;
  g.focal = 32;
  return g;
}

Box3D random_box(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> c(-3, 3), s(1, 3), a(-3, 3);
  return {c(rng), c(rng), 0.0, s(rng), s(rng), s(rng), a(rng)};
}

}  // namespace

TEST_CASE("target assignment matches a brute-force oracle") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<Box3D> props, gts;
    for (int i = 0; i < 20; ++i) props.push_back(random_box(rng));
    for (int i = 0; i < 5; ++i) gts.push_back(random_box(rng));
    const auto targets = assign_targets(props, gts, 0.3);
    for (std::size_t i = 0; i < props.size(); ++i) {
      int best = -1;
      double best_iou = 0.0;
      for (std::size_t j = 0; j < gts.size(); ++j) {
        const double v = geometry::iou_3d(props[i], gts[j]);
        if (v > best_iou) {
          best_iou = v;
          best = static_cast<int>(j);
        }
      }
      CHECK(targets[i].gt_index == best);
      CHECK(targets[i].iou == best_iou);
      CHECK(targets[i].positive() == (best >= 0 && best_iou >= 0.3));
      CHECK(targets[i].regression_target.has_value() == targets[i].positive());
      CHECK(targets[i].matched_gt.has_value() == (best >= 0));
    }
  }
}

TEST_CASE("target assignment edge cases") {
  const Box3D g{1, 2, 0, 4, 1.5, 2, 0.3};
  SUBCASE("a proposal equal to a gt is positive with a zero target") {
    const auto t = assign_targets(std::vector<Box3D>{g}, std::vector<Box3D>{g}, 0.55);
    CHECK(t[0].positive());
    for (double v : t[0].regression_target->to_array()) CHECK(v == 0.0);
  }
  SUBCASE("without gt every proposal is negative") {
    const auto t = assign_targets(std::vector<Box3D>{g, g}, std::vector<Box3D>{}, 0.55);
    for (const auto& x : t) {
      CHECK_FALSE(x.positive());
      CHECK_FALSE(x.matched_gt.has_value());
      CHECK(x.gt_index == -1);
    }
  }
  SUBCASE("ties go to the lower gt index") {
    const auto t = assign_targets(std::vector<Box3D>{g}, std::vector<Box3D>{g, g}, 0.55);
    CHECK(t[0].gt_index == 0);
  }
  SUBCASE("IoU equal to the threshold is positive") {
    const Box3D unit{0, 0, 0, 1, 1, 1, 0}, half{0.5, 0, 0, 1, 1, 1, 0};
    const double v = geometry::iou_3d(unit, half);
    CHECK(assign_targets(std::vector<Box3D>{half}, std::vector<Box3D>{unit}, v)[0].positive());
    CHECK_FALSE(assign_targets(std::vector<Box3D>{half}, std::vector<Box3D>{unit}, std::nextafter(v, 1.0))[0].positive());
  }
}

TEST_CASE("loss terms against direct formulas") {
  std::vector<TrainTarget> targets(3);
  targets[0].label = Label::kPositive;
  targets[0].regression_target = BoxResidual{0.1, -0.2, 0.0, 0.05, 0.0, 0.0, 2.0};
  targets[2].label = Label::kPositive;
  targets[2].regression_target = BoxResidual{};
  const Tensor logits({3, 1}, {0.4, -0.3, 1.1});
  std::vector<double> res(21, 0.0);
  res[0] = 0.6;
  res[6] = 0.5;
  res[14] = -0.2;
  const Tensor residuals({3, 7}, res);

  const double conf_ref =
      (tensor::bce_logit_value(0.4, 1) + tensor::bce_logit_value(-0.3, 0) + tensor::bce_logit_value(1.1, 1)) / 3;
  CHECK(confidence_loss(nullptr, logits, targets).item() == doctest::Approx(conf_ref).epsilon(1e-14));

  double reg_ref = 0;
  const auto t0 = targets[0].regression_target->to_array();
  for (int j = 0; j < 7; ++j) reg_ref += tensor::smooth_l1_value(res[j] - t0[j]);
  for (int j = 0; j < 7; ++j) reg_ref += tensor::smooth_l1_value(res[14 + j]);
  reg_ref /= 2;
  CHECK(regression_loss(nullptr, residuals, targets).item() == doctest::Approx(reg_ref).epsilon(1e-14));

  const auto terms = total_loss(nullptr, {residuals, logits}, targets, {2.0, 0.5});
  CHECK(terms.total.item() == doctest::Approx(2.0 * conf_ref + 0.5 * reg_ref).epsilon(1e-14));

  std::vector<TrainTarget> negatives(3);
  const auto neg = total_loss(nullptr, {residuals, logits}, negatives, {});
  CHECK(neg.regression.item() == 0.0);
  CHECK(neg.total.item() == neg.confidence.item());
}

TEST_CASE("Adam steps follow the bias-corrected update") {
  tensor::ParameterSet ps;
  Tensor& w = ps.add("w", Tensor({2}, {1.0, -1.0}, true));
  Adam adam(ps, {0.9, 0.999, 1e-8});
  w.mutable_grad()[0] = 0.5;
  w.mutable_grad()[1] = -2.0;
  adam.step(0.1);
  // First step: m_hat = g, v_hat = g^2, so the move is lr * g / (|g| + eps).
  CHECK(w.data()[0] == doctest::Approx(1.0 - 0.1 * 0.5 / (0.5 + 1e-8)).epsilon(1e-15));
  CHECK(w.data()[1] == doctest::Approx(-1.0 + 0.1 * 2.0 / (2.0 + 1e-8)).epsilon(1e-15));
  const double w0 = w.data()[0];
  w.zero_grad();
  w.mutable_grad()[0] = 1.0;
  adam.step(0.1);
  const double m = 0.9 * 0.05 + 0.1 * 1.0, v = 0.999 * 0.00025 + 0.001 * 1.0;
  const double expected = w0 - 0.1 * (m / (1 - 0.81)) / (std::sqrt(v / (1 - 0.999 * 0.999)) + 1e-8);
  CHECK(w.data()[0] == doctest::Approx(expected).epsilon(1e-14));
  CHECK(adam.steps() == 2);
}

TEST_CASE("learning-rate schedule") {
  const std::size_t total = 100;
  CHECK(scheduled_learning_rate(1.0, 0, total, 0.1) == doctest::Approx(0.1));
  CHECK(scheduled_learning_rate(1.0, 9, total, 0.1) == doctest::Approx(1.0));
  CHECK(scheduled_learning_rate(1.0, 10, total, 0.1) == doctest::Approx(1.0));
  CHECK(scheduled_learning_rate(1.0, 55, total, 0.1) == doctest::Approx(0.5));
  CHECK(scheduled_learning_rate(1.0, 99, total, 0.1) < 0.001);
  CHECK(scheduled_learning_rate(2.0, 0, total, 0.0) == doctest::Approx(2.0));
  double prev = 1e9;
  for (std::size_t s = 10; s < total; ++s) {
    const double lr = scheduled_learning_rate(1.0, s, total, 0.1);
    CHECK(lr <= prev);
    CHECK(lr >= 0.0);
    prev = lr;
  }
}

TEST_CASE("configuration validation names the field") {
  TrainConfig c;
  c.iou_threshold = 1.0;
  CHECK_THROWS_WITH_AS(validate(c), doctest::Contains("iou_threshold"), std::invalid_argument);
  c = {};
  c.batch_size = 0;
  CHECK_THROWS_WITH_AS(validate(c), doctest::Contains("batch_size"), std::invalid_argument);
  c = {};
  c.learning_rate = -1;
  CHECK_THROWS_WITH_AS(validate(c), doctest::Contains("learning_rate"), std::invalid_argument);
}

TEST_CASE("training loop behaviour") {
  const auto gen = tiny_gen();
  std::vector<scene::Scene> data{scene::generate_indexed(gen, 0), scene::generate_indexed(gen, 1)};
  const auto mc = tiny_model();
  const auto backbone = roi::BackboneParams::create(2, mc.image_channels, 4);
  TrainConfig tc;
  tc.epochs = 3;
  tc.batch_size = 4;
  tc.seed = 9;

  SUBCASE("zero learning rate leaves parameters unchanged") {
    auto net = model::RefinementModel::create(mc, 1);
    const auto before = net.parameters().get("encoder.layer1.ffn.fc1.weight").detach();
    tc.learning_rate = 0.0;
    train(data, net, tc, backbone);
    const auto after = net.parameters().get("encoder.layer1.ffn.fc1.weight");
    for (std::size_t i = 0; i < before.size(); ++i) CHECK(after.data()[i] == before.data()[i]);
  }
  SUBCASE("fixed seed reproduces the trajectory bit for bit") {
    for (bool augment : {false, true}) {
      tc.augment = augment;
      auto a = model::RefinementModel::create(mc, 1), b = model::RefinementModel::create(mc, 1);
      const auto ha = train(data, a, tc, backbone);
      const auto hb = train(data, b, tc, backbone);
      REQUIRE(ha.size() == 3);
      for (std::size_t e = 0; e < ha.size(); ++e) {
        CHECK(ha[e].loss == hb[e].loss);
        CHECK(ha[e].mean_iou == hb[e].mean_iou);
      }
      CHECK(a.parameters().get("decoder.query").data()[0] == b.parameters().get("decoder.query").data()[0]);
    }
  }
  SUBCASE("thread count does not change the result") {
    auto a = model::RefinementModel::create(mc, 1), b = model::RefinementModel::create(mc, 1);
    setenv("ROIFUSE_THREADS", "1", 1);
    const auto ha = train(data, a, tc, backbone);
    setenv("ROIFUSE_THREADS", "3", 1);
    const auto hb = train(data, b, tc, backbone);
    unsetenv("ROIFUSE_THREADS");
    CHECK(ha.back().loss == hb.back().loss);
  }
  SUBCASE("metrics are consistent") {
    auto net = model::RefinementModel::create(mc, 1);
    const auto h = train(data, net, tc, backbone);
    std::size_t rois = 0;
    for (const auto& s : data) rois += s.proposals.size();
    for (const auto& m : h) {
      CHECK(m.rois == rois);
      CHECK(m.positives <= rois);
      CHECK(m.accuracy >= 0.0);
      CHECK(m.accuracy <= 1.0);
      CHECK(std::isfinite(m.loss));
    }
    CHECK(h[0].epoch == 1);
  }
  SUBCASE("a huge learning rate is reported as divergence") {
    auto net = model::RefinementModel::create(mc, 1);
    tc.learning_rate = 1e300;
    tc.warmup_fraction = 0.0;
    CHECK_THROWS_AS(train(data, net, tc, backbone), DivergenceError);
  }
  SUBCASE("empty inputs are rejected") {
    auto net = model::RefinementModel::create(mc, 1);
    CHECK_THROWS_AS(train(std::vector<scene::Scene>{}, net, tc, backbone), std::invalid_argument);
  }
}

TEST_CASE("a single RoI is fitted within 200 epochs") {
  auto gen = tiny_gen();
  scene::Scene s = scene::generate_indexed(gen, 3);
  std::size_t keep = 0;
  for (std::size_t i = 0; i < s.proposals.size(); ++i) {
    if (s.proposals[i].source >= 0) {
      keep = i;
      break;
    }
  }
  s.proposals = {s.proposals[keep]};
  const auto mc = tiny_model();
  auto net = model::RefinementModel::create(mc, 1);
  TrainConfig tc;
  tc.epochs = 200;
  tc.batch_size = 1;
  tc.learning_rate = 3e-3;
  const auto h = train(std::vector<scene::Scene>{s}, net, tc, roi::BackboneParams::create(2, mc.image_channels, 4));
  CHECK(h.back().loss < 0.1 * h.front().loss);
}

TEST_CASE("refinement preserves proposal order and respects zeroed heads") {
  const auto gen = tiny_gen();
  const scene::Scene s = scene::generate_indexed(gen, 5);
  const auto mc = tiny_model();
  auto net = model::RefinementModel::create(mc, 1);
  for (const char* name : {"head.regression.weight", "head.regression.bias", "head.confidence.weight"}) {
    for (auto& v : net.parameters().get(name).mutable_data()) v = 0.0;
  }
  net.parameters().get("head.confidence.bias").mutable_data()[0] = -0.4;
  const auto views = scene::camera_views(s, roi::BackboneParams::create(2, mc.image_channels, 4));
  const auto out = refine_scene(net, s, views, 0);
  REQUIRE(out.size() == s.proposals.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    CHECK(out[i].proposal == i);
    CHECK(out[i].box == Box3D{s.proposals[i].box.x, s.proposals[i].box.y, s.proposals[i].box.z,
                              s.proposals[i].box.l, s.proposals[i].box.h, s.proposals[i].box.w,
                              geometry::wrap_angle(s.proposals[i].box.theta)});
    CHECK(out[i].score == doctest::Approx(tensor::sigmoid(-0.4)));
    CHECK(out[i].class_id == s.proposals[i].class_id);
  }
  CHECK(roi_seed(1, 2, 3) != roi_seed(1, 3, 2));
}
