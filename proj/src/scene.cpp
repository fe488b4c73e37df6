#include "roifuse/scene.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "roifuse/codec.hpp"

namespace roifuse::scene {

using geometry::Vec2;
using geometry::Vec3;
using json = nlohmann::json;

namespace {

constexpr double kPi = std::numbers::pi;

void require(bool ok, const std::string& field, const std::string& what) {
  if (!ok) throw std::invalid_argument("gen." + field + " " + what);
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

double normal(std::mt19937_64& rng, double sigma) {
  if (sigma == 0.0) return 0.0;
  return std::normal_distribution<double>(0.0, sigma)(rng);
}

int sample_class(std::mt19937_64& rng, const std::vector<ClassPrior>& classes) {
  std::vector<double> weights;
  for (const auto& c : classes) weights.push_back(c.weight);
  return std::discrete_distribution<int>(weights.begin(), weights.end())(rng);
}

Box3D sample_prior_box(std::mt19937_64& rng, const GenConfig& config, int class_id) {
  const ClassPrior& prior = config.classes[class_id];
  const double r = uniform(rng, config.range_min, config.range_max);
  const double phi = uniform(rng, -kPi, kPi);
  Box3D b;
  b.l = prior.length * std::exp(normal(rng, prior.size_sigma));
  b.h = prior.height * std::exp(normal(rng, prior.size_sigma));
  b.w = prior.width * std::exp(normal(rng, prior.size_sigma));
  b.x = r * std::cos(phi);
  b.y = r * std::sin(phi);
  b.z = config.ground_z + 0.5 * b.h;
  b.theta = uniform(rng, -kPi, kPi);
  return b;
}

double bev_range(const Box3D& b) { return std::hypot(b.x, b.y); }

// Surface samples on the faces that look toward the sensor at the origin,
// kept a small margin inside the box so containment is unambiguous.
void sample_surface_points(std::mt19937_64& rng, const Box3D& box, std::size_t count, double jitter,
                           PointCloud& cloud) {
  struct Face {
    int axis;
    double sign;
    double weight;
  };
  const Vec3 half(0.5 * box.l, 0.5 * box.w, 0.5 * box.h);
  const Vec3 sensor = geometry::world_to_box_frame(Vec3::Zero(), box);
  std::vector<Face> faces;
  for (int axis = 0; axis < 3; ++axis) {
    for (double sign : {-1.0, 1.0}) {
      if (axis == 2 && sign < 0.0) continue;  // underside faces the ground
      Vec3 center = Vec3::Zero();
      center[axis] = sign * half[axis];
      const Vec3 to_sensor = (sensor - center).normalized();
      const double facing = sign * to_sensor[axis];
      if (facing <= 0.0) continue;
      const double area = 4.0 * half[(axis + 1) % 3] * half[(axis + 2) % 3];
      faces.push_back({axis, sign, area * facing});
    }
  }
  if (faces.empty()) faces.push_back({2, 1.0, 1.0});
  std::vector<double> weights;
  for (const auto& f : faces) weights.push_back(f.weight);
  std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
  const double reflect_mean = uniform(rng, 0.3, 0.8);
  for (std::size_t i = 0; i < count; ++i) {
    const Face& f = faces[pick(rng)];
    Vec3 q;
    for (int a = 0; a < 3; ++a) {
      const double margin = 1e-3 * half[a];
      const double lim = half[a] - margin;
      if (a == f.axis) {
        const double depth = std::min(margin + std::abs(normal(rng, jitter)), 2.0 * lim);
        q[a] = f.sign * (half[a] - depth);
      } else {
        q[a] = std::clamp(uniform(rng, -half[a], half[a]) + normal(rng, jitter), -lim, lim);
      }
    }
    const double reflect = std::clamp(reflect_mean + normal(rng, 0.05), 0.0, 1.0);
    cloud.push_back(geometry::box_frame_to_world(q, box), std::array<double, 1>{reflect});
  }
}

std::vector<Vec2> convex_hull(std::vector<Vec2> pts) {
  std::sort(pts.begin(), pts.end(), [](const Vec2& a, const Vec2& b) {
    return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y());
  });
  if (pts.size() < 3) return pts;
  auto turn = [](const Vec2& o, const Vec2& a, const Vec2& b) {
    return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
  };
  std::vector<Vec2> hull(2 * pts.size());
  std::size_t k = 0;
  for (const auto& p : pts) {
    while (k >= 2 && turn(hull[k - 2], hull[k - 1], p) <= 0.0) --k;
    hull[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, lower = k + 1; i-- > 0;) {
    while (k >= lower && turn(hull[k - 2], hull[k - 1], pts[i]) <= 0.0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

bool inside_hull(const std::vector<Vec2>& hull, const Vec2& p) {
  if (hull.size() < 3) return false;
  for (std::size_t i = 0; i < hull.size(); ++i) {
    const Vec2& a = hull[i];
    const Vec2& b = hull[(i + 1) % hull.size()];
    if ((b.x() - a.x()) * (p.y() - a.y()) - (b.y() - a.y()) * (p.x() - a.x()) < 0.0) return false;
  }
  return true;
}

Vec3 transform_point(const Augmentation& aug, const Vec3& p) {
  switch (aug.op) {
    case AugmentOp::kFlipX:
      return {p.x(), -p.y(), p.z()};
    case AugmentOp::kRotate: {
      const double c = std::cos(aug.value), s = std::sin(aug.value);
      return {c * p.x() - s * p.y(), s * p.x() + c * p.y(), p.z()};
    }
    case AugmentOp::kScale:
      return aug.value * p;
  }
  return p;
}

Box3D transform_box(const Augmentation& aug, const Box3D& b) {
  Box3D out = b;
  const Vec3 c = transform_point(aug, b.center());
  out.x = c.x();
  out.y = c.y();
  out.z = c.z();
  switch (aug.op) {
    case AugmentOp::kFlipX:
      out.theta = geometry::wrap_angle(-b.theta);
      break;
    case AugmentOp::kRotate:
      out.theta = geometry::wrap_angle(b.theta + aug.value);
      break;
    case AugmentOp::kScale:
      out.l *= aug.value;
      out.h *= aug.value;
      out.w *= aug.value;
      break;
  }
  return out;
}

CameraModel transform_camera(const Augmentation& aug, const CameraModel& cam) {
  CameraModel out = cam;
  switch (aug.op) {
    case AugmentOp::kFlipX: {
      geometry::Mat4 f = geometry::Mat4::Identity();
      f(1, 1) = -1.0;
      out.extrinsics = cam.extrinsics * f;
      break;
    }
    case AugmentOp::kRotate: {
      const double c = std::cos(aug.value), s = std::sin(aug.value);
      geometry::Mat4 inv = geometry::Mat4::Identity();
      inv(0, 0) = c;
      inv(0, 1) = s;
      inv(1, 0) = -s;
      inv(1, 1) = c;
      out.extrinsics = cam.extrinsics * inv;
      break;
    }
    case AugmentOp::kScale:
      // Rigid extrinsics: camera-frame coordinates scale by s, pixels do not move.
      out.extrinsics.topRightCorner<3, 1>() *= aug.value;
      break;
  }
  return out;
}

// ---- serialization helpers -----------------------------------------------------------

std::string encode(std::span<const double> v) { return codec::encode_f64(v); }

std::vector<double> decode(const json& j, const char* key, std::size_t expected, std::size_t line) {
  if (!j.contains(key) || !j.at(key).is_string()) {
    throw std::runtime_error("line " + std::to_string(line) + ": missing array field '" + key + "'");
  }
  std::vector<double> v;
  try {
    v = codec::decode_f64(j.at(key).get<std::string>());
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error("line " + std::to_string(line) + ": field '" + key + "': " + e.what());
  }
  if (v.size() != expected) {
    throw std::runtime_error("line " + std::to_string(line) + ": field '" + key + "' has " +
                             std::to_string(v.size()) + " values, expected " + std::to_string(expected));
  }
  return v;
}

}  // namespace

std::vector<ClassPrior> GenConfig::default_classes() {
  return {ClassPrior{4.2, 1.6, 1.8, 0.08, 0.7, {0.85, 0.2, 0.15}},
          ClassPrior{6.5, 2.4, 2.3, 0.08, 0.3, {0.15, 0.35, 0.85}}};
}

void validate(const GenConfig& c) {
  require(c.objects_min <= c.objects_max, "objects_min", "must not exceed gen.objects_max");
  require(c.range_min >= 0.0 && c.range_min < c.range_max, "range_min", "must satisfy 0 <= range_min < range_max");
  require(std::isfinite(c.ground_z), "ground_z", "must be finite");
  require(c.points_at_10m >= 0.0, "points_at_10m", "must be >= 0");
  require(c.max_object_points >= 1, "max_object_points", "must be >= 1");
  require(c.point_jitter >= 0.0, "point_jitter", "must be >= 0");
  require(c.clutter_height > 0.0, "clutter_height", "must be > 0");
  require(c.image_width > 0 && c.image_height > 0, "image_width", "and gen.image_height must be > 0");
  require(c.focal > 0.0, "focal", "must be > 0");
  require(c.max_bev_overlap >= 0.0 && c.max_bev_overlap < 1.0, "max_bev_overlap", "must be in [0, 1)");
  const ProposalNoise& n = c.noise;
  require(n.center_sigma_x >= 0.0, "noise.center_sigma_x", "must be >= 0");
  require(n.center_sigma_y >= 0.0, "noise.center_sigma_y", "must be >= 0");
  require(n.center_sigma_z >= 0.0, "noise.center_sigma_z", "must be >= 0");
  require(n.size_sigma >= 0.0, "noise.size_sigma", "must be >= 0");
  require(n.yaw_sigma >= 0.0, "noise.yaw_sigma", "must be >= 0");
  require(n.range_gain >= 0.0, "noise.range_gain", "must be >= 0");
  require(n.drop_rate >= 0.0 && n.drop_rate <= 1.0, "noise.drop_rate", "must be in [0, 1]");
  require(n.false_positive_rate >= 0.0, "noise.false_positive_rate", "must be >= 0");
  require(!c.classes.empty(), "classes", "must not be empty");
  for (const auto& p : c.classes) {
    require(p.length > 0.0 && p.height > 0.0 && p.width > 0.0, "classes", "extents must be > 0");
    require(p.size_sigma >= 0.0, "classes", "size sigma must be >= 0");
    require(p.weight > 0.0, "classes", "weight must be > 0");
  }
}

Scene generate_scene(const GenConfig& config, std::uint64_t seed) {
  validate(config);
  std::mt19937_64 rng(seed);
  Scene scene;
  scene.points.num_extras = 1;

  const std::size_t count =
      std::uniform_int_distribution<std::size_t>(config.objects_min, config.objects_max)(rng);
  std::size_t retries = 0;
  while (scene.gt.size() < count) {
    const int cls = sample_class(rng, config.classes);
    const Box3D candidate = sample_prior_box(rng, config, cls);
    const bool clear = std::none_of(scene.gt.begin(), scene.gt.end(), [&](const GroundTruth& g) {
      return geometry::iou_bev(g.box, candidate) > config.max_bev_overlap;
    });
    if (!clear) {
      if (++retries > config.placement_retries) {
        throw std::runtime_error("cannot place " + std::to_string(count) + " objects without overlap after " +
                                 std::to_string(config.placement_retries) + " retries");
      }
      continue;
    }
    scene.gt.push_back({candidate, cls, 0});
  }

  for (const auto& g : scene.gt) {
    const double r = g.box.center().norm();
    const double expected = config.points_at_10m * (100.0 / (r * r)) * uniform(rng, 0.75, 1.25);
    const auto n = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(expected)), 1,
                                           config.max_object_points);
    sample_surface_points(rng, g.box, n, config.point_jitter, scene.points);
  }
  const double extent = config.range_max + 5.0;
  for (std::size_t i = 0; i < config.clutter_points; ++i) {
    const Vec3 p(uniform(rng, -extent, extent), uniform(rng, -extent, extent),
                 config.ground_z + uniform(rng, 0.0, config.clutter_height));
    scene.points.push_back(p, std::array<double, 1>{uniform(rng, 0.0, 1.0)});
  }
  for (auto& g : scene.gt) g.num_points = geometry::points_in_box(scene.points.xyz, g.box).size();

  for (std::size_t t = 0; t < config.camera_count; ++t) {
    const double yaw = 2.0 * kPi * static_cast<double>(t) / static_cast<double>(config.camera_count);
    CameraImage cam;
    cam.camera = CameraModel::looking_at_yaw(Vec3::Zero(), yaw, config.focal, config.image_width,
                                             config.image_height);
    cam.image = render_image(cam.camera, scene.gt, config, tensor::mix_seed(seed, 100 + t));
    scene.cameras.push_back(std::move(cam));
  }
  scene.proposals = simulate_proposals(scene.gt, config, tensor::mix_seed(seed, 1));
  return scene;
}

Scene generate_indexed(const GenConfig& config, std::uint64_t index) {
  Scene s = generate_scene(config, tensor::mix_seed(config.seed, index));
  s.id = index;
  return s;
}

std::vector<Proposal> simulate_proposals(std::span<const GroundTruth> gt, const GenConfig& config,
                                         std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const ProposalNoise& n = config.noise;
  std::vector<Proposal> out;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    // Draw every variate so the stream does not depend on the drop outcome.
    const double keep = uniform(rng, 0.0, 1.0);
    const Box3D& g = gt[i].box;
    const double range = bev_range(g);
    const double gain = 1.0 + n.range_gain * range / config.range_max;
    Box3D b = g;
    b.x += normal(rng, n.center_sigma_x * gain);
    b.y += normal(rng, n.center_sigma_y * gain);
    b.z += normal(rng, n.center_sigma_z * gain);
    b.l *= std::exp(normal(rng, n.size_sigma * gain));
    b.h *= std::exp(normal(rng, n.size_sigma * gain));
    b.w *= std::exp(normal(rng, n.size_sigma * gain));
    b.theta = geometry::wrap_angle(b.theta + normal(rng, n.yaw_sigma * gain));
    const double score = tensor::sigmoid(1.5 - 1.5 * range / config.range_max + normal(rng, 0.8));
    if (keep < n.drop_rate) continue;
    out.push_back({b, score, gt[i].class_id, static_cast<int>(i)});
  }
  const auto fps = std::poisson_distribution<int>(n.false_positive_rate)(rng);
  for (int i = 0; i < fps; ++i) {
    const int cls = sample_class(rng, config.classes);
    const Box3D b = sample_prior_box(rng, config, cls);
    out.push_back({b, tensor::sigmoid(-0.5 + normal(rng, 0.8)), cls, -1});
  }
  return out;
}

tensor::Tensor render_image(const CameraModel& camera, std::span<const GroundTruth> gt, const GenConfig& config,
                            std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const std::size_t h = static_cast<std::size_t>(camera.height);
  const std::size_t w = static_cast<std::size_t>(camera.width);
  const std::size_t plane = h * w;
  std::vector<double> img(3 * plane);
  const double horizon = camera.intrinsics(1, 2);
  static constexpr std::array<double, 3> kSky{0.55, 0.68, 0.85};
  static constexpr std::array<double, 3> kGround{0.36, 0.34, 0.31};
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const auto& base = static_cast<double>(y) < horizon ? kSky : kGround;
      const double grain = normal(rng, 0.02);
      for (std::size_t c = 0; c < 3; ++c) img[c * plane + y * w + x] = std::clamp(base[c] + grain, 0.0, 1.0);
    }
  }

  struct Silhouette {
    double depth;
    std::vector<Vec2> hull;
    std::array<double, 3> color;
  };
  std::vector<Silhouette> shapes;
  for (const auto& g : gt) {
    const auto corners = geometry::box_corners(g.box);
    std::vector<Vec2> pts;
    bool in_front = true;
    for (const auto& c : corners) {
      const auto p = geometry::project_point(camera, c);
      if (p.depth < 0.1) {
        in_front = false;
        break;
      }
      pts.emplace_back(p.u, p.v);
    }
    const double brightness = uniform(rng, 0.85, 1.15);
    if (!in_front) continue;
    std::array<double, 3> color = config.classes[g.class_id].shade;
    for (double& v : color) v = std::clamp(v * brightness, 0.0, 1.0);
    const Vec3 center_cam = camera.extrinsics.topLeftCorner<3, 3>() * g.box.center() +
                            camera.extrinsics.topRightCorner<3, 1>();
    shapes.push_back({center_cam.z(), convex_hull(std::move(pts)), color});
  }
  // Painter's order: farthest first.
  std::stable_sort(shapes.begin(), shapes.end(),
                   [](const Silhouette& a, const Silhouette& b) { return a.depth > b.depth; });
  for (const auto& s : shapes) {
    if (s.hull.size() < 3) continue;
    double x0 = s.hull[0].x(), x1 = x0, y0 = s.hull[0].y(), y1 = y0;
    for (const auto& p : s.hull) {
      x0 = std::min(x0, p.x());
      x1 = std::max(x1, p.x());
      y0 = std::min(y0, p.y());
      y1 = std::max(y1, p.y());
    }
    const long xa = std::max(0L, static_cast<long>(std::floor(x0)));
    const long xb = std::min(static_cast<long>(w) - 1, static_cast<long>(std::ceil(x1)));
    const long ya = std::max(0L, static_cast<long>(std::floor(y0)));
    const long yb = std::min(static_cast<long>(h) - 1, static_cast<long>(std::ceil(y1)));
    for (long y = ya; y <= yb; ++y) {
      for (long x = xa; x <= xb; ++x) {
        if (!inside_hull(s.hull, Vec2(static_cast<double>(x), static_cast<double>(y)))) continue;
        for (std::size_t c = 0; c < 3; ++c) img[c * plane + y * w + x] = s.color[c];
      }
    }
  }
  return tensor::Tensor({3, h, w}, std::move(img));
}

Scene augment(const Scene& scene, const Augmentation& aug) {
  if (aug.op == AugmentOp::kScale && !(aug.value > 0.0)) {
    throw std::invalid_argument("scale factor must be > 0");
  }
  Scene out = scene;
  for (auto& p : out.points.xyz) p = transform_point(aug, p);
  for (auto& g : out.gt) g.box = transform_box(aug, g.box);
  for (auto& p : out.proposals) p.box = transform_box(aug, p.box);
  for (auto& c : out.cameras) c.camera = transform_camera(aug, c.camera);
  return out;
}

Scene augment(const Scene& scene, std::span<const Augmentation> ops) {
  Scene out = scene;
  for (const auto& op : ops) out = augment(out, op);
  return out;
}

std::vector<Augmentation> sample_augmentations(std::mt19937_64& rng, const AugmentRanges& ranges) {
  std::vector<Augmentation> ops;
  const double flip = uniform(rng, 0.0, 1.0);
  const double angle = uniform(rng, -ranges.max_rotation, ranges.max_rotation);
  const double factor = uniform(rng, ranges.min_scale, ranges.max_scale);
  if (flip < ranges.flip_probability) ops.push_back({AugmentOp::kFlipX, 0.0});
  ops.push_back({AugmentOp::kRotate, angle});
  ops.push_back({AugmentOp::kScale, factor});
  return ops;
}

std::vector<roi::CameraView> camera_views(const Scene& scene, const roi::BackboneParams& backbone) {
  std::vector<roi::CameraView> views;
  views.reserve(scene.cameras.size());
  for (const auto& c : scene.cameras) views.push_back({c.camera, roi::synthetic_backbone(c.image, backbone)});
  return views;
}

// ---- dataset files -------------------------------------------------------------------

std::string encode_scene(const Scene& s) {
  json j;
  j["format"] = kDatasetFormat;
  j["version"] = kDatasetVersion;
  j["id"] = s.id;

  std::vector<double> xyz;
  xyz.reserve(3 * s.points.size());
  for (const auto& p : s.points.xyz) xyz.insert(xyz.end(), {p.x(), p.y(), p.z()});
  j["points"] = {{"count", s.points.size()},
                 {"extras", s.points.num_extras},
                 {"xyz", encode(xyz)},
                 {"extra", encode(s.points.extras)}};

  json cams = json::array();
  for (const auto& c : s.cameras) {
    std::vector<double> k, e;
    for (int r = 0; r < 3; ++r)
      for (int q = 0; q < 3; ++q) k.push_back(c.camera.intrinsics(r, q));
    for (int r = 0; r < 4; ++r)
      for (int q = 0; q < 4; ++q) e.push_back(c.camera.extrinsics(r, q));
    cams.push_back({{"width", c.camera.width},
                    {"height", c.camera.height},
                    {"intrinsics", encode(k)},
                    {"extrinsics", encode(e)},
                    {"image_shape", c.image.shape()},
                    {"image", encode(c.image.data())}});
  }
  j["cameras"] = std::move(cams);

  std::vector<double> boxes;
  json classes = json::array(), counts = json::array();
  for (const auto& g : s.gt) {
    const auto a = g.box.to_array();
    boxes.insert(boxes.end(), a.begin(), a.end());
    classes.push_back(g.class_id);
    counts.push_back(g.num_points);
  }
  j["gt"] = {{"count", s.gt.size()}, {"boxes", encode(boxes)}, {"classes", classes}, {"points", counts}};

  std::vector<double> pboxes, scores;
  json pclasses = json::array(), sources = json::array();
  for (const auto& p : s.proposals) {
    const auto a = p.box.to_array();
    pboxes.insert(pboxes.end(), a.begin(), a.end());
    scores.push_back(p.score);
    pclasses.push_back(p.class_id);
    sources.push_back(p.source);
  }
  j["proposals"] = {{"count", s.proposals.size()},
                    {"boxes", encode(pboxes)},
                    {"scores", encode(scores)},
                    {"classes", pclasses},
                    {"sources", sources}};
  return j.dump();
}

Scene decode_scene(const std::string& text, std::size_t line) {
  const std::string where = "line " + std::to_string(line) + ": ";
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(where + "malformed record (" + e.what() + ")");
  }
  try {
    if (j.value("format", std::string()) != kDatasetFormat) throw std::runtime_error(where + "not a scene record");
    const int version = j.at("version").get<int>();
    if (version != kDatasetVersion) {
      throw std::runtime_error(where + "dataset version " + std::to_string(version) + " is not supported (expected " +
                               std::to_string(kDatasetVersion) + ")");
    }
    Scene s;
    s.id = j.at("id").get<std::uint64_t>();

    const json& pts = j.at("points");
    const auto n = pts.at("count").get<std::size_t>();
    s.points.num_extras = pts.at("extras").get<std::size_t>();
    const auto xyz = decode(pts, "xyz", 3 * n, line);
    s.points.extras = decode(pts, "extra", n * s.points.num_extras, line);
    s.points.xyz.reserve(n);
    for (std::size_t i = 0; i < n; ++i) s.points.xyz.emplace_back(xyz[3 * i], xyz[3 * i + 1], xyz[3 * i + 2]);

    for (const json& c : j.at("cameras")) {
      CameraImage cam;
      cam.camera.width = c.at("width").get<int>();
      cam.camera.height = c.at("height").get<int>();
      const auto k = decode(c, "intrinsics", 9, line);
      const auto e = decode(c, "extrinsics", 16, line);
      for (int r = 0; r < 3; ++r)
        for (int q = 0; q < 3; ++q) cam.camera.intrinsics(r, q) = k[3 * r + q];
      for (int r = 0; r < 4; ++r)
        for (int q = 0; q < 4; ++q) cam.camera.extrinsics(r, q) = e[4 * r + q];
      const auto shape = c.at("image_shape").get<tensor::Shape>();
      cam.image = tensor::Tensor(shape, decode(c, "image", tensor::numel(shape), line));
      s.cameras.push_back(std::move(cam));
    }

    const json& gt = j.at("gt");
    const auto m = gt.at("count").get<std::size_t>();
    const auto boxes = decode(gt, "boxes", 7 * m, line);
    const auto classes = gt.at("classes").get<std::vector<int>>();
    const auto counts = gt.at("points").get<std::vector<std::size_t>>();
    if (classes.size() != m || counts.size() != m) throw std::runtime_error(where + "gt arrays disagree in length");
    for (std::size_t i = 0; i < m; ++i) {
      s.gt.push_back({Box3D::from_array(std::span(boxes).subspan(7 * i, 7)), classes[i], counts[i]});
    }

    const json& pr = j.at("proposals");
    const auto p = pr.at("count").get<std::size_t>();
    const auto pboxes = decode(pr, "boxes", 7 * p, line);
    const auto scores = decode(pr, "scores", p, line);
    const auto pclasses = pr.at("classes").get<std::vector<int>>();
    const auto sources = pr.at("sources").get<std::vector<int>>();
    if (pclasses.size() != p || sources.size() != p) {
      throw std::runtime_error(where + "proposal arrays disagree in length");
    }
    for (std::size_t i = 0; i < p; ++i) {
      s.proposals.push_back({Box3D::from_array(std::span(pboxes).subspan(7 * i, 7)), scores[i], pclasses[i], sources[i]});
    }
    return s;
  } catch (const json::exception& e) {
    throw std::runtime_error(where + "malformed record (" + e.what() + ")");
  }
}

DatasetWriter::DatasetWriter(const std::filesystem::path& path) : out_(path, std::ios::binary), path_(path) {
  if (!out_) throw std::runtime_error("cannot open " + path.string() + " for writing");
}

void DatasetWriter::write(const Scene& scene) {
  out_ << encode_scene(scene) << '\n';
  if (!out_) throw std::runtime_error("write to " + path_.string() + " failed");
}

void DatasetWriter::close() {
  out_.close();
  if (out_.fail()) throw std::runtime_error("closing " + path_.string() + " failed");
}

DatasetReader::DatasetReader(const std::filesystem::path& path) : in_(path, std::ios::binary), path_(path) {
  if (!in_) throw std::runtime_error("cannot open " + path.string() + " for reading");
}

std::optional<Scene> DatasetReader::next() {
  std::string text;
  while (std::getline(in_, text)) {
    ++line_;
    if (text.empty()) continue;
    try {
      return decode_scene(text, line_);
    } catch (const std::runtime_error& e) {
      throw std::runtime_error(path_.string() + ": " + e.what());
    }
  }
  return std::nullopt;
}

void write_dataset(const std::filesystem::path& path, std::span<const Scene> scenes) {
  DatasetWriter w(path);
  for (const auto& s : scenes) w.write(s);
  w.close();
}

std::vector<Scene> read_dataset(const std::filesystem::path& path) {
  DatasetReader r(path);
  std::vector<Scene> out;
  while (auto s = r.next()) out.push_back(std::move(*s));
  return out;
}

}  // namespace roifuse::scene
