#include "roifuse/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include <Eigen/LU>

namespace roifuse::geometry {

namespace {

double cross(const Vec2& a, const Vec2& b) { return a.x() * b.y() - a.y() * b.x(); }

// Relative tolerance for the half-plane test; keeps coincident edges from
// producing spurious intersection points.
constexpr double kClipTolerance = 1e-12;

}  // namespace

double Box3D::diagonal() const { return std::sqrt(l * l + w * w); }

Box3D Box3D::from_array(std::span<const double> v) {
  if (v.size() != 7) throw std::invalid_argument("Box3D needs 7 values, got " + std::to_string(v.size()));
  return Box3D{v[0], v[1], v[2], v[3], v[4], v[5], v[6]};
}

double wrap_angle(double a) {
  constexpr double kPi = std::numbers::pi;
  if (a > -kPi && a <= kPi) return a;
  double r = std::fmod(a + kPi, 2.0 * kPi);
  if (r <= 0.0) r += 2.0 * kPi;
  return r - kPi;
}

void validate(const Box3D& box) {
  for (double v : box.to_array()) {
    if (!std::isfinite(v)) throw std::invalid_argument("box has a non-finite field");
  }
  if (!(box.l > 0.0 && box.h > 0.0 && box.w > 0.0)) {
    throw std::invalid_argument("box extents must be positive");
  }
}

void PointCloud::push_back(const Vec3& p, std::span<const double> e) {
  if (e.size() != num_extras) {
    throw std::invalid_argument("point has " + std::to_string(e.size()) + " extras, cloud expects " +
                                std::to_string(num_extras));
  }
  xyz.push_back(p);
  extras.insert(extras.end(), e.begin(), e.end());
}

CameraModel CameraModel::looking_at_yaw(const Vec3& position, double yaw, double focal, int width,
                                        int height) {
  CameraModel cam;
  cam.width = width;
  cam.height = height;
  cam.intrinsics << focal, 0.0, 0.5 * (width - 1), 0.0, focal, 0.5 * (height - 1), 0.0, 0.0, 1.0;
  const Vec3 forward(std::cos(yaw), std::sin(yaw), 0.0);
  const Vec3 right(std::sin(yaw), -std::cos(yaw), 0.0);
  const Vec3 down(0.0, 0.0, -1.0);
  Mat3 rot;
  rot.row(0) = right.transpose();
  rot.row(1) = down.transpose();
  rot.row(2) = forward.transpose();
  cam.extrinsics.setIdentity();
  cam.extrinsics.topLeftCorner<3, 3>() = rot;
  cam.extrinsics.topRightCorner<3, 1>() = -rot * position;
  return cam;
}

void validate(const CameraModel& cam) {
  const Mat3& k = cam.intrinsics;
  if (!(k(0, 0) > 0.0 && k(1, 1) > 0.0)) throw std::invalid_argument("camera focal entries must be positive");
  if (k(1, 0) != 0.0 || k(2, 0) != 0.0 || k(2, 1) != 0.0) {
    throw std::invalid_argument("camera intrinsics must be upper triangular");
  }
  const Mat3 rot = cam.extrinsics.topLeftCorner<3, 3>();
  if ((rot * rot.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-9 ||
      std::abs(std::abs(rot.determinant()) - 1.0) > 1e-9) {
    throw std::invalid_argument("camera extrinsic rotation is not orthonormal");
  }
  if (cam.width <= 0 || cam.height <= 0) throw std::invalid_argument("camera image size must be positive");
}

Vec3 corner_offset(const Box3D& box, int i) {
  static constexpr int kSignX[4] = {1, -1, -1, 1};
  static constexpr int kSignY[4] = {1, 1, -1, -1};
  const int face = i / 4;
  const int k = i % 4;
  return {0.5 * kSignX[k] * box.l, 0.5 * kSignY[k] * box.w, face == 0 ? -0.5 * box.h : 0.5 * box.h};
}

std::array<Vec3, 8> box_corners(const Box3D& box) {
  std::array<Vec3, 8> out;
  for (int i = 0; i < 8; ++i) out[i] = box_frame_to_world(corner_offset(box, i), box);
  return out;
}

std::array<Vec2, 4> footprint(const Box3D& box) {
  const double c = std::cos(box.theta), s = std::sin(box.theta);
  std::array<Vec2, 4> out;
  for (int i = 0; i < 4; ++i) {
    const Vec3 o = corner_offset(box, i);
    out[i] = Vec2(box.x + c * o.x() - s * o.y(), box.y + s * o.x() + c * o.y());
  }
  return out;
}

Box3D expand_box(const Box3D& box, double k) {
  if (!(k >= 1.0)) throw std::invalid_argument("expansion ratio must be >= 1");
  Box3D out = box;
  out.l *= k;
  out.h *= k;
  out.w *= k;
  return out;
}

Vec3 world_to_box_frame(const Vec3& p, const Box3D& box) {
  const double c = std::cos(box.theta), s = std::sin(box.theta);
  const double dx = p.x() - box.x, dy = p.y() - box.y;
  return {c * dx + s * dy, -s * dx + c * dy, p.z() - box.z};
}

Vec3 box_frame_to_world(const Vec3& p, const Box3D& box) {
  const double c = std::cos(box.theta), s = std::sin(box.theta);
  return {box.x + c * p.x() - s * p.y(), box.y + s * p.x() + c * p.y(), box.z + p.z()};
}

bool contains(const Box3D& box, const Vec3& p) {
  const Vec3 q = world_to_box_frame(p, box);
  return std::abs(q.x()) <= 0.5 * box.l && std::abs(q.y()) <= 0.5 * box.w && std::abs(q.z()) <= 0.5 * box.h;
}

std::vector<std::size_t> points_in_box(std::span<const Vec3> points, const Box3D& box) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (contains(box, points[i])) out.push_back(i);
  }
  return out;
}

double polygon_area(std::span<const Vec2> poly) {
  if (poly.size() < 3) return 0.0;
  double twice = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i) twice += cross(poly[i], poly[(i + 1) % poly.size()]);
  return 0.5 * std::abs(twice);
}

std::vector<Vec2> clip_convex(std::span<const Vec2> subject, std::span<const Vec2> clip) {
  std::vector<Vec2> out(subject.begin(), subject.end());
  for (std::size_t e = 0; e < clip.size() && !out.empty(); ++e) {
    const Vec2& a = clip[e];
    const Vec2& b = clip[(e + 1) % clip.size()];
    const Vec2 edge = b - a;
    const double tol = kClipTolerance * std::max(1.0, edge.squaredNorm());
    std::vector<Vec2> in = std::move(out);
    out.clear();
    for (std::size_t i = 0; i < in.size(); ++i) {
      const Vec2& s = in[i];
      const Vec2& t = in[(i + 1) % in.size()];
      const double ds = cross(edge, s - a);
      const double dt = cross(edge, t - a);
      const bool s_in = ds >= -tol;
      const bool t_in = dt >= -tol;
      if (s_in) out.push_back(s);
      if (s_in != t_in) {
        const double r = ds / (ds - dt);
        out.push_back(s + r * (t - s));
      }
    }
  }
  return out;
}

double footprint_intersection_area(const Box3D& a, const Box3D& b) {
  const auto fa = footprint(a);
  const auto fb = footprint(b);
  // Cheap reject on bounding circles.
  const double reach = 0.5 * (a.diagonal() + b.diagonal());
  if (std::hypot(a.x - b.x, a.y - b.y) > reach) return 0.0;
  return polygon_area(clip_convex(fa, fb));
}

double iou_bev(const Box3D& a, const Box3D& b) {
  const double inter = footprint_intersection_area(a, b);
  const double uni = a.l * a.w + b.l * b.w - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

double iou_3d(const Box3D& a, const Box3D& b) {
  const double z_lo = std::max(a.z - 0.5 * a.h, b.z - 0.5 * b.h);
  const double z_hi = std::min(a.z + 0.5 * a.h, b.z + 0.5 * b.h);
  const double overlap_h = z_hi - z_lo;
  if (overlap_h <= 0.0) return 0.0;
  const double inter = footprint_intersection_area(a, b) * overlap_h;
  const double uni = a.volume() + b.volume() - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

double iou(const Box3D& a, const Box3D& b, IouMode mode) {
  return mode == IouMode::k3d ? iou_3d(a, b) : iou_bev(a, b);
}

Projection project_point(const CameraModel& cam, const Vec3& p) {
  const Vec3 pc = cam.extrinsics.topLeftCorner<3, 3>() * p + cam.extrinsics.topRightCorner<3, 1>();
  const Vec3 h = cam.intrinsics * pc;
  Projection out;
  out.depth = pc.z();
  out.valid = pc.z() > 0.0;
  out.u = h.x() / h.z();
  out.v = h.y() / h.z();
  return out;
}

std::vector<Projection> project_points(const CameraModel& cam, std::span<const Vec3> points) {
  std::vector<Projection> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(project_point(cam, p));
  return out;
}

Rect2D min_circumscribed_rect(std::span<const Vec2> points) {
  if (points.empty()) throw std::invalid_argument("min_circumscribed_rect needs at least one point");
  Rect2D r{points[0].x(), points[0].y(), points[0].x(), points[0].y()};
  for (const auto& p : points.subspan(1)) {
    r.x_min = std::min(r.x_min, p.x());
    r.y_min = std::min(r.y_min, p.y());
    r.x_max = std::max(r.x_max, p.x());
    r.y_max = std::max(r.y_max, p.y());
  }
  return r;
}

}  // namespace roifuse::geometry
