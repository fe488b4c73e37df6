#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace roifuse::geometry {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

/// Oriented 3D box. Field order follows {x, y, z, l, h, w, theta}:
/// l runs along the heading (+x of the box frame), w is lateral (+y),
/// h is vertical (+z). theta is the yaw about +z, counterclockwise from +x.
struct Box3D {
  double x = 0.0, y = 0.0, z = 0.0;
  double l = 1.0, h = 1.0, w = 1.0;
  double theta = 0.0;

  Vec3 center() const { return {x, y, z}; }
  double volume() const { return l * h * w; }
  /// BEV footprint diagonal.
  double diagonal() const;
  std::array<double, 7> to_array() const { return {x, y, z, l, h, w, theta}; }
  static Box3D from_array(std::span<const double> v);

  bool operator==(const Box3D&) const = default;
};

/// Wraps an angle into (-pi, pi].
double wrap_angle(double a);

/// Throws std::invalid_argument when extents are non-positive or any field
/// is non-finite. theta is not required to be pre-wrapped.
void validate(const Box3D& box);

/// Point cloud with a fixed number of extra channels per point
/// (reflectivity etc.), stored row-major in `extras`.
struct PointCloud {
  std::vector<Vec3> xyz;
  std::size_t num_extras = 0;
  std::vector<double> extras;

  std::size_t size() const { return xyz.size(); }
  bool empty() const { return xyz.empty(); }
  std::span<const double> extras_of(std::size_t i) const {
    return {extras.data() + i * num_extras, num_extras};
  }
  void push_back(const Vec3& p, std::span<const double> e = {});
};

/// Pinhole camera. Extrinsics map world to the camera frame (x right,
/// y down, z forward).
struct CameraModel {
  Mat3 intrinsics = Mat3::Identity();
  Mat4 extrinsics = Mat4::Identity();
  int width = 0;
  int height = 0;

  /// Camera at `position` looking along world yaw `yaw` with the image
  /// horizon parallel to the ground plane.
  static CameraModel looking_at_yaw(const Vec3& position, double yaw, double focal,
                                    int width, int height);
};

/// Positive focal entries, upper-triangular intrinsics, rotation block with
/// |det| = 1 (det = -1 is produced by mirror augmentation).
void validate(const CameraModel& cam);

struct Rect2D {
  double x_min = 0.0, y_min = 0.0, x_max = 0.0, y_max = 0.0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  bool contains(const Vec2& p) const {
    return p.x() >= x_min && p.x() <= x_max && p.y() >= y_min && p.y() <= y_max;
  }
};

struct Projection {
  double u = 0.0, v = 0.0;
  double depth = 0.0;
  bool valid = false;
};

/// Corner order: bottom face (z = -h/2) then top face (z = +h/2); within a
/// face, counterclockwise seen from above starting at (+l/2, +w/2):
/// (+,+), (-,+), (-,-), (+,-) in (box-x, box-y).
std::array<Vec3, 8> box_corners(const Box3D& box);

/// The box-frame offset of corner `i` before rotation and translation.
Vec3 corner_offset(const Box3D& box, int i);

/// BEV footprint corners (counterclockwise).
std::array<Vec2, 4> footprint(const Box3D& box);

/// Scales every extent by k; rejects k < 1.
Box3D expand_box(const Box3D& box, double k);

Vec3 world_to_box_frame(const Vec3& p, const Box3D& box);
Vec3 box_frame_to_world(const Vec3& p, const Box3D& box);

/// Boundary-inclusive containment.
bool contains(const Box3D& box, const Vec3& p);
std::vector<std::size_t> points_in_box(std::span<const Vec3> points, const Box3D& box);

/// Area of a convex polygon given in order (either orientation).
double polygon_area(std::span<const Vec2> poly);

/// Sutherland-Hodgman clip of `subject` against the convex `clip` polygon;
/// both counterclockwise.
std::vector<Vec2> clip_convex(std::span<const Vec2> subject, std::span<const Vec2> clip);

double footprint_intersection_area(const Box3D& a, const Box3D& b);
double iou_bev(const Box3D& a, const Box3D& b);
double iou_3d(const Box3D& a, const Box3D& b);

enum class IouMode { k3d, kBev };
double iou(const Box3D& a, const Box3D& b, IouMode mode);

Projection project_point(const CameraModel& cam, const Vec3& p);
std::vector<Projection> project_points(const CameraModel& cam, std::span<const Vec3> points);

/// Axis-aligned bounding rectangle; rejects empty input.
Rect2D min_circumscribed_rect(std::span<const Vec2> points);

}  // namespace roifuse::geometry
