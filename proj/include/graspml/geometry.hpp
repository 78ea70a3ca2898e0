#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

namespace graspml {

inline constexpr double kPi = std::numbers::pi;
/// Largest gripper opening in pixels; widths are normalized by this constant.
inline constexpr double kMaxGraspWidth = 150.0;

/// Image-plane point with x = column and y = row.
struct Point {
  double x = 0.0;
  double y = 0.0;
  friend Point operator+(Point a, Point b) { return {a.x + b.x, a.y + b.y}; }
  friend Point operator-(Point a, Point b) { return {a.x - b.x, a.y - b.y}; }
  friend Point operator*(double s, Point a) { return {s * a.x, s * a.y}; }
};

inline double cross(Point a, Point b) { return a.x * b.y - a.y * b.x; }
inline double dot(Point a, Point b) { return a.x * b.x + a.y * b.y; }

/// Maps an angle onto [-pi/2, pi/2]; antipodal grasps are pi-periodic.
inline double normalize_angle(double angle) {
  if (!std::isfinite(angle)) throw std::invalid_argument("normalize_angle: non-finite angle");
  double a = std::fmod(angle + kPi / 2.0, kPi);
  if (a < 0.0) a += kPi;
  return a - kPi / 2.0;
}

/// Symmetry-aware distance between two grasp orientations, in [0, pi/2].
inline double angle_diff(double a, double b) {
  if (!std::isfinite(a) || !std::isfinite(b)) throw std::invalid_argument("angle_diff: non-finite angle");
  double d = std::fmod(std::fabs(a - b), kPi);
  return std::min(d, kPi - d);
}

/// Planar grasp. The closing axis points along (cos angle, -sin angle) in (col, row)
/// coordinates, i.e. angles increase counterclockwise on a displayed image.
struct Grasp {
  double center_row = 0.0;
  double center_col = 0.0;
  double angle = 0.0;
  double width = 0.0;
  double quality = 1.0;

  Point center() const { return {center_col, center_row}; }
  Point axis() const { return {std::cos(angle), -std::sin(angle)}; }
  Point normal() const { return {std::sin(angle), std::cos(angle)}; }
  long pixel_row() const { return std::lround(center_row); }
  long pixel_col() const { return std::lround(center_col); }
};

/// Builds a grasp with the angle normalized and ranges checked.
inline Grasp make_grasp(double row, double col, double angle, double width, double quality = 1.0) {
  if (!std::isfinite(row) || !std::isfinite(col)) throw std::invalid_argument("grasp: non-finite center");
  if (!(width >= 0.0 && width <= kMaxGraspWidth)) throw std::invalid_argument("grasp: width outside [0, 150]");
  if (!(quality >= 0.0 && quality <= 1.0)) throw std::invalid_argument("grasp: quality outside [0, 1]");
  return Grasp{row, col, normalize_angle(angle), width, quality};
}

/// Four corners with positive signed area in (x = col, y = row) coordinates.
struct GraspRectangle {
  std::array<Point, 4> corners{};

  double area() const {
    double s = 0.0;
    for (std::size_t i = 0; i < 4; ++i) s += cross(corners[i], corners[(i + 1) % 4]);
    return 0.5 * s;
  }
  Point center() const {
    Point c{};
    for (const auto& p : corners) c = c + 0.25 * p;
    return c;
  }
  /// True when the point lies inside or on the boundary.
  bool contains(Point p) const {
    for (std::size_t i = 0; i < 4; ++i) {
      if (cross(corners[(i + 1) % 4] - corners[i], p - corners[i]) < -1e-12) return false;
    }
    return true;
  }
};

/// Oriented rectangle centered at `center`, with side `length` along `axis` and `breadth`
/// along the perpendicular.
inline GraspRectangle oriented_rectangle(Point center, Point axis, double length, double breadth) {
  const Point normal{-axis.y, axis.x};
  const Point a = (length / 2.0) * axis;
  const Point b = (breadth / 2.0) * normal;
  GraspRectangle r{{center + a + b, center - a + b, center - a - b, center + a - b}};
  if (r.area() < 0.0) std::swap(r.corners[1], r.corners[3]);
  return r;
}

inline GraspRectangle to_rectangle(const Grasp& g, double height_ratio = 0.5) {
  if (!(height_ratio > 0.0)) throw std::invalid_argument("to_rectangle: height_ratio must be positive");
  if (!(g.width > 0.0)) throw std::invalid_argument("to_rectangle: zero-width grasp is degenerate");
  return oriented_rectangle(g.center(), g.axis(), g.width, height_ratio * g.width);
}

namespace detail {

inline double polygon_area(const std::vector<Point>& poly) {
  double s = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i) s += cross(poly[i], poly[(i + 1) % poly.size()]);
  return 0.5 * s;
}

// Sutherland-Hodgman clipping of `subject` against one half-plane (left of a->b).
inline std::vector<Point> clip_half_plane(const std::vector<Point>& subject, Point a, Point b) {
  std::vector<Point> out;
  if (subject.empty()) return out;
  const Point e = b - a;
  auto side = [&](Point p) { return cross(e, p - a); };
  for (std::size_t i = 0; i < subject.size(); ++i) {
    const Point cur = subject[i];
    const Point nxt = subject[(i + 1) % subject.size()];
    const double sc = side(cur);
    const double sn = side(nxt);
    if (sc >= 0.0) out.push_back(cur);
    if ((sc >= 0.0) != (sn >= 0.0)) {
      const double t = sc / (sc - sn);
      out.push_back(cur + t * (nxt - cur));
    }
  }
  return out;
}

}  // namespace detail

/// Intersection of two convex polygons with positive orientation.
inline std::vector<Point> clip_convex(std::vector<Point> subject, std::span<const Point> clip) {
  for (std::size_t i = 0; i < clip.size() && !subject.empty(); ++i) {
    subject = detail::clip_half_plane(subject, clip[i], clip[(i + 1) % clip.size()]);
  }
  return subject;
}

inline double rect_iou(const GraspRectangle& a, const GraspRectangle& b) {
  const double area_a = a.area();
  const double area_b = b.area();
  if (!(area_a > 1e-12) || !(area_b > 1e-12)) throw std::invalid_argument("rect_iou: degenerate rectangle");
  const auto inter = clip_convex(std::vector<Point>(a.corners.begin(), a.corners.end()), b.corners);
  const double ia = inter.size() < 3 ? 0.0 : std::max(0.0, detail::polygon_area(inter));
  const double iou = ia / (area_a + area_b - ia);
  return std::clamp(iou, 0.0, 1.0);
}

/// Match rule between a predicted grasp and ground-truth labels.
struct SuccessCriterion {
  double min_iou = 0.25;
  double max_angle = kPi / 6.0;
  double height_ratio = 0.5;
};

inline bool is_success(const Grasp& pred, std::span<const Grasp> labels, const SuccessCriterion& crit = {}) {
  if (labels.empty()) throw std::invalid_argument("is_success: empty label list");
  if (!(pred.width > 0.0)) return false;
  const auto pr = to_rectangle(pred, crit.height_ratio);
  for (const auto& l : labels) {
    if (angle_diff(pred.angle, l.angle) > crit.max_angle) continue;
    if (rect_iou(pr, to_rectangle(l, crit.height_ratio)) >= crit.min_iou) return true;
  }
  return false;
}

}  // namespace graspml
