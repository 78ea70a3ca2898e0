#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "graspml/geometry.hpp"

namespace graspml {

/// Similarity transform of the image plane: rotate by `theta` (counterclockwise on a
/// displayed image) and scale by `zoom` about `pivot`, then translate by `shift`.
struct PlaneTransform {
  double theta = 0.0;
  double zoom = 1.0;
  Point pivot{};
  Point shift{};

  Point apply(Point p) const {
    const double dx = p.x - pivot.x;
    const double dy = pivot.y - p.y;  // y axis pointing up
    const double c = std::cos(theta), s = std::sin(theta);
    const double rx = c * dx - s * dy;
    const double ry = s * dx + c * dy;
    return {pivot.x + zoom * rx + shift.x, pivot.y - zoom * ry + shift.y};
  }

  Point invert(Point q) const {
    const double rx = (q.x - shift.x - pivot.x) / zoom;
    const double ry = (pivot.y - (q.y - shift.y)) / zoom;
    const double c = std::cos(theta), s = std::sin(theta);
    const double dx = c * rx + s * ry;
    const double dy = -s * rx + c * ry;
    return {pivot.x + dx, pivot.y - dy};
  }

  /// Grasp under the transform; width is scaled and clipped to the gripper range.
  Grasp apply(const Grasp& g) const {
    const Point c = apply(g.center());
    return Grasp{c.y, c.x, normalize_angle(g.angle + theta), std::clamp(g.width * zoom, 0.0, kMaxGraspWidth),
                 g.quality};
  }

  bool is_identity() const { return theta == 0.0 && zoom == 1.0 && shift.x == 0.0 && shift.y == 0.0; }
};

using ConvexPolygon = std::vector<Point>;

/// Analytic object geometry: a union of convex polygons (positive orientation) in image
/// coordinates. Kept for procedurally generated samples so grasps can be judged exactly.
struct ShapeModel {
  std::string kind;
  std::vector<ConvexPolygon> parts;

  bool contains(Point p) const {
    return std::any_of(parts.begin(), parts.end(), [&](const ConvexPolygon& poly) {
      for (std::size_t i = 0; i < poly.size(); ++i) {
        if (cross(poly[(i + 1) % poly.size()] - poly[i], p - poly[i]) < 0.0) return false;
      }
      return true;
    });
  }

  ShapeModel transformed(const PlaneTransform& t) const {
    ShapeModel out{kind, parts};
    for (auto& poly : out.parts) {
      for (auto& p : poly) p = t.apply(p);
    }
    return out;
  }

  void append(const ShapeModel& other) {
    parts.insert(parts.end(), other.parts.begin(), other.parts.end());
    if (kind.empty()) kind = other.kind;
    else if (kind != other.kind) kind = "mixed";
  }
};

/// The solid span of a shape along a line, with outward unit normals at both ends.
struct Chord {
  double lo = 0.0;
  double hi = 0.0;
  Point normal_lo{};
  Point normal_hi{};
};

namespace detail {

struct PartSpan {
  double t0, t1;
  Point n0, n1;
};

// Cyrus-Beck clip of the line origin + t * dir against one convex polygon.
inline std::optional<PartSpan> clip_line(const ConvexPolygon& poly, Point origin, Point dir) {
  double t0 = -1e300, t1 = 1e300;
  Point n0{}, n1{};
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Point a = poly[i];
    const Point e = poly[(i + 1) % poly.size()] - a;
    const double len = std::hypot(e.x, e.y);
    if (len == 0.0) continue;
    const Point outward{e.y / len, -e.x / len};
    const double denom = dot(outward, dir);
    const double num = dot(outward, origin - a);
    if (std::fabs(denom) < 1e-15) {
      if (num > 0.0) return std::nullopt;
      continue;
    }
    const double t = -num / denom;
    if (denom < 0.0) {
      if (t > t0) {
        t0 = t;
        n0 = outward;
      }
    } else if (t < t1) {
      t1 = t;
      n1 = outward;
    }
  }
  if (t0 > t1) return std::nullopt;
  return PartSpan{t0, t1, n0, n1};
}

}  // namespace detail

/// Connected solid interval of the shape along `dir` through `origin`; empty when the
/// origin is outside the shape.
inline std::optional<Chord> chord_through(const ShapeModel& shape, Point origin, Point dir) {
  std::vector<detail::PartSpan> spans;
  for (const auto& poly : shape.parts) {
    if (auto s = detail::clip_line(poly, origin, dir)) spans.push_back(*s);
  }
  std::optional<Chord> chord;
  for (const auto& s : spans) {
    if (s.t0 <= 0.0 && s.t1 >= 0.0) {
      if (!chord) chord = Chord{s.t0, s.t1, s.n0, s.n1};
      if (s.t0 < chord->lo) chord->lo = s.t0, chord->normal_lo = s.n0;
      if (s.t1 > chord->hi) chord->hi = s.t1, chord->normal_hi = s.n1;
    }
  }
  if (!chord) return std::nullopt;
  for (bool grown = true; grown;) {
    grown = false;
    for (const auto& s : spans) {
      if (s.t0 < chord->lo && s.t1 >= chord->lo - 1e-9) {
        chord->lo = s.t0;
        chord->normal_lo = s.n0;
        grown = true;
      }
      if (s.t1 > chord->hi && s.t0 <= chord->hi + 1e-9) {
        chord->hi = s.t1;
        chord->normal_hi = s.n1;
        grown = true;
      }
    }
  }
  return chord;
}

inline ConvexPolygon rectangle_polygon(Point center, Point axis, double length, double breadth) {
  const auto r = oriented_rectangle(center, axis, length, breadth);
  return {r.corners.begin(), r.corners.end()};
}

/// Disc of radius `radius` cut by two parallel flats `separation` apart, perpendicular to
/// `flat_normal`.
inline ConvexPolygon flatted_disc_polygon(Point center, double radius, Point flat_normal, double separation,
                                          int segments = 96) {
  std::vector<Point> circle;
  for (int i = 0; i < segments; ++i) {
    const double a = 2.0 * kPi * i / segments;
    circle.push_back({center.x + radius * std::cos(a), center.y + radius * std::sin(a)});
  }
  if (detail::polygon_area(circle) < 0.0) std::reverse(circle.begin(), circle.end());
  const double h = separation / 2.0;
  const double far = 4.0 * radius;
  // Slab |(p - center) . flat_normal| <= h, as a long rectangle.
  const ConvexPolygon slab = rectangle_polygon(center, flat_normal, 2.0 * h, 2.0 * far);
  return clip_convex(circle, slab);
}

}  // namespace graspml
