#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "graspml/dataset.hpp"
#include "graspml/oracle.hpp"
#include "graspml/random.hpp"
#include "graspml/shapes.hpp"

namespace graspml {

enum class ToyKind { bar, tee, ell, disc };

inline const char* to_string(ToyKind k) {
  switch (k) {
    case ToyKind::bar: return "bar";
    case ToyKind::tee: return "tee";
    case ToyKind::ell: return "ell";
    case ToyKind::disc: return "disc";
  }
  return "?";
}

/// Procedural single-object depth images. Lengths are given for a 300 px frame and scale
/// with `image_size`.
struct ToyOptions {
  std::size_t image_size = 300;
  std::size_t max_labels = 16;
  double clearance = 10.0;
  double background = 1.0;
  double object_depth = 0.9;
  GripperModel gripper{};
  std::vector<ToyKind> kinds{ToyKind::bar, ToyKind::tee, ToyKind::ell, ToyKind::disc};
  int label_attempts = 600;

  double scale() const { return static_cast<double>(image_size) / 300.0; }
};

/// Gripper with its pixel dimensions resized to a frame `scale` times the reference one.
inline GripperModel scaled_gripper(GripperModel g, double scale) {
  g.finger_thickness *= scale;
  g.max_opening = std::min(g.max_opening * scale, kMaxGraspWidth);
  return g;
}

inline GripperModel effective_gripper(const ToyOptions& opt) { return scaled_gripper(opt.gripper, opt.scale()); }

namespace detail {

// Shapes are built around the origin, then placed by a rotation and a shift.
inline ShapeModel toy_shape(ToyKind kind, Rng& rng, double s) {
  ShapeModel m;
  m.kind = to_string(kind);
  const Point ax{1.0, 0.0};
  switch (kind) {
    case ToyKind::bar:
      m.parts.push_back(rectangle_polygon({0, 0}, ax, rng.uniform(120, 200) * s, rng.uniform(30, 60) * s));
      break;
    case ToyKind::tee: {
      const double bar_len = rng.uniform(110, 170) * s, bar_w = rng.uniform(25, 40) * s;
      const double stem_len = rng.uniform(60, 110) * s, stem_w = rng.uniform(25, 40) * s;
      m.parts.push_back(rectangle_polygon({0, 0}, ax, bar_len, bar_w));
      m.parts.push_back(rectangle_polygon({0, bar_w / 2 + stem_len / 2}, ax, stem_w, stem_len + 1e-3));
      break;
    }
    case ToyKind::ell: {
      const double a_len = rng.uniform(90, 150) * s, b_len = rng.uniform(70, 120) * s;
      const double w = rng.uniform(25, 40) * s;
      m.parts.push_back(rectangle_polygon({0, 0}, ax, a_len, w));
      m.parts.push_back(rectangle_polygon({-a_len / 2 + w / 2, w / 2 + b_len / 2}, ax, w, b_len + 1e-3));
      break;
    }
    case ToyKind::disc: {
      const double r = rng.uniform(55, 100) * s;
      const double sep = rng.uniform(50, std::min(2 * r - 20 * s, 120 * s));
      m.parts.push_back(flatted_disc_polygon({0, 0}, r, {0, 1}, sep));
      break;
    }
  }
  return m;
}

inline bool inside_with_margin(const ShapeModel& m, double size, double margin) {
  for (const auto& part : m.parts) {
    for (const auto& p : part) {
      if (p.x < margin || p.y < margin || p.x > size - 1 - margin || p.y > size - 1 - margin) return false;
    }
  }
  return true;
}

inline double grasp_angle_of(Point dir) { return normalize_angle(std::atan2(-dir.y, dir.x)); }

// Closing direction of a part: across its two longest (parallel) edges, so that every
// object point has one grasp orientation.
inline Point candidate_axis(const ConvexPolygon& part) {
  std::size_t best = 0;
  double best_len = -1.0;
  for (std::size_t i = 0; i < part.size(); ++i) {
    const Point e = part[(i + 1) % part.size()] - part[i];
    if (std::hypot(e.x, e.y) > best_len) best_len = std::hypot(e.x, e.y), best = i;
  }
  const Point e = part[(best + 1) % part.size()] - part[best];
  return {e.y / best_len, -e.x / best_len};
}

}  // namespace detail

inline Grid<double> render_depth(const ShapeModel& shape, std::size_t size, double background, double object_depth) {
  Grid<double> d(size, size, background);
  for (std::size_t r = 0; r < size; ++r) {
    for (std::size_t c = 0; c < size; ++c) {
      if (shape.contains({static_cast<double>(c), static_cast<double>(r)})) d(r, c) = object_depth;
    }
  }
  return d;
}

/// Antipodal labels for a rendered toy object: random points on the object, closed across
/// the part they lie on, centered on the chord and opened by the clearance. Candidates failing
/// the analytic oracle are discarded.
inline std::vector<Grasp> toy_labels(const Sample& s, Rng& rng, const ToyOptions& opt) {
  const ShapeModel& shape = *s.shape;
  const OracleOptions oracle{effective_gripper(opt)};
  const double clearance = opt.clearance * opt.scale();
  std::vector<Grasp> labels;
  for (int attempt = 0; attempt < opt.label_attempts && labels.size() < opt.max_labels; ++attempt) {
    const auto& part = shape.parts[rng.below(shape.parts.size())];
    double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
    for (const auto& p : part) {
      x0 = std::min(x0, p.x), x1 = std::max(x1, p.x), y0 = std::min(y0, p.y), y1 = std::max(y1, p.y);
    }
    const Point origin{rng.uniform(x0, x1), rng.uniform(y0, y1)};
    if (!shape.contains(origin)) continue;
    const Point dir = detail::candidate_axis(part);
    const auto chord = chord_through(shape, origin, dir);
    if (!chord) continue;
    const Point center = origin + (0.5 * (chord->lo + chord->hi)) * dir;
    const double width = chord->hi - chord->lo + clearance;
    if (width > oracle.gripper.max_opening) continue;
    const Grasp g = make_grasp(center.y, center.x, detail::grasp_angle_of(dir), width, 1.0);
    if (!inside_frame(g, s.image_shape())) continue;
    const long pr = g.pixel_row(), pc = g.pixel_col();
    if (!(s.depth(pr, pc) < s.background)) continue;
    if (!analytic_oracle(s, g, oracle)) continue;
    labels.push_back(g);
  }
  return labels;
}

/// Renders an already placed object and labels it; the result may have no labels.
inline Sample make_toy_sample(const ShapeModel& placed, Rng& rng, const ToyOptions& opt, const std::string& id) {
  Sample out;
  out.id = id;
  out.background = opt.background;
  out.shape = placed;
  out.depth = render_depth(placed, opt.image_size, opt.background, opt.object_depth);
  out.labels = toy_labels(out, rng, opt);
  return out;
}

/// One toy sample; retries placement until the object yields at least one label.
inline Sample gen_toy_sample(std::uint64_t seed, const ToyOptions& opt, const std::string& id) {
  Rng rng(seed);
  const double s = opt.scale();
  const double size = static_cast<double>(opt.image_size);
  for (int attempt = 0; attempt < 100; ++attempt) {
    const ToyKind kind = opt.kinds[rng.below(opt.kinds.size())];
    const ShapeModel local = detail::toy_shape(kind, rng, s);
    PlaneTransform t;
    t.theta = rng.uniform(-kPi, kPi);
    const double spread = 0.25 * size;
    t.shift = {size / 2 + rng.uniform(-spread, spread), size / 2 + rng.uniform(-spread, spread)};
    const ShapeModel placed = local.transformed(t);
    if (!detail::inside_with_margin(placed, size, 4.0 * s)) continue;
    Sample out = make_toy_sample(placed, rng, opt, id);
    if (!out.labels.empty()) return out;
  }
  throw std::runtime_error("gen_toy_sample: could not place a graspable object for " + id);
}

inline std::string toy_id(std::size_t i) {
  std::ostringstream o;
  o << "toy" << std::setw(5) << std::setfill('0') << i;
  return o.str();
}

/// `n` independent toy samples, deterministic per seed.
inline std::vector<Sample> gen_toy_dataset(std::size_t n, std::uint64_t seed, const ToyOptions& opt = {}) {
  if (n < 1) throw std::invalid_argument("gen_toy_dataset: n must be at least 1");
  if (opt.kinds.empty()) throw std::invalid_argument("gen_toy_dataset: no object kinds enabled");
  std::vector<Sample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(gen_toy_sample(derive_seed(seed, i), opt, toy_id(i)));
  return out;
}

}  // namespace graspml
