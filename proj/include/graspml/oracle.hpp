#pragma once

#include <cmath>
#include <span>
#include <stdexcept>

#include "graspml/dataset.hpp"
#include "graspml/geometry.hpp"
#include "graspml/shapes.hpp"

namespace graspml {

struct OracleOptions {
  GripperModel gripper{};
  /// Allowed misalignment between each contact normal and the closing axis.
  double max_normal_angle = 20.0 * kPi / 180.0;
};

/// Why a grasp was accepted or rejected by the analytic oracle.
enum class OracleVerdict { success, off_object, too_wide, jaw_too_narrow, not_antipodal, collision };

inline OracleVerdict judge_grasp(const ShapeModel& shape, const Grid<double>& depth, const Grasp& g,
                                 const OracleOptions& opt = {}) {
  const Point dir = g.axis();
  const auto chord = chord_through(shape, g.center(), dir);
  if (!chord) return OracleVerdict::off_object;
  if (g.width > opt.gripper.max_opening) return OracleVerdict::too_wide;
  if (chord->lo < -g.width / 2.0 || chord->hi > g.width / 2.0) return OracleVerdict::jaw_too_narrow;
  const double tol = std::cos(opt.max_normal_angle);
  const bool aligned = dot(chord->normal_lo, Point{-dir.x, -dir.y}) >= tol && dot(chord->normal_hi, dir) >= tol &&
                       dot(chord->normal_lo, chord->normal_hi) <= -tol;
  if (!aligned) return OracleVerdict::not_antipodal;
  if (collision_check(g, depth, opt.gripper)) return OracleVerdict::collision;
  return OracleVerdict::success;
}

/// Exact grasp test on samples with analytic shape geometry.
inline bool analytic_oracle(const Sample& s, const Grasp& g, const OracleOptions& opt = {}) {
  if (!s.shape) throw std::invalid_argument("analytic_oracle: sample " + s.id + " has no shape metadata");
  return judge_grasp(*s.shape, s.depth, g, opt) == OracleVerdict::success;
}

/// Fallback for samples without shape metadata: success against the full label set.
inline bool label_proximity_oracle(const Sample& s, const Grasp& g, const SuccessCriterion& crit = {}) {
  if (s.labels.empty()) throw std::invalid_argument("label_proximity_oracle: sample " + s.id + " has no labels");
  return is_success(g, std::span<const Grasp>(s.labels), crit);
}

}  // namespace graspml
