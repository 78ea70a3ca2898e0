#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "graspml/geometry.hpp"
#include "graspml/grid.hpp"

namespace graspml {

/// Dense grasp configuration: quality, sin(2 phi), cos(2 phi) and normalized width per
/// pixel. A width value of 1 stands for `width_scale` pixels.
struct ConfigMaps {
  Grid<double> quality;
  Grid<double> sin2;
  Grid<double> cos2;
  Grid<double> width;
  double width_scale = kMaxGraspWidth;

  ConfigMaps() = default;
  explicit ConfigMaps(Shape s, double width_scale = kMaxGraspWidth)
      : quality(s.rows, s.cols), sin2(s.rows, s.cols), cos2(s.rows, s.cols), width(s.rows, s.cols),
        width_scale(width_scale) {
    if (!(width_scale > 0.0 && width_scale <= kMaxGraspWidth)) {
      throw std::invalid_argument("ConfigMaps: width_scale outside (0, 150]");
    }
  }

  Shape shape() const { return shape_of(quality); }

  /// Throws if the grids disagree in shape or leave their value ranges.
  void validate() const {
    require_same_shape(quality, sin2, "ConfigMaps");
    require_same_shape(quality, cos2, "ConfigMaps");
    require_same_shape(quality, width, "ConfigMaps");
    auto check = [](const Grid<double>& g, double lo, double hi, const char* name) {
      for (double v : g) {
        if (!(v >= lo && v <= hi)) throw std::domain_error(std::string("ConfigMaps: ") + name + " out of range");
      }
    };
    check(quality, 0.0, 1.0, "quality");
    check(sin2, -1.0, 1.0, "sin2");
    check(cos2, -1.0, 1.0, "cos2");
    check(width, 0.0, 1.0, "width");
  }

  Grasp grasp_at(std::size_t row, std::size_t col) const {
    const std::size_t i = row * quality.cols() + col;
    return Grasp{static_cast<double>(row), static_cast<double>(col),
                 normalize_angle(0.5 * std::atan2(sin2[i], cos2[i])),
                 std::clamp(width[i], 0.0, 1.0) * width_scale, std::clamp(quality[i], 0.0, 1.0)};
  }
};

/// Loss derivatives with respect to each map entry.
struct MapGradients {
  Grid<double> quality;
  Grid<double> sin2;
  Grid<double> cos2;
  Grid<double> width;

  MapGradients() = default;
  explicit MapGradients(Shape s)
      : quality(s.rows, s.cols), sin2(s.rows, s.cols), cos2(s.rows, s.cols), width(s.rows, s.cols) {}
};

inline Grid<double> recover_angle_map(const Grid<double>& sin2, const Grid<double>& cos2) {
  require_same_shape(sin2, cos2, "recover_angle_map");
  Grid<double> out(sin2.rows(), sin2.cols());
  for (std::size_t i = 0; i < out.size(); ++i) {
    // atan2(0, 0) is 0, which gives the documented convention for empty pixels.
    out[i] = 0.5 * std::atan2(sin2[i], cos2[i]);
  }
  return out;
}

/// Regression targets of one label at its center pixel.
struct SparseTarget {
  std::size_t index = 0;
  double sin2 = 0.0;
  double cos2 = 0.0;
  double width = 0.0;  // normalized by the maps' width_scale
};

inline std::size_t label_index(const Grasp& g, Shape shape) {
  const long r = g.pixel_row();
  const long c = g.pixel_col();
  if (r < 0 || c < 0 || r >= static_cast<long>(shape.rows) || c >= static_cast<long>(shape.cols)) {
    throw std::out_of_range("label center (" + std::to_string(r) + ", " + std::to_string(c) +
                            ") outside the image");
  }
  return static_cast<std::size_t>(r) * shape.cols + static_cast<std::size_t>(c);
}

inline SparseTarget sparse_target(const Grasp& g, Shape shape, double width_scale = kMaxGraspWidth) {
  return {label_index(g, shape), std::sin(2.0 * g.angle), std::cos(2.0 * g.angle),
          std::min(g.width / width_scale, 1.0)};
}

inline std::vector<SparseTarget> encode_labels_sparse(std::span<const Grasp> labels, Shape shape,
                                                      double width_scale = kMaxGraspWidth) {
  std::vector<SparseTarget> out;
  out.reserve(labels.size());
  for (const auto& g : labels) out.push_back(sparse_target(g, shape, width_scale));
  return out;
}

/// Calls fn(row, col) for every pixel whose center lies inside the rectangle.
template <typename Fn>
void for_each_pixel_in(const GraspRectangle& rect, Shape shape, Fn&& fn) {
  double x0 = rect.corners[0].x, x1 = x0, y0 = rect.corners[0].y, y1 = y0;
  for (const auto& p : rect.corners) {
    x0 = std::min(x0, p.x);
    x1 = std::max(x1, p.x);
    y0 = std::min(y0, p.y);
    y1 = std::max(y1, p.y);
  }
  const long r0 = std::max(0L, static_cast<long>(std::ceil(y0)));
  const long r1 = std::min(static_cast<long>(shape.rows) - 1, static_cast<long>(std::floor(y1)));
  const long c0 = std::max(0L, static_cast<long>(std::ceil(x0)));
  const long c1 = std::min(static_cast<long>(shape.cols) - 1, static_cast<long>(std::floor(x1)));
  for (long r = r0; r <= r1; ++r) {
    for (long c = c0; c <= c1; ++c) {
      if (rect.contains({static_cast<double>(c), static_cast<double>(r)})) {
        fn(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
      }
    }
  }
}

/// Footprint painted by the dense baseline: the central `footprint_ratio` of the grasp's
/// long axis times the full jaw height.
inline GraspRectangle label_footprint(const Grasp& g, double footprint_ratio, double height_ratio) {
  return oriented_rectangle(g.center(), g.axis(), footprint_ratio * g.width, height_ratio * g.width);
}

/// Dense targets for the image-wise MSE baseline. Unlabeled pixels are zero (treated as
/// failures); later labels overwrite earlier ones. The center pixel is always painted.
inline ConfigMaps encode_labels_dense(std::span<const Grasp> labels, Shape shape, double footprint_ratio = 1.0 / 3.0,
                                      double height_ratio = 0.5, double width_scale = kMaxGraspWidth) {
  ConfigMaps maps(shape, width_scale);
  for (const auto& g : labels) {
    const SparseTarget t = sparse_target(g, shape, width_scale);
    auto paint = [&](std::size_t i) {
      maps.quality[i] = 1.0;
      maps.sin2[i] = t.sin2;
      maps.cos2[i] = t.cos2;
      maps.width[i] = t.width;
    };
    paint(t.index);
    if (g.width > 0.0 && footprint_ratio > 0.0) {
      for_each_pixel_in(label_footprint(g, footprint_ratio, height_ratio), shape,
                        [&](std::size_t r, std::size_t c) { paint(r * shape.cols + c); });
    }
  }
  return maps;
}

/// Separable Gaussian blur; the kernel is renormalized where it overhangs the border.
inline Grid<double> gaussian_smooth(const Grid<double>& in, double sigma) {
  if (sigma <= 0.0) return in;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  for (int i = -radius; i <= radius; ++i) k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  const long rows = static_cast<long>(in.rows());
  const long cols = static_cast<long>(in.cols());
  Grid<double> tmp(in.rows(), in.cols());
  Grid<double> out(in.rows(), in.cols());
  for (long r = 0; r < rows; ++r) {
    for (long c = 0; c < cols; ++c) {
      double s = 0.0, w = 0.0;
      for (int d = -radius; d <= radius; ++d) {
        const long cc = c + d;
        if (cc < 0 || cc >= cols) continue;
        s += k[d + radius] * in(r, cc);
        w += k[d + radius];
      }
      tmp(r, c) = s / w;
    }
  }
  for (long r = 0; r < rows; ++r) {
    for (long c = 0; c < cols; ++c) {
      double s = 0.0, w = 0.0;
      for (int d = -radius; d <= radius; ++d) {
        const long rr = r + d;
        if (rr < 0 || rr >= rows) continue;
        s += k[d + radius] * tmp(rr, c);
        w += k[d + radius];
      }
      out(r, c) = s / w;
    }
  }
  return out;
}

struct ExtractOptions {
  double sigma = 2.0;
  double nms_radius = 10.0;
};

/// Top-k grasps at non-maximum-suppressed peaks of the smoothed quality map, sorted by
/// smoothed quality (ties: lowest flat index first). May return fewer than k.
inline std::vector<Grasp> extract_grasps(const ConfigMaps& maps, std::size_t k, const ExtractOptions& opt = {}) {
  if (k < 1) throw std::invalid_argument("extract_grasps: k must be >= 1");
  const Grid<double> q = gaussian_smooth(maps.quality, opt.sigma);
  const long rows = static_cast<long>(q.rows());
  const long cols = static_cast<long>(q.cols());

  std::vector<std::size_t> peaks;
  for (long r = 0; r < rows; ++r) {
    for (long c = 0; c < cols; ++c) {
      const double v = q(r, c);
      bool is_max = true;
      for (long dr = -1; dr <= 1 && is_max; ++dr) {
        for (long dc = -1; dc <= 1; ++dc) {
          if ((dr || dc) && q.contains(r + dr, c + dc) && q(r + dr, c + dc) > v) {
            is_max = false;
            break;
          }
        }
      }
      if (is_max) peaks.push_back(static_cast<std::size_t>(r * cols + c));
    }
  }
  std::stable_sort(peaks.begin(), peaks.end(), [&](std::size_t a, std::size_t b) { return q[a] > q[b]; });

  std::vector<Grasp> out;
  const double r2 = opt.nms_radius * opt.nms_radius;
  for (std::size_t idx : peaks) {
    const double pr = static_cast<double>(idx / cols);
    const double pc = static_cast<double>(idx % cols);
    const bool suppressed = std::any_of(out.begin(), out.end(), [&](const Grasp& g) {
      const double dr = g.center_row - pr, dc = g.center_col - pc;
      return dr * dr + dc * dc < r2;
    });
    if (suppressed) continue;
    Grasp g = maps.grasp_at(idx / cols, idx % cols);
    g.quality = std::clamp(q[idx], 0.0, 1.0);
    out.push_back(g);
    if (out.size() == k) break;
  }
  return out;
}

}  // namespace graspml
