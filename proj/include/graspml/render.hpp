#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>

#include "graspml/config_maps.hpp"
#include "graspml/image_io.hpp"

namespace graspml {

inline Grid<std::uint8_t> to_gray8(const Grid<double>& g, double lo, double hi) {
  Grid<std::uint8_t> out(g.rows(), g.cols());
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double t = std::clamp((g[i] - lo) / (hi - lo), 0.0, 1.0);
    out[i] = static_cast<std::uint8_t>(std::lround(255.0 * t));
  }
  return out;
}

inline void draw_line(RgbImage& img, Point a, Point b, std::array<std::uint8_t, 3> rgb) {
  const double len = std::hypot(b.x - a.x, b.y - a.y);
  const int steps = std::max(1, static_cast<int>(std::ceil(2.0 * len)));
  for (int i = 0; i <= steps; ++i) {
    const double t = static_cast<double>(i) / steps;
    img.set(std::lround(a.y + t * (b.y - a.y)), std::lround(a.x + t * (b.x - a.x)), rgb);
  }
}

/// Grasp drawn as its closing line plus the two jaw segments.
inline void draw_grasp(RgbImage& img, const Grasp& g, std::array<std::uint8_t, 3> rgb, double height_ratio = 0.5) {
  const Point c = g.center(), u = g.axis(), n{-u.y, u.x};
  const Point l = c - (g.width / 2.0) * u, r = c + (g.width / 2.0) * u;
  const double h = height_ratio * g.width / 2.0;
  draw_line(img, l, r, rgb);
  draw_line(img, l - h * n, l + h * n, rgb);
  draw_line(img, r - h * n, r + h * n, rgb);
}

/// Depth in gray with quality blended in red; grasps drawn on top, best in green.
inline RgbImage quality_overlay(const Grid<double>& depth, const ConfigMaps& maps, std::span<const Grasp> grasps) {
  const double lo = *std::min_element(depth.begin(), depth.end());
  const double hi = *std::max_element(depth.begin(), depth.end());
  const auto gray = to_gray8(depth, lo, hi > lo ? hi : lo + 1.0);
  RgbImage img(depth.rows(), depth.cols());
  for (std::size_t r = 0; r < depth.rows(); ++r) {
    for (std::size_t c = 0; c < depth.cols(); ++c) {
      const double q = std::clamp(maps.quality(r, c), 0.0, 1.0);
      const double v = gray(r, c);
      img.set(static_cast<long>(r), static_cast<long>(c),
              {static_cast<std::uint8_t>(std::lround((1 - q) * v + q * 255.0)),
               static_cast<std::uint8_t>(std::lround((1 - q) * v)), static_cast<std::uint8_t>(std::lround((1 - q) * v))});
    }
  }
  for (std::size_t i = grasps.size(); i-- > 0;) {
    draw_grasp(img, grasps[i], i == 0 ? std::array<std::uint8_t, 3>{0, 220, 0} : std::array<std::uint8_t, 3>{40, 120, 255});
  }
  return img;
}

/// Writes `<id>_q.png`, `<id>_sin2.png`, `<id>_cos2.png`, `<id>_width.png` and `<id>_overlay.png`.
inline void write_heatmaps(const std::filesystem::path& dir, const std::string& id, const Grid<double>& depth,
                           const ConfigMaps& maps, std::span<const Grasp> grasps) {
  std::filesystem::create_directories(dir);
  write_png8(dir / (id + "_q.png"), to_gray8(maps.quality, 0.0, 1.0));
  write_png8(dir / (id + "_sin2.png"), to_gray8(maps.sin2, -1.0, 1.0));
  write_png8(dir / (id + "_cos2.png"), to_gray8(maps.cos2, -1.0, 1.0));
  write_png8(dir / (id + "_width.png"), to_gray8(maps.width, 0.0, 1.0));
  write_png_rgb(dir / (id + "_overlay.png"), quality_overlay(depth, maps, grasps));
}

}  // namespace graspml
