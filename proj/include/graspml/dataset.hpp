#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "graspml/config_maps.hpp"
#include "graspml/geometry.hpp"
#include "graspml/grid.hpp"
#include "graspml/image_io.hpp"
#include "graspml/random.hpp"
#include "graspml/shapes.hpp"

namespace graspml {

/// One depth image with its successful grasp labels. Depth is in meters, larger = farther.
struct Sample {
  std::string id;
  Grid<double> depth;
  std::vector<Grasp> labels;
  double background = 1.0;
  /// Present for procedurally generated samples.
  std::optional<ShapeModel> shape;
  /// Object index per pixel (-1 = background); present for cluttered scenes and masks on disk.
  std::optional<Grid<int>> segments;
  std::string augmentation;

  Shape image_shape() const { return shape_of(depth); }
};

/// Gripper geometry shared by the collision test and the analytic oracle.
struct GripperModel {
  double finger_thickness = 10.0;  // pixels
  double approach_offset = 0.05;   // depth units below the highest point under the grasp
  double height_ratio = 0.5;       // jaw height relative to opening
  double max_opening = kMaxGraspWidth;
};

/// Relative margin under the background plane that still counts as background.
inline constexpr double kForegroundMarginRatio = 0.02;

inline double foreground_threshold(const Grid<double>& depth, double background) {
  const double nearest = *std::min_element(depth.begin(), depth.end());
  const double range = std::max(background - nearest, 1e-6);
  return background - kForegroundMarginRatio * range;
}

inline Grid<std::uint8_t> foreground_mask(const Sample& s) {
  Grid<std::uint8_t> m(s.depth.rows(), s.depth.cols());
  const double thr = foreground_threshold(s.depth, s.background);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = s.depth[i] < thr;
  return m;
}

/// Median depth along the image border.
inline double estimate_background(const Grid<double>& depth) {
  std::vector<double> border;
  const std::size_t r = depth.rows(), c = depth.cols();
  for (std::size_t x = 0; x < c; ++x) {
    border.push_back(depth(0, x));
    border.push_back(depth(r - 1, x));
  }
  for (std::size_t y = 1; y + 1 < r; ++y) {
    border.push_back(depth(y, 0));
    border.push_back(depth(y, c - 1));
  }
  std::nth_element(border.begin(), border.begin() + border.size() / 2, border.end());
  return border[border.size() / 2];
}

// ---------------------------------------------------------------------------------------
// Collision test

struct FingerFootprints {
  GraspRectangle left;
  GraspRectangle right;
};

inline FingerFootprints finger_footprints(const Grasp& g, const GripperModel& grip) {
  const Point u = g.axis();
  const double offset = g.width / 2.0 + grip.finger_thickness / 2.0;
  const double h = grip.height_ratio * g.width;
  return {oriented_rectangle(g.center() - offset * u, u, grip.finger_thickness, h),
          oriented_rectangle(g.center() + offset * u, u, grip.finger_thickness, h)};
}

/// True when either finger footprint would hit something above the approach depth, or
/// leaves the image.
inline bool collision_check(const Grasp& g, const Grid<double>& depth, const GripperModel& grip = {}) {
  const Shape shape = shape_of(depth);
  if (!(g.width > 0.0)) return true;
  double top = std::numeric_limits<double>::infinity();
  for_each_pixel_in(to_rectangle(g, grip.height_ratio), shape,
                    [&](std::size_t r, std::size_t c) { top = std::min(top, depth(r, c)); });
  if (!std::isfinite(top)) {
    if (!depth.contains(g.pixel_row(), g.pixel_col())) return true;
    top = depth(g.pixel_row(), g.pixel_col());
  }
  const double approach = top + grip.approach_offset;
  const auto fingers = finger_footprints(g, grip);
  for (const auto* rect : {&fingers.left, &fingers.right}) {
    for (const auto& p : rect->corners) {
      if (p.x < -0.5 || p.y < -0.5 || p.x > shape.cols - 0.5 || p.y > shape.rows - 0.5) return true;
    }
    bool hit = false;
    for_each_pixel_in(*rect, shape, [&](std::size_t r, std::size_t c) { hit = hit || depth(r, c) < approach; });
    if (hit) return true;
  }
  return false;
}

// ---------------------------------------------------------------------------------------
// Label subsets and augmentation

/// Uniform subset of min(k, available) labels, kept in their original order.
inline Sample downsample_labels(const Sample& s, std::size_t k, std::uint64_t seed) {
  if (s.labels.empty()) throw std::invalid_argument("downsample_labels: sample " + s.id + " has no labels");
  if (k >= s.labels.size()) return s;
  std::vector<std::size_t> idx(s.labels.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + rng.below(idx.size() - i)]);
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  Sample out = s;
  out.labels.clear();
  for (std::size_t i : idx) out.labels.push_back(s.labels[i]);
  return out;
}

inline Point image_center(Shape s) { return {(static_cast<double>(s.cols) - 1.0) / 2.0, (static_cast<double>(s.rows) - 1.0) / 2.0}; }

/// Warps depth with nearest-neighbour sampling; pixels mapped from outside the source
/// take `fill`.
inline Grid<double> warp_depth(const Grid<double>& src, const PlaneTransform& t, Shape out_shape, double fill) {
  Grid<double> out(out_shape.rows, out_shape.cols, fill);
  for (std::size_t r = 0; r < out_shape.rows; ++r) {
    for (std::size_t c = 0; c < out_shape.cols; ++c) {
      const Point q = t.invert({static_cast<double>(c), static_cast<double>(r)});
      const long sr = std::lround(q.y), sc = std::lround(q.x);
      if (src.contains(sr, sc)) out(r, c) = src(sr, sc);
    }
  }
  return out;
}

inline bool inside_frame(const Grasp& g, Shape s) {
  const long r = g.pixel_row(), c = g.pixel_col();
  return r >= 0 && c >= 0 && r < static_cast<long>(s.rows) && c < static_cast<long>(s.cols);
}

/// Applies a known transform to depth, labels and shape; labels leaving the frame are dropped.
inline Sample transform_sample(const Sample& s, const PlaneTransform& t) {
  Sample out;
  out.id = s.id;
  out.background = s.background;
  out.depth = t.is_identity() ? s.depth : warp_depth(s.depth, t, s.image_shape(), s.background);
  for (const auto& g : s.labels) {
    const Grasp m = t.apply(g);
    if (inside_frame(m, s.image_shape())) out.labels.push_back(m);
  }
  if (s.shape) out.shape = s.shape->transformed(t);
  std::ostringstream rec;
  rec << s.augmentation << (s.augmentation.empty() ? "" : ";") << "rot=" << t.theta << ",zoom=" << t.zoom;
  out.augmentation = rec.str();
  return out;
}

struct AugmentOptions {
  double jitter = 0.2;
  double zoom_min = 0.8;
  double zoom_max = 1.1;
};

inline PlaneTransform random_augmentation(Shape shape, Rng& rng, const AugmentOptions& opt = {}) {
  PlaneTransform t;
  t.theta = static_cast<double>(rng.below(4)) * kPi / 2.0 + rng.uniform(-opt.jitter, opt.jitter);
  t.zoom = rng.uniform(opt.zoom_min, opt.zoom_max);
  t.pivot = image_center(shape);
  return t;
}

/// Random right-angle rotation with jitter and zoom about the image center.
inline Sample augment(const Sample& s, std::uint64_t seed, const AugmentOptions& opt = {}) {
  Rng rng(seed);
  Sample out = transform_sample(s, random_augmentation(s.image_shape(), rng, opt));
  if (out.labels.empty()) throw std::runtime_error("augment: every label left the frame; resample");
  return out;
}

// ---------------------------------------------------------------------------------------
// Cluttered scenes

/// Where one source object lands in a composite scene.
struct Placement {
  std::size_t source = 0;
  double theta = 0.0;
  double zoom = 1.0;
  Point target{};  // image position of the source foreground centroid
};

struct Provenance {
  std::string source_id;
  PlaneTransform transform;
};

struct ClutterScene {
  Sample sample;
  std::vector<Grid<std::uint8_t>> masks;
  std::vector<Provenance> provenance;
};

inline Point foreground_centroid(const Sample& s) {
  const auto m = foreground_mask(s);
  double sr = 0.0, sc = 0.0, n = 0.0;
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) {
      if (m(r, c)) {
        sr += r;
        sc += c;
        n += 1.0;
      }
    }
  }
  if (n == 0.0) throw std::invalid_argument("sample " + s.id + " has no foreground segment");
  return {sc / n, sr / n};
}

inline PlaneTransform placement_transform(const Sample& src, const Placement& p) {
  PlaneTransform t;
  t.theta = p.theta;
  t.zoom = p.zoom;
  t.pivot = foreground_centroid(src);
  t.shift = p.target - t.pivot;
  return t;
}

/// Composites the placed objects by nearest surface, then keeps labels whose center is
/// still on their own object and that pass the collision test in the composite.
inline ClutterScene compose_clutter(std::span<const Sample> sources, std::span<const Placement> placements,
                                    const GripperModel& grip = {}) {
  if (placements.empty()) throw std::invalid_argument("compose_clutter: no placements");
  for (const auto& p : placements) {
    if (p.source >= sources.size()) throw std::out_of_range("compose_clutter: bad source index");
  }
  const Shape shape = sources[placements.front().source].image_shape();
  const double background = sources[placements.front().source].background;

  ClutterScene scene;
  Sample& out = scene.sample;
  out.background = background;
  out.depth = Grid<double>(shape.rows, shape.cols, background);
  Grid<int> owner(shape.rows, shape.cols, -1);
  bool all_shapes = true;
  std::vector<std::vector<Grasp>> moved(placements.size());

  for (std::size_t i = 0; i < placements.size(); ++i) {
    const Sample& src = sources[placements[i].source];
    if (src.image_shape() != shape) throw std::invalid_argument("compose_clutter: sources differ in size");
    const PlaneTransform t = placement_transform(src, placements[i]);
    const auto fg = foreground_mask(src);
    for (std::size_t r = 0; r < shape.rows; ++r) {
      for (std::size_t c = 0; c < shape.cols; ++c) {
        const Point q = t.invert({static_cast<double>(c), static_cast<double>(r)});
        const long sr = std::lround(q.y), sc = std::lround(q.x);
        if (!src.depth.contains(sr, sc) || !fg(sr, sc)) continue;
        const double d = src.depth(sr, sc) - src.background + background;
        if (d <= out.depth(r, c)) {
          out.depth(r, c) = d;
          owner(r, c) = static_cast<int>(i);
        }
      }
    }
    for (const auto& g : src.labels) moved[i].push_back(t.apply(g));
    if (src.shape) {
      if (!out.shape) out.shape = ShapeModel{};
      out.shape->append(src.shape->transformed(t));
    } else {
      all_shapes = false;
    }
    scene.provenance.push_back({src.id, t});
    out.id += (i ? "+" : "") + src.id;
  }
  if (!all_shapes) out.shape.reset();

  for (std::size_t i = 0; i < placements.size(); ++i) {
    for (const auto& g : moved[i]) {
      if (!inside_frame(g, shape)) continue;
      if (owner(g.pixel_row(), g.pixel_col()) != static_cast<int>(i)) continue;
      if (collision_check(g, out.depth, grip)) continue;
      out.labels.push_back(g);
    }
  }
  for (std::size_t i = 0; i < placements.size(); ++i) {
    Grid<std::uint8_t> m(shape.rows, shape.cols);
    for (std::size_t p = 0; p < m.size(); ++p) m[p] = owner[p] == static_cast<int>(i);
    scene.masks.push_back(std::move(m));
  }
  out.segments = std::move(owner);
  out.augmentation = "clutter";
  return scene;
}

struct ClutterOptions {
  double zoom_min = 0.8;
  double zoom_max = 1.1;
  /// Object centroids are drawn from this central fraction of the frame.
  double spread = 0.6;
  int max_retries = 10;
};

/// Random cluttered scene from `n_objects` source samples.
inline ClutterScene fuse_clutter(std::span<const Sample> sources, std::size_t n_objects, std::uint64_t seed,
                                 const GripperModel& grip = {}, const ClutterOptions& opt = {}) {
  if (sources.empty()) throw std::invalid_argument("fuse_clutter: no sources");
  if (n_objects < 1 || n_objects > 5) throw std::invalid_argument("fuse_clutter: n_objects must be in [1, 5]");
  Rng rng(seed);
  const Shape shape = sources.front().image_shape();
  for (int attempt = 0; attempt < opt.max_retries; ++attempt) {
    std::vector<Placement> placements;
    for (std::size_t i = 0; i < n_objects; ++i) {
      Placement p;
      p.source = rng.below(sources.size());
      p.theta = rng.uniform(-kPi, kPi);
      p.zoom = rng.uniform(opt.zoom_min, opt.zoom_max);
      const double lo = (1.0 - opt.spread) / 2.0;
      p.target = {rng.uniform(lo, 1.0 - lo) * (shape.cols - 1.0), rng.uniform(lo, 1.0 - lo) * (shape.rows - 1.0)};
      placements.push_back(p);
    }
    ClutterScene scene = compose_clutter(sources, placements, grip);
    if (!scene.sample.labels.empty()) return scene;
  }
  throw std::runtime_error("fuse_clutter: every label was pruned after " + std::to_string(opt.max_retries) +
                           " placements");
}

// ---------------------------------------------------------------------------------------
// On-disk format: <id>_depth.png (16-bit millimeters), <id>_grasps.txt with lines
// "x;y;theta_degrees;opening_px;jaw_px", optional <id>_mask.png and <id>_shape.txt.

/// Parses one label line. Image x is the column, y the row; theta is clockwise-positive
/// degrees as displayed, hence the sign flip.
inline Grasp parse_label_line(const std::string& line, std::size_t line_no, const std::string& file) {
  std::vector<double> v;
  std::stringstream ss(line);
  std::string item;
  while (std::getline(ss, item, ';')) {
    if (item.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      std::size_t used = 0;
      v.push_back(std::stod(item, &used));
    } catch (const std::exception&) {
      throw std::runtime_error(file + ":" + std::to_string(line_no) + ": malformed number '" + item + "'");
    }
  }
  if (v.size() != 5) {
    throw std::runtime_error(file + ":" + std::to_string(line_no) + ": expected 5 fields, found " +
                             std::to_string(v.size()));
  }
  return make_grasp(v[1], v[0], -v[2] * kPi / 180.0, std::clamp(v[3], 0.0, kMaxGraspWidth), 1.0);
}

inline std::vector<Grasp> parse_labels(std::istream& in, const std::string& file) {
  std::vector<Grasp> out;
  std::string line;
  for (std::size_t no = 1; std::getline(in, line); ++no) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(parse_label_line(line, no, file));
  }
  return out;
}

inline std::string format_label_line(const Grasp& g, double height_ratio = 0.5) {
  std::ostringstream o;
  o << std::setprecision(10) << g.center_col << ';' << g.center_row << ';' << -g.angle * 180.0 / kPi << ';'
    << g.width << ';' << g.width * height_ratio;
  return o.str();
}

inline void write_shape(std::ostream& o, const ShapeModel& s, double background) {
  o << std::setprecision(17) << "kind " << s.kind << "\nbackground " << background << "\n";
  for (const auto& part : s.parts) {
    o << "part " << part.size();
    for (const auto& p : part) o << ' ' << p.x << ' ' << p.y;
    o << '\n';
  }
}

inline ShapeModel read_shape(std::istream& in, double& background) {
  ShapeModel s;
  std::string tag;
  while (in >> tag) {
    if (tag == "kind") in >> s.kind;
    else if (tag == "background") in >> background;
    else if (tag == "part") {
      std::size_t n = 0;
      in >> n;
      ConvexPolygon poly(n);
      for (auto& p : poly) in >> p.x >> p.y;
      s.parts.push_back(std::move(poly));
    } else {
      throw std::runtime_error("shape file: unknown tag '" + tag + "'");
    }
    if (!in) throw std::runtime_error("shape file: truncated");
  }
  return s;
}

inline Sample load_sample(const std::filesystem::path& dir, const std::string& id) {
  const auto depth_path = dir / (id + "_depth.png");
  const auto label_path = dir / (id + "_grasps.txt");
  if (!std::filesystem::exists(depth_path)) throw std::runtime_error("missing depth image " + depth_path.string());
  Sample s;
  s.id = id;
  const auto raw = read_png_gray16(depth_path);
  s.depth = Grid<double>(raw.rows(), raw.cols());
  for (std::size_t i = 0; i < raw.size(); ++i) s.depth[i] = raw[i] / 1000.0;
  s.background = estimate_background(s.depth);

  std::ifstream lf(label_path);
  if (!lf) throw std::runtime_error("missing label file " + label_path.string());
  s.labels = parse_labels(lf, label_path.string());

  const auto mask_path = dir / (id + "_mask.png");
  if (std::filesystem::exists(mask_path)) {
    const auto m = read_png_gray16(mask_path);
    if (m.rows() != s.depth.rows() || m.cols() != s.depth.cols()) throw std::runtime_error("mask size mismatch");
    Grid<int> seg(m.rows(), m.cols());
    for (std::size_t i = 0; i < m.size(); ++i) seg[i] = static_cast<int>(m[i]) - 1;
    s.segments = std::move(seg);
  }
  const auto shape_path = dir / (id + "_shape.txt");
  if (std::filesystem::exists(shape_path)) {
    std::ifstream sf(shape_path);
    s.shape = read_shape(sf, s.background);
  }
  return s;
}

inline void save_sample(const std::filesystem::path& dir, const Sample& s) {
  std::filesystem::create_directories(dir);
  Grid<std::uint16_t> mm(s.depth.rows(), s.depth.cols());
  for (std::size_t i = 0; i < mm.size(); ++i) {
    mm[i] = static_cast<std::uint16_t>(std::clamp(std::lround(s.depth[i] * 1000.0), 0L, 65535L));
  }
  write_png16(dir / (s.id + "_depth.png"), mm);
  std::ofstream lf(dir / (s.id + "_grasps.txt"));
  for (const auto& g : s.labels) lf << format_label_line(g) << '\n';
  if (!lf) throw std::runtime_error("cannot write labels for " + s.id);
  if (s.segments) {
    Grid<std::uint16_t> m(s.depth.rows(), s.depth.cols());
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = static_cast<std::uint16_t>((*s.segments)[i] + 1);
    write_png16(dir / (s.id + "_mask.png"), m);
  }
  if (s.shape) {
    std::ofstream sf(dir / (s.id + "_shape.txt"));
    write_shape(sf, *s.shape, s.background);
  }
}

enum class Split { train, val };

struct ManifestEntry {
  std::string id;
  Split split = Split::train;
};

inline void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream o(path);
  if (!o) throw std::runtime_error("cannot write manifest " + path.string());
  for (const auto& e : entries) o << e.id << ' ' << (e.split == Split::train ? "train" : "val") << '\n';
}

inline std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read manifest " + path.string());
  std::vector<ManifestEntry> out;
  std::string line;
  for (std::size_t no = 1; std::getline(in, line); ++no) {
    std::istringstream ls(line);
    std::string id, split;
    if (!(ls >> id)) continue;
    if (!(ls >> split) || (split != "train" && split != "val")) {
      throw std::runtime_error(path.string() + ":" + std::to_string(no) + ": expected '<id> train|val'");
    }
    out.push_back({id, split == "train" ? Split::train : Split::val});
  }
  return out;
}

}  // namespace graspml
