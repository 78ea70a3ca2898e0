#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "graspml/geometry.hpp"

using namespace graspml;

namespace {

// Point-in-rectangle by projection onto the rectangle's own axes.
struct RectOracle {
  Point c, u;
  double length, breadth;
  bool inside(Point p) const {
    const Point d = p - c;
    const Point n{-u.y, u.x};
    return std::fabs(dot(d, u)) <= length / 2 && std::fabs(dot(d, n)) <= breadth / 2;
  }
};

RectOracle oracle_of(const Grasp& g, double ratio = 0.5) {
  return {g.center(), {std::cos(g.angle), -std::sin(g.angle)}, g.width, ratio * g.width};
}

double raster_iou(const RectOracle& a, const RectOracle& b, double step = 0.1) {
  auto extent = [](const RectOracle& r) { return 0.5 * std::hypot(r.length, r.breadth); };
  const double x0 = std::min(a.c.x - extent(a), b.c.x - extent(b));
  const double x1 = std::max(a.c.x + extent(a), b.c.x + extent(b));
  const double y0 = std::min(a.c.y - extent(a), b.c.y - extent(b));
  const double y1 = std::max(a.c.y + extent(a), b.c.y + extent(b));
  long in_a = 0, in_b = 0, both = 0;
  for (double y = y0 + step / 2; y < y1; y += step) {
    for (double x = x0 + step / 2; x < x1; x += step) {
      const bool ia = a.inside({x, y}), ib = b.inside({x, y});
      in_a += ia;
      in_b += ib;
      both += ia && ib;
    }
  }
  return static_cast<double>(both) / static_cast<double>(in_a + in_b - both);
}

Grasp random_grasp(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> pos(20, 60), ang(-kPi / 2, kPi / 2), w(5, 40);
  return make_grasp(pos(rng), pos(rng), ang(rng), w(rng));
}

}  // namespace

TEST(NormalizeAngle, Examples) {
  EXPECT_DOUBLE_EQ(normalize_angle(0.0), 0.0);
  EXPECT_NEAR(normalize_angle(kPi), 0.0, 1e-15);
  EXPECT_NEAR(normalize_angle(2.0), 2.0 - kPi, 1e-15);
  EXPECT_NEAR(normalize_angle(2.0), -1.1416, 1e-4);
}

TEST(NormalizeAngle, RejectsNonFinite) {
  EXPECT_THROW(normalize_angle(std::nan("")), std::invalid_argument);
  EXPECT_THROW(normalize_angle(INFINITY), std::invalid_argument);
}

TEST(NormalizeAngle, IdempotentAndPiPeriodic) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> d(-20, 20);
  for (int i = 0; i < 2000; ++i) {
    const double x = d(rng);
    const double n = normalize_angle(x);
    EXPECT_GE(n, -kPi / 2);
    EXPECT_LE(n, kPi / 2);
    EXPECT_NEAR(normalize_angle(n), n, 1e-12);
    EXPECT_NEAR(angle_diff(normalize_angle(x + kPi), n), 0.0, 1e-9);
    EXPECT_NEAR(std::remainder(n - x, kPi), 0.0, 1e-9);
  }
}

TEST(ToRectangle, AxisAligned) {
  const auto r = to_rectangle(make_grasp(50, 50, 0.0, 40), 0.5);
  std::vector<Point> c(r.corners.begin(), r.corners.end());
  for (const auto& p : c) {
    EXPECT_NEAR(std::fabs(p.x - 50), 20.0, 1e-12);
    EXPECT_NEAR(std::fabs(p.y - 50), 10.0, 1e-12);
  }
  EXPECT_NEAR(r.area(), 800.0, 1e-9);
}

TEST(ToRectangle, QuarterTurn) {
  const auto r = to_rectangle(make_grasp(50, 50, kPi / 2, 40), 0.5);
  for (const auto& p : r.corners) {
    EXPECT_NEAR(std::fabs(p.x - 50), 10.0, 1e-9);
    EXPECT_NEAR(std::fabs(p.y - 50), 20.0, 1e-9);
  }
}

TEST(ToRectangle, RotatedCornersMatchTrig) {
  // Row 10, col 20, 30 degrees, width 30, jaw 15.
  const double phi = kPi / 6, w = 30, h = 15;
  const auto r = to_rectangle(make_grasp(10, 20, phi, w), 0.5);
  std::vector<Point> expected;
  for (double su : {1.0, -1.0}) {
    for (double sn : {1.0, -1.0}) {
      const double x = 20 + su * (w / 2) * std::cos(phi) + sn * (h / 2) * std::sin(phi);
      const double y = 10 - su * (w / 2) * std::sin(phi) + sn * (h / 2) * std::cos(phi);
      expected.push_back({x, y});
    }
  }
  for (const auto& e : expected) {
    const bool found = std::any_of(r.corners.begin(), r.corners.end(), [&](Point p) {
      return std::fabs(p.x - e.x) < 1e-9 && std::fabs(p.y - e.y) < 1e-9;
    });
    EXPECT_TRUE(found) << e.x << "," << e.y;
  }
  // Opposite sides equal.
  auto len = [](Point a, Point b) { return std::hypot(a.x - b.x, a.y - b.y); };
  EXPECT_NEAR(len(r.corners[0], r.corners[1]), len(r.corners[2], r.corners[3]), 1e-6);
  EXPECT_NEAR(len(r.corners[1], r.corners[2]), len(r.corners[3], r.corners[0]), 1e-6);
}

TEST(ToRectangle, ZeroWidthIsAnError) {
  EXPECT_THROW(to_rectangle(make_grasp(5, 5, 0, 0)), std::invalid_argument);
}

TEST(RectIou, IdenticalIsOne) {
  const auto r = to_rectangle(make_grasp(30, 40, 0.7, 25));
  EXPECT_EQ(rect_iou(r, r), 1.0);
}

TEST(RectIou, DisjointIsZero) {
  EXPECT_EQ(rect_iou(to_rectangle(make_grasp(10, 10, 0, 10)), to_rectangle(make_grasp(100, 100, 0, 10))), 0.0);
}

TEST(RectIou, HalfOverlapAlongLongAxis) {
  const auto a = to_rectangle(make_grasp(50, 50, 0, 40));
  const auto b = to_rectangle(make_grasp(50, 70, 0, 40));
  EXPECT_NEAR(rect_iou(a, b), 1.0 / 3.0, 1e-12);
  const double raster = raster_iou(oracle_of(make_grasp(50, 50, 0, 40)), oracle_of(make_grasp(50, 70, 0, 40)));
  EXPECT_NEAR(raster, 1.0 / 3.0, 0.02);
}

TEST(RectIou, DegenerateRejected) {
  GraspRectangle flat{{Point{0, 0}, Point{1, 0}, Point{2, 0}, Point{3, 0}}};
  EXPECT_THROW(rect_iou(flat, to_rectangle(make_grasp(0, 0, 0, 4))), std::invalid_argument);
}

TEST(RectIou, SymmetricAndMatchesRasterization) {
  std::mt19937_64 rng(42);
  double worst = 0;
  for (int i = 0; i < 200; ++i) {
    const Grasp a = random_grasp(rng), b = random_grasp(rng);
    const double ab = rect_iou(to_rectangle(a), to_rectangle(b));
    const double ba = rect_iou(to_rectangle(b), to_rectangle(a));
    EXPECT_NEAR(ab, ba, 1e-12);
    worst = std::max(worst, std::fabs(ab - raster_iou(oracle_of(a), oracle_of(b))));
  }
  EXPECT_LE(worst, 0.02);
}

TEST(AngleDiff, Examples) {
  EXPECT_EQ(angle_diff(0.3, 0.3), 0.0);
  EXPECT_NEAR(angle_diff(kPi / 2, -kPi / 2), 0.0, 1e-15);
  EXPECT_NEAR(angle_diff(0.1, -0.4), 0.5, 1e-15);
}

TEST(AngleDiff, BoundedAndZeroOnlyModPi) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> d(-10, 10);
  for (int i = 0; i < 2000; ++i) {
    const double a = d(rng), b = d(rng);
    const double v = angle_diff(a, b);
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, kPi / 2 + 1e-15);
    EXPECT_NEAR(angle_diff(a, a + 3 * kPi), 0.0, 1e-9);
    if (std::fabs(std::remainder(a - b, kPi)) > 1e-6) EXPECT_GT(v, 0.0);
  }
}

TEST(IsSuccess, Examples) {
  const std::vector<Grasp> labels{make_grasp(50, 50, 0.2, 40)};
  EXPECT_TRUE(is_success(labels[0], labels));
  EXPECT_FALSE(is_success(make_grasp(200, 200, 0.2, 40), labels));
  EXPECT_THROW(is_success(labels[0], std::vector<Grasp>{}), std::invalid_argument);
}

TEST(IsSuccess, EnoughOverlapButTooMuchRotation) {
  const Grasp label = make_grasp(50, 50, 0.0, 40);
  const double tilt = 35.0 * kPi / 180.0;
  // Slide a tilted copy along its axis until IoU reaches 0.30 (bisection on the clipped IoU).
  double lo = 0, hi = 40;
  for (int i = 0; i < 80; ++i) {
    const double mid = 0.5 * (lo + hi);
    const Grasp p = make_grasp(50, 50 + mid, tilt, 40);
    (rect_iou(to_rectangle(p), to_rectangle(label)) > 0.30 ? lo : hi) = mid;
  }
  const Grasp pred = make_grasp(50, 50 + lo, tilt, 40);
  const double iou = rect_iou(to_rectangle(pred), to_rectangle(label));
  ASSERT_NEAR(iou, 0.30, 1e-6);
  ASSERT_NEAR(raster_iou(oracle_of(pred), oracle_of(label)), 0.30, 0.02);
  EXPECT_NEAR(angle_diff(pred.angle, label.angle), tilt, 1e-12);
  EXPECT_FALSE(is_success(pred, std::vector<Grasp>{label}));
  // The same overlap within the angle limit is accepted.
  const Grasp ok = make_grasp(50, 50, 25.0 * kPi / 180.0, 40);
  EXPECT_TRUE(is_success(ok, std::vector<Grasp>{label}));
}

TEST(MakeGrasp, ValidatesRanges) {
  EXPECT_THROW(make_grasp(0, 0, 0, 151), std::invalid_argument);
  EXPECT_THROW(make_grasp(0, 0, 0, -1), std::invalid_argument);
  EXPECT_THROW(make_grasp(0, 0, 0, 10, 1.5), std::invalid_argument);
  EXPECT_NEAR(make_grasp(0, 0, 3 * kPi / 4, 10).angle, -kPi / 4, 1e-12);
}
