#include <gtest/gtest.h>

#include <random>

#include "nbv/metrics.hpp"

using namespace nbv;

namespace {

Scene scene_with(std::vector<ScenePrimitive> prims, const Aabb& bounds) {
  Scene s;
  s.config.bounds = bounds;
  s.primitives = std::move(prims);
  return s;
}

std::vector<Vec3> random_points(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<Vec3> out(n);
  for (auto& p : out) p = Vec3(u(rng), u(rng), 0.3 * u(rng));
  return out;
}

SurfaceSampleSet as_set(std::vector<Vec3> pts) {
  SurfaceSampleSet s;
  s.points = std::move(pts);
  return s;
}

}  // namespace

TEST(SurfaceSampling, SphereAndPlane) {
  const Scene sphere = scene_with({Sphere{Vec3(0, 0, 0), 1.0}}, {Vec3(-2, -2, -2), Vec3(2, 2, 2)});
  const auto s = sample_gt_surface(sphere, 2000, 1);
  EXPECT_EQ(s.points.size(), 2000u);
  for (const auto& p : s.points) EXPECT_NEAR(p.norm(), 1.0, 1e-3);

  const Scene plane = scene_with({Plane{Vec3(0, 0, 0.5), Vec3(0, 0, 1)}}, {Vec3(-1, -1, -1), Vec3(1, 1, 1)});
  for (const auto& p : sample_gt_surface(plane, 500, 2).points) EXPECT_NEAR(p.z(), 0.5, 1e-6);
}

TEST(SurfaceSampling, BothComponentsRepresented) {
  const Scene two = scene_with({Sphere{Vec3(-1, 0, 0), 0.5}, Sphere{Vec3(1.2, 0, 0), 0.4}},
                               {Vec3(-2, -1, -1), Vec3(2, 1, 1)});
  const auto s = sample_gt_surface(two, 3000, 3);
  std::size_t left = 0;
  for (const auto& p : s.points) left += p.x() < 0.1;
  EXPECT_GE(left, 300u);
  EXPECT_GE(s.points.size() - left, 300u);
}

TEST(GeometryMetrics, IdenticalSets) {
  const auto pts = random_points(400, 1);
  const auto m = geometry_metrics(as_set(pts), as_set(pts), 0.05);
  EXPECT_EQ(m.accuracy, 0.0);
  EXPECT_EQ(m.completion, 0.0);
  EXPECT_EQ(m.completion_ratio, 1.0);
}

TEST(GeometryMetrics, ShiftedPlane) {
  std::vector<Vec3> gt, rec;
  for (int i = 0; i <= 60; ++i)
    for (int j = 0; j <= 60; ++j) {
      gt.emplace_back(i * 0.02, j * 0.02, 0.0);
      rec.emplace_back(i * 0.02, j * 0.02, 0.02);
    }
  const auto m = geometry_metrics(as_set(rec), as_set(gt), 0.05);
  EXPECT_NEAR(m.accuracy, 0.02, 1e-12);
  EXPECT_NEAR(m.completion, 0.02, 1e-12);
  EXPECT_EQ(m.completion_ratio, 1.0);
}

TEST(GeometryMetrics, HalfCoverage) {
  std::vector<Vec3> gt, rec;
  for (int i = 0; i < 100; ++i)
    for (int j = 0; j < 20; ++j) {
      gt.emplace_back(i * 0.05, j * 0.05, 0.0);
      if (i < 50) rec.emplace_back(i * 0.05, j * 0.05, 0.0);
    }
  const auto m = geometry_metrics(as_set(rec), as_set(gt), 0.04);
  EXPECT_EQ(m.accuracy, 0.0);
  EXPECT_NEAR(m.completion_ratio, 0.5, 1e-12);
}

TEST(GeometryMetrics, CompletionRatioMonotoneInThreshold) {
  const auto a = as_set(random_points(300, 4)), b = as_set(random_points(300, 5));
  double last = -1.0;
  for (double t : {0.01, 0.03, 0.1, 0.3, 1.0}) {
    const double cr = geometry_metrics(a, b, t).completion_ratio;
    EXPECT_GE(cr, last);
    last = cr;
  }
  EXPECT_EQ(last, 1.0);
}

TEST(PointIndex, MatchesBruteForce) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto pts = random_points(500, seed);
    const PointIndex index(pts);
    for (const auto& q : random_points(100, 1000 + seed)) {
      const Vec3 far = q * 3.0;
      for (const Vec3& query : {q, far}) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& p : pts) best = std::min(best, (p - query).norm());
        EXPECT_DOUBLE_EQ(index.nearest_distance(query), best);
      }
    }
  }
  EXPECT_THROW(PointIndex(std::vector<Vec3>{}), Error);
}

TEST(GeometryMetrics, EmptyInputThrows) {
  EXPECT_THROW(geometry_metrics(as_set({}), as_set(random_points(3, 1)), 0.1), Error);
}
