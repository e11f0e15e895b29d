#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "nbv/scene.hpp"
#include "test_util.hpp"

using namespace nbv;

TEST(SceneSdf, UnitSphere) {
  const std::vector<ScenePrimitive> s{Sphere{Vec3::Zero(), 1.0}};
  EXPECT_DOUBLE_EQ(scene_sdf(s, Vec3(0, 0, 0)), -1.0);
  EXPECT_DOUBLE_EQ(scene_sdf(s, Vec3(2, 0, 0)), 1.0);
}

TEST(SceneSdf, UnionTakesMinimum) {
  const std::vector<ScenePrimitive> s{Sphere{Vec3::Zero(), 1.0}, Sphere{Vec3(3, 0, 0), 1.0}};
  EXPECT_DOUBLE_EQ(scene_sdf(s, Vec3(1.5, 0, 0)), 0.5);
}

TEST(SceneSdf, BoxAndPlane) {
  const Box b{Vec3(1, 1, 1), Vec3(1, 2, 3)};
  EXPECT_DOUBLE_EQ(primitive_sdf(b, Vec3(1, 1, 1)), -1.0);
  EXPECT_DOUBLE_EQ(primitive_sdf(b, Vec3(4, 1, 1)), 2.0);
  EXPECT_NEAR(primitive_sdf(b, Vec3(3, 4, 1)), std::sqrt(1.0 + 1.0), 1e-12);
  const Plane p{Vec3(0, 0, 2), Vec3(0, 0, 5)};
  EXPECT_DOUBLE_EQ(primitive_sdf(p, Vec3(7, -3, 5)), 3.0);
  EXPECT_DOUBLE_EQ(primitive_sdf(p, Vec3(0, 0, 1)), -1.0);
}

TEST(SceneSdf, EmptySceneThrows) {
  const std::vector<ScenePrimitive> s;
  EXPECT_THROW(scene_sdf(s, Vec3::Zero()), Error);
}

TEST(SceneSdf, LipschitzOnRandomPairs) {
  const std::vector<ScenePrimitive> s{Sphere{Vec3(0.3, 0, 0), 0.7}, Box{Vec3(-1, 1, 0), Vec3(0.4, 0.2, 0.9)},
                                      Plane{Vec3(0, 0, -1), Vec3(0.2, 0.1, 1)}};
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-3, 3);
  for (int k = 0; k < 2000; ++k) {
    const Vec3 a(u(rng), u(rng), u(rng)), b(u(rng), u(rng), u(rng));
    EXPECT_LE(std::abs(scene_sdf(s, a) - scene_sdf(s, b)), (a - b).norm() + 1e-12);
  }
}

TEST(ScenePrimitive, RejectsDegenerateExtents) {
  EXPECT_THROW(validate_primitive(Sphere{Vec3::Zero(), 0.0}), ConfigError);
  EXPECT_THROW(validate_primitive(Box{Vec3::Zero(), Vec3(1, -1, 1)}), ConfigError);
  EXPECT_THROW(validate_primitive(Plane{Vec3::Zero(), Vec3::Zero()}), ConfigError);
  EXPECT_NO_THROW(validate_primitive(Sphere{Vec3::Zero(), 0.1}));
}

TEST(Viewpoint, DirectionIsUnitAndYawWraps) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-10, 10);
  for (int k = 0; k < 100; ++k) {
    const Viewpoint v(Vec3::Zero(), u(rng), u(rng) * 0.15);
    EXPECT_NEAR(v.direction().norm(), 1.0, 1e-12);
    EXPECT_GE(v.yaw, 0.0);
    EXPECT_LT(v.yaw, 2 * kPi);
  }
  const Viewpoint v(Vec3::Zero(), -kPi / 2, 0.0);
  EXPECT_NEAR(v.yaw, 1.5 * kPi, 1e-12);
  EXPECT_NEAR(v.direction().y(), -1.0, 1e-12);
}

TEST(Camera, FrameIsOrthonormal) {
  const Viewpoint v(Vec3::Zero(), 1.1, -0.4);
  const CameraFrame f(v);
  EXPECT_NEAR(f.forward.dot(f.right), 0.0, 1e-12);
  EXPECT_NEAR(f.forward.dot(f.up), 0.0, 1e-12);
  EXPECT_NEAR(f.right.dot(f.up), 0.0, 1e-12);
  EXPECT_NEAR(f.up.norm(), 1.0, 1e-12);
  EXPECT_GT(f.up.z(), 0.0);
}

TEST(Camera, ProjectInvertsPixelRay) {
  const CameraIntrinsics cam;
  const Viewpoint v(Vec3(1, 2, 3), 0.7, 0.2);
  const CameraFrame f(v);
  for (int py = 0; py < cam.height; py += 7)
    for (int px = 0; px < cam.width; px += 9) {
      const Vec3 p = v.position + 2.5 * pixel_ray(f, cam, px, py);
      double x = 0, y = 0;
      ASSERT_TRUE(project(f, cam, v.position, p, x, y));
      EXPECT_NEAR(x, px + 0.5, 1e-9);
      EXPECT_NEAR(y, py + 0.5, 1e-9);
    }
  double x = 0, y = 0;
  EXPECT_FALSE(project(f, cam, v.position, v.position - v.direction(), x, y));
}

TEST(Camera, SubgridRaysCountAndOrder) {
  const CameraIntrinsics cam;
  const Viewpoint v(Vec3::Zero(), 0.0, 0.0);
  for (int r : {1, 2, 5, 10, 100}) EXPECT_EQ(subgrid_rays(v, cam, r).size(), static_cast<std::size_t>(r));
  const auto one = subgrid_rays(v, cam, 1);
  EXPECT_NEAR(one[0].x(), 1.0, 1e-12);
  const auto rays = subgrid_rays(v, cam, 100);
  // Row-major: first row at the top (z > 0), left to right (y decreasing for yaw 0).
  EXPECT_GT(rays[0].z(), 0.0);
  EXPECT_GT(rays[0].y(), rays[1].y());
  EXPECT_LT(rays[99].z(), 0.0);
}

TEST(RenderDepth, WallFacingCameraMatchesAnalyticDepth) {
  const Scene s = fixtures::wall_scene(3.0);
  const Viewpoint v(Vec3::Zero(), 0.0, 0.0);
  const DepthImage img = render_depth(s, v, 7);
  const CameraFrame f(v);
  for (int py = 0; py < img.height; ++py)
    for (int px = 0; px < img.width; ++px) {
      const Vec3 d = pixel_ray(f, s.config.camera, px, py);
      EXPECT_NEAR(img.at(px, py), 3.0 / d.x(), 1e-3);
    }
  EXPECT_NEAR(img.at(img.width / 2, img.height / 2), 3.0, 1e-3);
}

TEST(RenderDepth, SphereMatchesAnalyticIntersection) {
  Scene s = fixtures::wall_scene();
  s.primitives = {Sphere{Vec3(3, 0.2, -0.1), 1.0}};
  const Viewpoint v(Vec3::Zero(), 0.0, 0.0);
  const DepthImage img = render_depth(s, v, 1);
  const CameraFrame f(v);
  const Vec3 c(3, 0.2, -0.1);
  int hits = 0;
  for (int py = 0; py < img.height; ++py)
    for (int px = 0; px < img.width; ++px) {
      const Vec3 d = pixel_ray(f, s.config.camera, px, py);
      const double b = d.dot(c);
      const double disc = b * b - (c.squaredNorm() - 1.0);
      if (disc > 0.05) {  // away from grazing incidence
        ++hits;
        EXPECT_NEAR(img.at(px, py), b - std::sqrt(disc), 1e-3);
      } else if (disc < -1e-3) {
        EXPECT_EQ(img.at(px, py), DepthImage::kNoReturn);
      }
    }
  EXPECT_GT(hits, 100);
}

TEST(RenderDepth, EmptyHalfSpaceGivesNoReturn) {
  Scene s = fixtures::wall_scene();
  s.primitives = {Plane{Vec3(0, 0, -1), Vec3(0, 0, 1)}};
  const DepthImage img = render_depth(s, Viewpoint(Vec3::Zero(), 0.3, kPi / 2), 1);
  for (float d : img.depth) EXPECT_EQ(d, DepthImage::kNoReturn);
}

TEST(RenderDepth, TooNearSurfaceIsFlagged) {
  const Scene s = fixtures::wall_scene(0.3);
  const DepthImage img = render_depth(s, Viewpoint(Vec3::Zero(), 0.0, 0.0), 1);
  for (float d : img.depth) EXPECT_EQ(d, DepthImage::kTooNear);
}

TEST(RenderDepth, FiniteDepthsInWorkingRange) {
  Scene s = fixtures::wall_scene(3.0, 0.01);
  s.primitives.push_back(Sphere{Vec3(1.5, 0.5, 0), 0.4});
  const DepthImage img = render_depth(s, Viewpoint(Vec3::Zero(), 0.1, 0.1), 5);
  for (float d : img.depth)
    if (DepthImage::valid(d)) {
      EXPECT_GE(d, s.config.d_n);
      EXPECT_LE(d, s.config.d_f);
    }
}

TEST(RenderDepth, RejectsViewpointInsideGeometry) {
  const Scene s = fixtures::wall_scene(3.0);
  EXPECT_THROW(render_depth(s, Viewpoint(Vec3(3.5, 0, 0), 0.0, 0.0), 1), Error);
}

TEST(RenderDepth, NoiseFreeIsSeedIndependent) {
  Scene s = fixtures::wall_scene(3.0);
  s.primitives.push_back(Box{Vec3(2, -0.5, 0.3), Vec3(0.3, 0.3, 0.3)});
  const Viewpoint v(Vec3::Zero(), 0.2, 0.05);
  EXPECT_EQ(render_depth(s, v, 1).depth, render_depth(s, v, 99).depth);
}

TEST(RenderDepth, NoiseStdMatchesQuadraticModel) {
  Scene s = fixtures::wall_scene(4.0, 0.001);
  s.config.camera.width = 2;
  s.config.camera.height = 2;
  const Viewpoint v(Vec3::Zero(), 0.0, 0.0);
  const CameraFrame f(v);
  const double truth = 4.0 / pixel_ray(f, s.config.camera, 0, 0).x();
  double sum = 0, sum2 = 0;
  const int n = 10000;
  for (int k = 0; k < n; ++k) {
    const double e = render_depth(s, v, static_cast<std::uint64_t>(k)).at(0, 0) - truth;
    sum += e;
    sum2 += e * e;
  }
  const double mean = sum / n;
  const double sd = std::sqrt(sum2 / n - mean * mean);
  const double expected = 0.001 * truth * truth;
  EXPECT_NEAR(sd, expected, 0.1 * expected);
  EXPECT_NEAR(mean, 0.0, 0.1 * expected);
}

TEST(DepthImage, PgmExport) {
  const Scene s = fixtures::wall_scene(3.0);
  const DepthImage img = render_depth(s, Viewpoint(Vec3::Zero(), 0.0, 0.0), 1);
  const auto path = std::filesystem::temp_directory_path() / "nbv_depth_test.pgm";
  write_pgm(img, path.string());
  std::ifstream in(path, std::ios::binary);
  std::string magic;
  int w = 0, h = 0, maxv = 0;
  in >> magic >> w >> h >> maxv;
  EXPECT_EQ(magic, "P5");
  EXPECT_EQ(w, img.width);
  EXPECT_EQ(h, img.height);
  EXPECT_EQ(maxv, 65535);
  EXPECT_EQ(std::filesystem::file_size(path), static_cast<std::uintmax_t>(in.tellg()) + 1 + 2 * w * h);
  std::filesystem::remove(path);
}
