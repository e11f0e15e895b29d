#ifndef NBV_SCENE_HPP_
#define NBV_SCENE_HPP_

#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Geometry>

#include "nbv/common.hpp"

namespace nbv {

// ---------------------------------------------------------------------------
// Primitives
// ---------------------------------------------------------------------------

struct Sphere {
  Vec3 center = Vec3::Zero();
  double radius = 1.0;
};

/// Axis-aligned box given by its center and half extents.
struct Box {
  Vec3 center = Vec3::Zero();
  Vec3 half = Vec3::Ones();
};

/// Half-space whose boundary passes through `point`; the solid side lies
/// opposite to `normal`.
struct Plane {
  Vec3 point = Vec3::Zero();
  Vec3 normal = Vec3::UnitZ();
};

using ScenePrimitive = std::variant<Sphere, Box, Plane>;

inline double primitive_sdf(const Sphere& s, const Vec3& x) {
  return (x - s.center).norm() - s.radius;
}

inline double primitive_sdf(const Box& b, const Vec3& x) {
  const Vec3 q = (x - b.center).cwiseAbs() - b.half;
  return q.cwiseMax(0.0).norm() + std::min(q.maxCoeff(), 0.0);
}

inline double primitive_sdf(const Plane& p, const Vec3& x) {
  return p.normal.normalized().dot(x - p.point);
}

inline double primitive_sdf(const ScenePrimitive& prim, const Vec3& x) {
  return std::visit([&x](const auto& p) { return primitive_sdf(p, x); }, prim);
}

/// Throws ConfigError for degenerate primitives (non-positive extents, zero
/// plane normal).
inline void validate_primitive(const ScenePrimitive& prim) {
  if (const auto* s = std::get_if<Sphere>(&prim); s && !(s->radius > 0.0))
    throw ConfigError("sphere radius must be positive");
  if (const auto* b = std::get_if<Box>(&prim); b && !(b->half.array() > 0.0).all())
    throw ConfigError("box half extents must be positive");
  if (const auto* p = std::get_if<Plane>(&prim); p && !(p->normal.norm() > 0.0))
    throw ConfigError("plane normal must be non-zero");
}

/// Union of primitives: minimum of the individual signed distances.
inline double scene_sdf(std::span<const ScenePrimitive> scene, const Vec3& x) {
  if (scene.empty()) throw Error("scene_sdf: empty scene");
  double d = std::numeric_limits<double>::infinity();
  for (const auto& prim : scene) d = std::min(d, primitive_sdf(prim, x));
  return d;
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct CameraIntrinsics {
  int width = 80;
  int height = 60;
  double vfov_deg = 60.0;

  double tan_half_v() const { return std::tan(0.5 * vfov_deg * kPi / 180.0); }
  double tan_half_h() const {
    return tan_half_v() * static_cast<double>(width) / height;
  }
};

/// Scene-dependent parameters. Names follow the usual symbols of the method:
/// l_s sampling radius, l_res voxel size, l_step planner lattice spacing,
/// [d_n, d_f] sensor working range, [d_min, d_max] preferred view depth band.
struct SceneConfig {
  std::string name = "unnamed";
  Aabb bounds;
  double l_s = 3.0;
  double l_res = 0.1;
  double l_step = 0.2;
  double d_n = 0.5;
  double d_f = 6.0;
  int n_pitch = 3;
  int n_yaw = 5;
  double d_min = 2.5;
  double d_max = 4.5;
  int n_loc = 40;
  int view_budget = 28;
  CameraIntrinsics camera;
  double k_noise = 0.0;
  Vec3 start_position = Vec3::Zero();
  double start_yaw = 0.0;
  double start_pitch = 0.0;

  void validate() const {
    if (!(bounds.max.array() > bounds.min.array()).all())
      throw ConfigError("bounds_max must exceed bounds_min on every axis");
    if (!(0.0 < d_n && d_n < d_min && d_min < d_max && d_max <= d_f))
      throw ConfigError("depth parameters must satisfy 0 < d_n < d_min < d_max <= d_f");
    if (!(l_res > 0.0)) throw ConfigError("l_res must be positive");
    if (!(l_step > 0.0 && l_step <= l_s))
      throw ConfigError("l_step must satisfy 0 < l_step <= l_s");
    if (n_pitch < 1 || n_yaw < 1) throw ConfigError("N_pitch and N_yaw must be >= 1");
    if (n_loc < 1) throw ConfigError("N_loc must be >= 1");
    if (view_budget < 1) throw ConfigError("view_budget must be >= 1");
    if (camera.width < 1 || camera.height < 1 || !(camera.vfov_deg > 0.0 && camera.vfov_deg < 180.0))
      throw ConfigError("invalid camera intrinsics");
    if (!(k_noise >= 0.0)) throw ConfigError("k_noise must be non-negative");
  }
};

struct Scene {
  SceneConfig config;
  std::vector<ScenePrimitive> primitives;

  double sdf(const Vec3& x) const { return scene_sdf(primitives, x); }
};

// ---------------------------------------------------------------------------
// Camera
// ---------------------------------------------------------------------------

/// Camera pose: position plus yaw (about +z, from +x) and pitch (elevation).
struct Viewpoint {
  Vec3 position = Vec3::Zero();
  double yaw = 0.0;
  double pitch = 0.0;

  Viewpoint() = default;
  Viewpoint(const Vec3& p, double yaw_rad, double pitch_rad)
      : position(p), yaw(wrap_yaw(yaw_rad)), pitch(std::clamp(pitch_rad, -kPi / 2, kPi / 2)) {}

  static double wrap_yaw(double y) {
    y = std::fmod(y, 2.0 * kPi);
    if (y < 0.0) y += 2.0 * kPi;
    if (y >= 2.0 * kPi) y = 0.0;
    return y;
  }

  Vec3 direction() const {
    return {std::cos(pitch) * std::cos(yaw), std::cos(pitch) * std::sin(yaw),
            std::sin(pitch)};
  }
};

/// Orthonormal camera frame. `right` stays horizontal so the frame is defined
/// even when looking straight up or down.
struct CameraFrame {
  Vec3 forward;
  Vec3 right;
  Vec3 up;

  explicit CameraFrame(const Viewpoint& v)
      : forward(v.direction()),
        right(std::sin(v.yaw), -std::cos(v.yaw), 0.0),
        up(right.cross(forward)) {}
};

/// Unit ray through continuous image coordinates (x in [0, width), y in
/// [0, height), y growing downwards).
inline Vec3 image_ray(const CameraFrame& frame, const CameraIntrinsics& cam,
                      double x, double y) {
  const double u = (2.0 * x / cam.width - 1.0) * cam.tan_half_h();
  const double w = (1.0 - 2.0 * y / cam.height) * cam.tan_half_v();
  return (frame.forward + u * frame.right + w * frame.up).normalized();
}

inline Vec3 pixel_ray(const CameraFrame& frame, const CameraIntrinsics& cam,
                      int px, int py) {
  return image_ray(frame, cam, px + 0.5, py + 0.5);
}

/// Continuous image coordinates of a world point, or false when it lies
/// behind the camera or outside the image.
inline bool project(const CameraFrame& frame, const CameraIntrinsics& cam,
                    const Vec3& camera_pos, const Vec3& p, double& x, double& y) {
  const Vec3 c = p - camera_pos;
  const double z = c.dot(frame.forward);
  if (z <= 1e-12) return false;
  x = (c.dot(frame.right) / z / cam.tan_half_h() + 1.0) * 0.5 * cam.width;
  y = (1.0 - c.dot(frame.up) / z / cam.tan_half_v()) * 0.5 * cam.height;
  return x >= 0.0 && x < cam.width && y >= 0.0 && y < cam.height;
}

/// Pixel rays sampled on a uniform sub-grid of the image: ceil(sqrt(R))
/// columns, enough rows for R rays, taken in row-major order.
inline std::vector<Vec3> subgrid_rays(const Viewpoint& v, const CameraIntrinsics& cam,
                                      int ray_count) {
  const CameraFrame frame(v);
  const int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(ray_count))));
  const int rows = (ray_count + cols - 1) / cols;
  std::vector<Vec3> rays;
  rays.reserve(ray_count);
  for (int r = 0; r < rows && static_cast<int>(rays.size()) < ray_count; ++r)
    for (int c = 0; c < cols && static_cast<int>(rays.size()) < ray_count; ++c)
      rays.push_back(image_ray(frame, cam, (c + 0.5) * cam.width / cols,
                               (r + 0.5) * cam.height / rows));
  return rays;
}

// ---------------------------------------------------------------------------
// Depth rendering
// ---------------------------------------------------------------------------

/// Per-pixel depth along the ray, in meters. Pixels without a return inside
/// [d_n, d_f] hold a sentinel: kNoReturn when nothing was hit before d_f,
/// kTooNear when the surface is closer than d_n.
struct DepthImage {
  static constexpr float kNoReturn = std::numeric_limits<float>::infinity();
  static constexpr float kTooNear = -std::numeric_limits<float>::infinity();

  int width = 0;
  int height = 0;
  std::vector<float> depth;

  DepthImage() = default;
  DepthImage(int w, int h) : width(w), height(h), depth(static_cast<std::size_t>(w) * h, kNoReturn) {}

  float at(int px, int py) const { return depth[static_cast<std::size_t>(py) * width + px]; }
  float& at(int px, int py) { return depth[static_cast<std::size_t>(py) * width + px]; }

  static bool valid(float d) { return std::isfinite(d); }
};

/// Sphere-traced first hit along a unit ray; returns +inf when nothing is hit
/// before max_depth.
inline double sphere_trace(std::span<const ScenePrimitive> scene, const Vec3& origin,
                           const Vec3& dir, double max_depth) {
  constexpr double kHitEps = 1e-4;
  constexpr int kMaxIter = 512;
  double t = 0.0;
  for (int i = 0; i < kMaxIter && t <= max_depth; ++i) {
    const double s = scene_sdf(scene, origin + t * dir);
    if (s < kHitEps) return t;
    t += s;
  }
  return std::numeric_limits<double>::infinity();
}

/// Renders a depth image from v with Gaussian noise sigma = k_noise * depth^2.
inline DepthImage render_depth(const Scene& scene, const Viewpoint& v,
                               std::uint64_t rng_seed) {
  const SceneConfig& cfg = scene.config;
  if (!(scene.sdf(v.position) > 0.0))
    throw Error("render_depth: viewpoint lies inside geometry");
  const CameraFrame frame(v);
  DepthImage img(cfg.camera.width, cfg.camera.height);
  std::mt19937_64 rng(rng_seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  for (int py = 0; py < img.height; ++py) {
    for (int px = 0; px < img.width; ++px) {
      const Vec3 dir = pixel_ray(frame, cfg.camera, px, py);
      double d = sphere_trace(scene.primitives, v.position, dir, cfg.d_f);
      if (!std::isfinite(d) || d > cfg.d_f) {
        img.at(px, py) = DepthImage::kNoReturn;
        continue;
      }
      if (cfg.k_noise > 0.0) d += cfg.k_noise * d * d * unit(rng);
      if (d > cfg.d_f)
        img.at(px, py) = DepthImage::kNoReturn;
      else if (d < cfg.d_n)
        img.at(px, py) = DepthImage::kTooNear;
      else
        img.at(px, py) = static_cast<float>(d);
    }
  }
  return img;
}

/// Writes a 16-bit binary PGM with depth in millimeters; sentinels become 0.
inline void write_pgm(const DepthImage& img, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path + " for writing");
  out << "P5\n" << img.width << " " << img.height << "\n65535\n";
  for (float d : img.depth) {
    const double mm = DepthImage::valid(d) ? std::clamp(d * 1000.0, 0.0, 65535.0) : 0.0;
    const auto v = static_cast<std::uint16_t>(std::lround(mm));
    const char bytes[2] = {static_cast<char>(v >> 8), static_cast<char>(v & 0xff)};
    out.write(bytes, 2);
  }
}

}  // namespace nbv

#endif  // NBV_SCENE_HPP_
