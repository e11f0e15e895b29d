#ifndef NBV_METRICS_HPP_
#define NBV_METRICS_HPP_

#include <cmath>
#include <cstdint>
#include <iostream>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "nbv/common.hpp"
#include "nbv/scene.hpp"
#include "nbv/voxel_map.hpp"

namespace nbv {

enum class SurfaceSource { GroundTruth, Reconstructed };

struct SurfaceSampleSet {
  std::vector<Vec3> points;
  SurfaceSource source = SurfaceSource::GroundTruth;
};

/// Points on the scene's zero level set inside its bounds. Candidates are
/// drawn uniformly in the bounds, kept when |sdf| is below a thin band (so
/// acceptance is roughly area-proportional), then projected onto the surface
/// with Newton steps along the numerical gradient.
inline SurfaceSampleSet sample_gt_surface(const Scene& scene, std::size_t count,
                                          std::uint64_t seed) {
  const Aabb& b = scene.config.bounds;
  const double band = std::max(0.02, 0.01 * b.extent().norm());
  const double h = 1e-5;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  SurfaceSampleSet out;
  out.points.reserve(count);
  const std::size_t max_attempts = std::max<std::size_t>(count * 2000, 1000000);
  for (std::size_t attempt = 0; attempt < max_attempts && out.points.size() < count; ++attempt) {
    Vec3 p;
    for (int k = 0; k < 3; ++k) p[k] = b.min[k] + unit(rng) * (b.max[k] - b.min[k]);
    if (std::abs(scene.sdf(p)) > band) continue;
    bool converged = false;
    for (int it = 0; it < 20; ++it) {
      const double d = scene.sdf(p);
      if (std::abs(d) < 1e-6) {
        converged = true;
        break;
      }
      Vec3 g;
      for (int k = 0; k < 3; ++k) {
        Vec3 e = Vec3::Zero();
        e[k] = h;
        g[k] = (scene.sdf(p + e) - scene.sdf(p - e)) / (2.0 * h);
      }
      const double gn2 = g.squaredNorm();
      if (gn2 < 1e-12) break;
      p -= d * g / gn2;
    }
    if (converged && b.contains(p)) out.points.push_back(p);
  }
  if (out.points.empty()) throw Error("sample_gt_surface: scene has no surface inside its bounds");
  return out;
}

/// Surface points of the fused TSDF: rays from random Empty voxel centers in
/// random directions, keeping the first zero crossing. May return fewer than
/// `count` points when surface coverage is sparse (a warning is printed).
inline SurfaceSampleSet sample_reconstructed_surface(const VoxelMap& map, std::size_t count,
                                                     std::uint64_t seed, double max_depth,
                                                     bool warn = true) {
  SurfaceSampleSet out;
  out.source = SurfaceSource::Reconstructed;
  std::vector<std::size_t> empty;
  for (std::size_t n = 0; n < map.size(); ++n)
    if (map.label(n) == Occupancy::Empty) empty.push_back(n);
  if (empty.empty()) {
    if (warn) std::cerr << "warning: reconstructed surface sampling found no free space\n";
    return out;
  }
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, empty.size() - 1);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const std::size_t max_attempts = count * 20;
  for (std::size_t a = 0; a < max_attempts && out.points.size() < count; ++a) {
    const Vec3 o = map.grid().center(map.grid().unlinear(empty[pick(rng)]));
    Vec3 d(gauss(rng), gauss(rng), gauss(rng));
    if (d.norm() < 1e-12) continue;
    d.normalize();
    if (const auto t = map.ray_depth(o, d, max_depth)) out.points.push_back(o + *t * d);
  }
  if (warn && out.points.size() < count)
    std::cerr << "warning: reconstructed surface sampling returned " << out.points.size() << " of "
              << count << " points\n";
  return out;
}

/// Exact nearest-neighbor queries over a static k-d tree (median splits on
/// the widest axis, small leaves).
class PointIndex {
 public:
  explicit PointIndex(const std::vector<Vec3>& points) : points_(points), order_(points.size()) {
    if (points_.empty()) throw Error("PointIndex: empty point set");
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    nodes_.reserve(2 * points_.size() / kLeaf + 2);
    build(0, order_.size());
  }

  double nearest_distance(const Vec3& q) const {
    double best = std::numeric_limits<double>::infinity();
    search(0, q, best);
    return std::sqrt(best);
  }

 private:
  static constexpr std::size_t kLeaf = 8;

  struct Node {
    std::size_t begin = 0, end = 0;  // leaf range into order_
    int axis = -1;                   // -1 for leaves
    double split = 0.0;
    std::size_t left = 0, right = 0;
  };

  std::size_t build(std::size_t begin, std::size_t end) {
    const std::size_t id = nodes_.size();
    nodes_.push_back({begin, end});
    if (end - begin <= kLeaf) return id;
    Vec3 lo = points_[order_[begin]], hi = lo;
    for (std::size_t i = begin; i < end; ++i) {
      lo = lo.cwiseMin(points_[order_[i]]);
      hi = hi.cwiseMax(points_[order_[i]]);
    }
    int axis = 0;
    (hi - lo).maxCoeff(&axis);
    const std::size_t mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](std::size_t a, std::size_t b) { return points_[a][axis] < points_[b][axis]; });
    const double split = points_[order_[mid]][axis];
    const std::size_t left = build(begin, mid);
    const std::size_t right = build(mid, end);
    nodes_[id].axis = axis;
    nodes_[id].split = split;
    nodes_[id].left = left;
    nodes_[id].right = right;
    return id;
  }

  void search(std::size_t id, const Vec3& q, double& best) const {
    const Node& n = nodes_[id];
    if (n.axis < 0) {
      for (std::size_t i = n.begin; i < n.end; ++i) best = std::min(best, (points_[order_[i]] - q).squaredNorm());
      return;
    }
    const double diff = q[n.axis] - n.split;
    search(diff < 0.0 ? n.left : n.right, q, best);
    if (diff * diff < best) search(diff < 0.0 ? n.right : n.left, q, best);
  }

  const std::vector<Vec3>& points_;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
};

struct GeometryMetrics {
  double accuracy = 0.0;          // mean rec -> gt distance (m)
  double completion = 0.0;        // mean gt -> rec distance (m)
  double completion_ratio = 0.0;  // fraction of gt within threshold
};

inline GeometryMetrics geometry_metrics(const SurfaceSampleSet& rec, const SurfaceSampleSet& gt,
                                        double threshold) {
  if (rec.points.empty() || gt.points.empty()) throw Error("geometry_metrics: empty sample set");
  const PointIndex gt_index(gt.points);
  const PointIndex rec_index(rec.points);
  GeometryMetrics m;
  for (const auto& p : rec.points) m.accuracy += gt_index.nearest_distance(p);
  m.accuracy /= static_cast<double>(rec.points.size());
  std::size_t completed = 0;
  for (const auto& p : gt.points) {
    const double d = rec_index.nearest_distance(p);
    m.completion += d;
    if (d < threshold) ++completed;
  }
  m.completion /= static_cast<double>(gt.points.size());
  m.completion_ratio = static_cast<double>(completed) / static_cast<double>(gt.points.size());
  return m;
}

}  // namespace nbv

#endif  // NBV_METRICS_HPP_
