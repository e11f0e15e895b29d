#ifndef NBV_SAMPLER_HPP_
#define NBV_SAMPLER_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "json.hpp"
#include "nbv/common.hpp"
#include "nbv/gain_field.hpp"
#include "nbv/scene.hpp"
#include "nbv/voxel_map.hpp"

namespace nbv {

struct Direction {
  double yaw = 0.0;
  double pitch = 0.0;
};

/// N_loc positions drawn uniformly from the ball of radius l_s around p_s,
/// kept only if their voxel is Empty and the straight segment from p_s is
/// free. Throws SamplingError after 100 * N_loc rejections.
inline std::vector<Vec3> sample_locations(const VoxelMap& map, const Vec3& p_s, double l_s,
                                          int n_loc, std::uint64_t rng_seed) {
  std::mt19937_64 rng(rng_seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Vec3> out;
  out.reserve(n_loc);
  long rejections = 0;
  const long max_rejections = 100L * n_loc;
  while (static_cast<int>(out.size()) < n_loc) {
    Vec3 dir(gauss(rng), gauss(rng), gauss(rng));
    const double norm = dir.norm();
    if (norm < 1e-12) continue;
    const Vec3 p = p_s + (l_s * std::cbrt(unit(rng)) / norm) * dir;
    if (map.occupancy(p) == Occupancy::Empty && map.is_path_free(p_s, p)) {
      out.push_back(p);
    } else if (++rejections > max_rejections) {
      throw SamplingError("sample_locations: free space around the current position is too "
                          "constrained (" + std::to_string(out.size()) + " of " +
                          std::to_string(n_loc) + " locations found)");
    }
  }
  return out;
}

/// Uniform yaw grid over [0, 2pi) crossed with a uniform pitch grid over
/// [-pi/4, pi/4] (a single pitch is horizontal).
inline std::vector<Direction> direction_candidates(int n_yaw, int n_pitch) {
  std::vector<Direction> out;
  out.reserve(static_cast<std::size_t>(n_yaw) * n_pitch);
  for (int p = 0; p < n_pitch; ++p) {
    const double pitch = n_pitch == 1 ? 0.0 : -kPi / 4 + p * (kPi / 2) / (n_pitch - 1);
    for (int y = 0; y < n_yaw; ++y) out.push_back({2.0 * kPi * y / n_yaw, pitch});
  }
  return out;
}

inline std::vector<Direction> direction_candidates(const SceneConfig& cfg) {
  return direction_candidates(cfg.n_yaw, cfg.n_pitch);
}

/// Voxels within the sensor range of one position, with the line-of-sight
/// status of the unobserved ones precomputed, so that the view cost of many
/// directions from that position costs one frustum test per voxel.
class RangeVisibility {
 public:
  RangeVisibility(const VoxelMap& map, const Vec3& position, double d_n, double d_f)
      : position_(position) {
    const GridGeometry& grid = map.grid();
    const Aabb box = grid.bounds();
    Index3 lo, hi;
    for (int k = 0; k < 3; ++k) {
      lo[k] = std::clamp(static_cast<int>(std::floor((std::max(position[k] - d_f, box.min[k]) - grid.origin[k]) / grid.resolution)), 0, grid.dims[k] - 1);
      hi[k] = std::clamp(static_cast<int>(std::floor((std::min(position[k] + d_f, box.max[k]) - grid.origin[k]) / grid.resolution)), 0, grid.dims[k] - 1);
    }
    for (int z = lo.z(); z <= hi.z(); ++z)
      for (int y = lo.y(); y <= hi.y(); ++y)
        for (int x = lo.x(); x <= hi.x(); ++x) {
          const Index3 idx(x, y, z);
          const Vec3 c = grid.center(idx);
          const double dist = (c - position).norm();
          if (dist < d_n || dist > d_f) continue;
          bool visible_unobserved = false;
          if (map.label(idx) == Occupancy::Unobserved) {
            visible_unobserved = traverse_segment(grid, position, c, [&](const Index3& i) {
              return map.label(i) != Occupancy::Occupied;
            });
          }
          offsets_.push_back(c - position);
          visible_unobserved_.push_back(visible_unobserved);
        }
  }

  /// Visible unobserved frustum voxels over all frustum voxels.
  double view_cost(const Viewpoint& v, const CameraIntrinsics& cam) const {
    const CameraFrame frame(v);
    const double th = cam.tan_half_h();
    const double tv = cam.tan_half_v();
    std::size_t in_frustum = 0, hits = 0;
    for (std::size_t n = 0; n < offsets_.size(); ++n) {
      const Vec3& c = offsets_[n];
      const double z = c.dot(frame.forward);
      if (z <= 0.0) continue;
      if (std::abs(c.dot(frame.right)) >= th * z || std::abs(c.dot(frame.up)) >= tv * z) continue;
      ++in_frustum;
      if (visible_unobserved_[n]) ++hits;
    }
    return in_frustum == 0 ? 0.0 : static_cast<double>(hits) / in_frustum;
  }

  const Vec3& position() const { return position_; }

 private:
  Vec3 position_;
  std::vector<Vec3> offsets_;
  std::vector<bool> visible_unobserved_;
};

/// Cheap TSDF-based score of a view: fraction of frustum voxels within
/// [d_n, d_f] that are unobserved and not hidden behind an occupied voxel.
inline double tsdf_view_cost(const VoxelMap& map, const Viewpoint& v, const SceneConfig& cfg) {
  return RangeVisibility(map, v.position, cfg.d_n, cfg.d_f).view_cost(v, cfg.camera);
}

/// Sampled viewpoints with gains: the training set of the gain approximator
/// and the pool of goal candidates.
struct GainSampleSet {
  std::vector<Vec3> positions;
  std::vector<Direction> directions;
  std::vector<double> raw_gains;
  std::vector<double> gains;  // min-max normalized to [0, 1]
  double raw_min = 0.0;
  double raw_max = 0.0;
  std::size_t cheap_evaluations = 0;
  std::size_t expensive_evaluations = 0;

  std::size_t size() const { return positions.size(); }

  std::size_t best_index() const {
    return static_cast<std::size_t>(std::max_element(gains.begin(), gains.end()) - gains.begin());
  }

  /// Maps a raw gain into the normalized range of this set (clamped).
  double normalize(double raw) const {
    if (!(raw_max > raw_min)) return 0.0;
    return std::clamp((raw - raw_min) / (raw_max - raw_min), 0.0, 1.0);
  }

  std::size_t nearest(const Vec3& p) const {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < positions.size(); ++i) {
      const double d = (positions[i] - p).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = i;
      }
    }
    return best;
  }

  nlohmann::json to_json() const {
    nlohmann::json pts = nlohmann::json::array();
    for (std::size_t i = 0; i < size(); ++i) {
      pts.push_back({{"position", {positions[i].x(), positions[i].y(), positions[i].z()}},
                     {"yaw", directions[i].yaw},
                     {"pitch", directions[i].pitch},
                     {"raw_gain", raw_gains[i]},
                     {"gain", gains[i]}});
    }
    return {{"samples", pts},
            {"cheap_evaluations", cheap_evaluations},
            {"expensive_evaluations", expensive_evaluations}};
  }
};

/// Min-max normalization; a flat set maps to all zeros.
inline std::vector<double> normalize_gains(const std::vector<double>& raw, double& lo, double& hi) {
  lo = raw.empty() ? 0.0 : *std::min_element(raw.begin(), raw.end());
  hi = raw.empty() ? 0.0 : *std::max_element(raw.begin(), raw.end());
  std::vector<double> out(raw.size(), 0.0);
  if (hi > lo)
    for (std::size_t i = 0; i < raw.size(); ++i) out[i] = (raw[i] - lo) / (hi - lo);
  return out;
}

struct SelectionOptions {
  bool use_filter = true;
  int keep_directions = 3;
  RayBudget budget;
  int threads = 1;
};

/// Samples N_loc locations around p_s and picks one direction for each.
/// With the filter, every candidate direction is scored by tsdf_view_cost
/// and only the best three receive the exact gain; without it, all
/// directions receive the exact gain.
inline GainSampleSet select_views(const VoxelMap& map, const UncertaintyField& field,
                                  const Vec3& p_s, const SceneConfig& cfg,
                                  const SelectionOptions& opt, std::uint64_t rng_seed) {
  GainSampleSet set;
  set.positions = sample_locations(map, p_s, cfg.l_s, cfg.n_loc, rng_seed);
  const auto dirs = direction_candidates(cfg);
  const std::size_t n = set.positions.size();
  set.directions.resize(n);
  set.raw_gains.resize(n);
  std::vector<std::size_t> cheap(n, 0), expensive(n, 0);

  parallel_for(n, opt.threads, [&](std::size_t li) {
    const Vec3& p = set.positions[li];
    std::vector<std::size_t> candidates(dirs.size());
    std::iota(candidates.begin(), candidates.end(), 0);
    if (opt.use_filter && static_cast<int>(dirs.size()) > opt.keep_directions) {
      const RangeVisibility vis(map, p, cfg.d_n, cfg.d_f);
      std::vector<double> cost(dirs.size());
      for (std::size_t d = 0; d < dirs.size(); ++d)
        cost[d] = vis.view_cost(Viewpoint(p, dirs[d].yaw, dirs[d].pitch), cfg.camera);
      cheap[li] = dirs.size();
      std::stable_sort(candidates.begin(), candidates.end(),
                       [&cost](std::size_t a, std::size_t b) { return cost[a] > cost[b]; });
      candidates.resize(opt.keep_directions);
    } else if (opt.use_filter) {
      cheap[li] = dirs.size();
    }
    double best = -1.0;
    std::size_t best_dir = candidates.front();
    for (std::size_t d : candidates) {
      const double g =
          evaluate_viewpoint(field, map, Viewpoint(p, dirs[d].yaw, dirs[d].pitch), cfg, opt.budget).gain;
      ++expensive[li];
      if (g > best) {
        best = g;
        best_dir = d;
      }
    }
    set.directions[li] = dirs[best_dir];
    set.raw_gains[li] = best;
  });

  set.gains = normalize_gains(set.raw_gains, set.raw_min, set.raw_max);
  set.cheap_evaluations = std::accumulate(cheap.begin(), cheap.end(), std::size_t{0});
  set.expensive_evaluations = std::accumulate(expensive.begin(), expensive.end(), std::size_t{0});
  return set;
}

}  // namespace nbv

#endif  // NBV_SAMPLER_HPP_
