#ifndef NBV_GAIN_FIELD_HPP_
#define NBV_GAIN_FIELD_HPP_

#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "json.hpp"
#include "nbv/common.hpp"
#include "nbv/scene.hpp"
#include "nbv/voxel_map.hpp"

namespace nbv {

/// Per-voxel color-uncertainty surrogate sigma^2 in [0, 1], aligned with a
/// VoxelMap. Decays as 1 / (1 + observations); unobserved cells stay at 1.
class UncertaintyField {
 public:
  UncertaintyField() = default;
  explicit UncertaintyField(const GridGeometry& grid)
      : grid_(grid), sigma2_(grid.size(), 1.0) {}

  const GridGeometry& grid() const { return grid_; }
  std::size_t size() const { return sigma2_.size(); }
  double sigma2(std::size_t n) const { return sigma2_[n]; }
  void set_sigma2(std::size_t n, double s) { sigma2_[n] = std::clamp(s, 0.0, 1.0); }

  /// sigma^2 of the containing cell; points outside the grid carry none.
  double sigma2_at(const Vec3& p) const {
    const auto i = grid_.voxel_of(p);
    return i ? sigma2_[grid_.linear(*i)] : 0.0;
  }

  void decay(const VoxelMap& map) {
    if (map.grid().dims != grid_.dims) throw Error("uncertainty field and map grids differ");
    for (std::size_t n = 0; n < sigma2_.size(); ++n) {
      sigma2_[n] = map.label(n) == Occupancy::Unobserved
                       ? 1.0
                       : 1.0 / (1.0 + static_cast<double>(map.voxel(n).count));
    }
  }

  /// Horizontal slices (one per z layer) for plotting.
  nlohmann::json slices_json() const {
    nlohmann::json slices = nlohmann::json::array();
    for (int k = 0; k < grid_.dims.z(); ++k) {
      std::vector<double> values;
      values.reserve(static_cast<std::size_t>(grid_.dims.x()) * grid_.dims.y());
      for (int j = 0; j < grid_.dims.y(); ++j)
        for (int i = 0; i < grid_.dims.x(); ++i)
          values.push_back(sigma2_[grid_.linear({i, j, k})]);
      slices.push_back({{"k", k}, {"z", grid_.center({0, 0, k}).z()}, {"sigma2", values}});
    }
    return {{"origin", {grid_.origin.x(), grid_.origin.y(), grid_.origin.z()}},
            {"dims", {grid_.dims.x(), grid_.dims.y(), grid_.dims.z()}},
            {"l_res", grid_.resolution},
            {"layout", "row-major (y, x) per slice"},
            {"slices", slices}};
  }

 private:
  GridGeometry grid_;
  std::vector<double> sigma2_;
};

/// Weights and sigma^2 values of the samples along one ray.
struct RaySamples {
  std::vector<double> weight;
  std::vector<double> sigma2;
};

/// sigma_v^2 = (1/R) sum_r sum_i W_ri sigma_ri^2.
inline double mean_ray_uncertainty(std::span<const RaySamples> rays) {
  if (rays.empty()) throw Error("mean_ray_uncertainty: no rays");
  double total = 0.0;
  for (const auto& r : rays)
    for (std::size_t i = 0; i < r.weight.size(); ++i) total += r.weight[i] * r.sigma2[i];
  return total / static_cast<double>(rays.size());
}

/// Hit-and-stop weights along a ray: N samples at the midpoints of N equal
/// strata of [d_n, d_f]. A sample is opaque when its voxel is Occupied or
/// Unobserved; outside the grid it is opaque and carries no uncertainty.
inline RaySamples sample_ray(const UncertaintyField& field, const VoxelMap& map,
                             const Vec3& origin, const Vec3& dir, int n_samples,
                             double d_n, double d_f) {
  RaySamples out;
  out.weight.resize(n_samples);
  out.sigma2.resize(n_samples);
  const GridGeometry& grid = map.grid();
  const double dt = (d_f - d_n) / n_samples;
  double transmittance = 1.0;
  for (int i = 0; i < n_samples; ++i) {
    const Vec3 p = origin + (d_n + (i + 0.5) * dt) * dir;
    double alpha = 1.0;
    double s2 = 0.0;
    if (const auto idx = grid.voxel_of(p)) {
      const std::size_t n = grid.linear(*idx);
      alpha = map.label(n) == Occupancy::Empty ? 0.0 : 1.0;
      s2 = field.sigma2(n);
    }
    out.weight[i] = transmittance * alpha;
    out.sigma2[i] = s2;
    transmittance *= 1.0 - alpha;
  }
  return out;
}

struct RayBudget {
  int rays = 100;    // R
  int samples = 64;  // N per ray
};

/// Integrated view uncertainty sigma_v^2 over R sub-grid rays of N samples.
inline double viewpoint_uncertainty(const UncertaintyField& field, const VoxelMap& map,
                                    const Viewpoint& v, const SceneConfig& cfg,
                                    RayBudget budget = {}) {
  if (budget.rays < 1 || budget.samples < 1)
    throw Error("viewpoint_uncertainty: ray and sample counts must be >= 1");
  const auto rays = subgrid_rays(v, cfg.camera, budget.rays);
  double total = 0.0;
  for (const Vec3& dir : rays) {
    const RaySamples s = sample_ray(field, map, v.position, dir, budget.samples, cfg.d_n, cfg.d_f);
    for (int i = 0; i < budget.samples; ++i) total += s.weight[i] * s.sigma2[i];
  }
  return total / static_cast<double>(rays.size());
}

/// Mean TSDF depth over the R rays whose depth lies in [d_n, d_f]; nullopt
/// when no ray qualifies.
inline std::optional<double> view_depth(const VoxelMap& map, const Viewpoint& v,
                                        const SceneConfig& cfg, int ray_count = 100) {
  double sum = 0.0;
  int valid = 0;
  for (const Vec3& dir : subgrid_rays(v, cfg.camera, ray_count)) {
    const auto d = map.ray_depth(v.position, dir, cfg.d_f);
    if (d && *d >= cfg.d_n && *d <= cfg.d_f) {
      sum += *d;
      ++valid;
    }
  }
  if (valid == 0) return std::nullopt;
  return sum / valid;
}

/// Depth-band gain: sigma_v^2 inside (d_min, d_max); outside, decayed by
/// exp(-|alpha| |d_v - d_u|) with d_u the band center and
/// |alpha| = 2 / (d_max - d_min). A missing view depth counts as d_f.
inline double information_gain(double sigma2, std::optional<double> depth, double d_min,
                               double d_max, double d_f) {
  const double d_v = depth.value_or(d_f);
  if (d_min < d_v && d_v < d_max) return sigma2;
  const double d_u = 0.5 * (d_min + d_max);
  const double alpha = 2.0 / (d_max - d_min);
  return std::exp(-alpha * std::abs(d_v - d_u)) * sigma2;
}

inline double information_gain(double sigma2, std::optional<double> depth,
                               const SceneConfig& cfg) {
  return information_gain(sigma2, depth, cfg.d_min, cfg.d_max, cfg.d_f);
}

struct ViewpointGain {
  double sigma2 = 0.0;
  std::optional<double> depth;
  double gain = 0.0;
};

/// Full exact evaluation of one viewpoint: uncertainty, view depth, decay.
inline ViewpointGain evaluate_viewpoint(const UncertaintyField& field, const VoxelMap& map,
                                        const Viewpoint& v, const SceneConfig& cfg,
                                        RayBudget budget = {}) {
  ViewpointGain g;
  g.sigma2 = viewpoint_uncertainty(field, map, v, cfg, budget);
  g.depth = view_depth(map, v, cfg, budget.rays);
  g.gain = information_gain(g.sigma2, g.depth, cfg);
  return g;
}

}  // namespace nbv

#endif  // NBV_GAIN_FIELD_HPP_
