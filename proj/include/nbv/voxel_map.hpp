#ifndef NBV_VOXEL_MAP_HPP_
#define NBV_VOXEL_MAP_HPP_

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "nbv/common.hpp"
#include "nbv/scene.hpp"

namespace nbv {

enum class Occupancy : std::uint8_t { Unobserved = 0, Empty = 1, Occupied = 2 };

inline const char* to_string(Occupancy o) {
  switch (o) {
    case Occupancy::Unobserved: return "unobserved";
    case Occupancy::Empty: return "empty";
    case Occupancy::Occupied: return "occupied";
  }
  return "?";
}

struct TsdfVoxel {
  double value = 0.0;   // truncated signed distance (m)
  double weight = 0.0;  // fusion weight
  std::uint32_t count = 0;
};

struct OccupancyHistogram {
  std::size_t occupied = 0;
  std::size_t empty = 0;
  std::size_t unobserved = 0;
  std::size_t total() const { return occupied + empty + unobserved; }
};

/// Dense axis-aligned voxel grid geometry: origin is the minimum corner.
struct GridGeometry {
  Vec3 origin = Vec3::Zero();
  Index3 dims = Index3::Zero();
  double resolution = 0.1;

  std::size_t size() const {
    return static_cast<std::size_t>(dims.x()) * dims.y() * dims.z();
  }
  bool in_grid(const Index3& i) const {
    return (i.array() >= 0).all() && (i.array() < dims.array()).all();
  }
  std::size_t linear(const Index3& i) const {
    return static_cast<std::size_t>(i.x()) +
           static_cast<std::size_t>(dims.x()) *
               (static_cast<std::size_t>(i.y()) + static_cast<std::size_t>(dims.y()) * i.z());
  }
  Index3 unlinear(std::size_t n) const {
    const auto nx = static_cast<std::size_t>(dims.x());
    const auto ny = static_cast<std::size_t>(dims.y());
    return {static_cast<int>(n % nx), static_cast<int>((n / nx) % ny),
            static_cast<int>(n / (nx * ny))};
  }
  Vec3 center(const Index3& i) const {
    return origin + (i.cast<double>().array() + 0.5).matrix() * resolution;
  }
  Vec3 to_grid(const Vec3& p) const { return (p - origin) / resolution; }
  /// Containing voxel; points on the maximum faces belong to the last voxel.
  std::optional<Index3> voxel_of(const Vec3& p) const {
    const Vec3 g = to_grid(p);
    Index3 i;
    for (int a = 0; a < 3; ++a) {
      if (!(g[a] >= 0.0) || g[a] > dims[a]) return std::nullopt;
      i[a] = std::min(static_cast<int>(std::floor(g[a])), dims[a] - 1);
    }
    return i;
  }
  Aabb bounds() const { return {origin, origin + dims.cast<double>() * resolution}; }
};

/// Enumerates the voxels crossed by segment a-b in order (Amanatides-Woo DDA).
/// When the segment passes exactly through a voxel edge or corner, the voxels
/// touching that edge/corner are visited as well. The segment is clipped to
/// the grid first. `visit(Index3)` returns false to stop early. Returns false
/// if stopped early.
template <typename Visitor>
bool traverse_segment(const GridGeometry& grid, const Vec3& a, const Vec3& b, Visitor&& visit) {
  constexpr double kTieEps = 1e-9;
  Vec3 ga = grid.to_grid(a);
  Vec3 gb = grid.to_grid(b);
  // Slab clipping to [0, dims].
  const Vec3 d = gb - ga;
  double t0 = 0.0, t1 = 1.0;
  for (int k = 0; k < 3; ++k) {
    const double lo = 0.0, hi = grid.dims[k];
    if (std::abs(d[k]) < 1e-15) {
      if (ga[k] < lo || ga[k] > hi) return true;
      continue;
    }
    double ta = (lo - ga[k]) / d[k], tb = (hi - ga[k]) / d[k];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    if (t0 > t1) return true;
  }
  const Vec3 start = ga + t0 * d;
  const Vec3 stop = ga + t1 * d;
  auto cell_of = [&grid](const Vec3& g) {
    Index3 c;
    for (int k = 0; k < 3; ++k)
      c[k] = std::clamp(static_cast<int>(std::floor(g[k])), 0, grid.dims[k] - 1);
    return c;
  };
  Index3 cell = cell_of(start);
  const Index3 end = cell_of(stop);
  const Vec3 seg = stop - start;
  Index3 step;
  Vec3 t_max, t_delta;
  for (int k = 0; k < 3; ++k) {
    if (seg[k] > 1e-15) {
      step[k] = 1;
      t_delta[k] = 1.0 / seg[k];
      t_max[k] = (cell[k] + 1 - start[k]) / seg[k];
    } else if (seg[k] < -1e-15) {
      step[k] = -1;
      t_delta[k] = -1.0 / seg[k];
      t_max[k] = (cell[k] - start[k]) / seg[k];
    } else {
      step[k] = 0;
      t_delta[k] = std::numeric_limits<double>::infinity();
      t_max[k] = std::numeric_limits<double>::infinity();
    }
  }
  if (!visit(static_cast<const Index3&>(cell))) return false;
  const int max_steps = (end - cell).cwiseAbs().sum() + 4;
  for (int n = 0; n < max_steps && cell != end; ++n) {
    const double tmin = t_max.minCoeff();
    if (tmin > 1.0 + kTieEps) break;
    int axes[3];
    int n_axes = 0;
    for (int k = 0; k < 3; ++k)
      if (t_max[k] <= tmin + kTieEps) axes[n_axes++] = k;
    if (n_axes > 1) {
      // Edge/corner crossing: visit every proper sub-step.
      const int full = (1 << n_axes) - 1;
      for (int mask = 1; mask < full; ++mask) {
        Index3 side = cell;
        for (int m = 0; m < n_axes; ++m)
          if (mask & (1 << m)) side[axes[m]] += step[axes[m]];
        if (grid.in_grid(side) && !visit(static_cast<const Index3&>(side))) return false;
      }
    }
    for (int m = 0; m < n_axes; ++m) {
      cell[axes[m]] += step[axes[m]];
      t_max[axes[m]] += t_delta[axes[m]];
    }
    if (!grid.in_grid(cell)) break;
    if (!visit(static_cast<const Index3&>(cell))) return false;
  }
  return true;
}

/// Coarse TSDF with derived occupancy labels.
///
/// Labels: Unobserved iff weight == 0; Occupied iff value < -l_res/2;
/// Empty otherwise. Truncation is 3 * l_res.
class VoxelMap {
 public:
  VoxelMap() = default;

  VoxelMap(const Aabb& bounds, double resolution) {
    if (!(resolution > 0.0)) throw ConfigError("voxel resolution must be positive");
    grid_.origin = bounds.min;
    grid_.resolution = resolution;
    for (int k = 0; k < 3; ++k)
      grid_.dims[k] = std::max(1, static_cast<int>(std::ceil(bounds.extent()[k] / resolution - 1e-9)));
    truncation_ = 3.0 * resolution;
    voxels_.assign(grid_.size(), TsdfVoxel{});
    labels_.assign(grid_.size(), Occupancy::Unobserved);
  }

  static VoxelMap for_scene(const SceneConfig& cfg) { return VoxelMap(cfg.bounds, cfg.l_res); }

  const GridGeometry& grid() const { return grid_; }
  double resolution() const { return grid_.resolution; }
  double truncation() const { return truncation_; }
  double occupied_margin() const { return 0.5 * grid_.resolution; }
  std::size_t size() const { return voxels_.size(); }

  const TsdfVoxel& voxel(std::size_t n) const { return voxels_[n]; }
  const TsdfVoxel& voxel(const Index3& i) const { return voxels_[grid_.linear(i)]; }
  Occupancy label(std::size_t n) const { return labels_[n]; }
  Occupancy label(const Index3& i) const { return labels_[grid_.linear(i)]; }

  /// Overwrites one voxel (restore, constructed test maps). |value| is
  /// clamped to the truncation.
  void set_voxel(const Index3& i, const TsdfVoxel& v) {
    const std::size_t n = grid_.linear(i);
    voxels_[n] = v;
    voxels_[n].value = std::clamp(v.value, -truncation_, truncation_);
    refresh_label(n);
  }

  /// Projective TSDF update with one depth image captured from v.
  void integrate(const Viewpoint& v, const DepthImage& img, const SceneConfig& cfg) {
    const CameraFrame frame(v);
    const double tau = truncation_;
    for (std::size_t n = 0; n < voxels_.size(); ++n) {
      const Vec3 c = grid_.center(grid_.unlinear(n));
      const double dist = (c - v.position).norm();
      if (dist < cfg.d_n || dist > cfg.d_f) continue;
      double x, y;
      if (!project(frame, cfg.camera, v.position, c, x, y)) continue;
      const int px = std::min(static_cast<int>(x), img.width - 1);
      const int py = std::min(static_cast<int>(y), img.height - 1);
      const float measured = img.at(px, py);
      if (measured == DepthImage::kTooNear || std::isnan(measured)) continue;
      double sdf = measured == DepthImage::kNoReturn ? tau : measured - dist;
      if (sdf < -tau) continue;
      sdf = std::min(sdf, tau);
      TsdfVoxel& vox = voxels_[n];
      vox.value = (vox.value * vox.weight + sdf) / (vox.weight + 1.0);
      vox.weight += 1.0;
      vox.count += 1;
      refresh_label(n);
    }
  }

  /// Marks still-unobserved voxels whose centers lie within `radius` of
  /// `center` as observed free space (the volume occupied by the sensor).
  void seed_free_space(const Vec3& center, double radius) {
    for (std::size_t n = 0; n < voxels_.size(); ++n) {
      if (voxels_[n].weight > 0.0) continue;
      if ((grid_.center(grid_.unlinear(n)) - center).norm() > radius) continue;
      voxels_[n] = {truncation_, 1.0, 1};
      refresh_label(n);
    }
  }

  Occupancy occupancy(const Vec3& p) const {
    const auto i = grid_.voxel_of(p);
    return i ? labels_[grid_.linear(*i)] : Occupancy::Unobserved;
  }

  /// Distance along a unit ray to the first positive-to-negative crossing of
  /// the fused TSDF, interpolated between voxel centers. Up to two
  /// consecutive unobserved voxels are tolerated.
  std::optional<double> ray_depth(const Vec3& origin, const Vec3& dir, double max_depth) const {
    std::optional<double> result;
    bool first = true;
    bool have_prev = false;
    double prev_t = 0.0, prev_v = 0.0;
    int unobserved_run = 0;
    traverse_segment(grid_, origin, origin + max_depth * dir, [&](const Index3& i) {
      const TsdfVoxel& vox = voxels_[grid_.linear(i)];
      if (vox.weight <= 0.0) {
        first = false;
        return ++unobserved_run <= 2;
      }
      unobserved_run = 0;
      const double t = (grid_.center(i) - origin).dot(dir);
      const double v = vox.value;
      if (first && v < 0.0) {
        result = 0.0;
        return false;
      }
      first = false;
      if (have_prev && prev_v >= 0.0 && v < 0.0) {
        result = std::max(0.0, prev_t + (t - prev_t) * prev_v / (prev_v - v));
        return false;
      }
      have_prev = true;
      prev_t = t;
      prev_v = v;
      return true;
    });
    if (result && *result > max_depth) return std::nullopt;
    return result;
  }

  /// True iff every voxel touched by segment a-b is Empty.
  bool is_path_free(const Vec3& a, const Vec3& b) const {
    if (!grid_.voxel_of(a) || !grid_.voxel_of(b)) return false;
    return traverse_segment(grid_, a, b, [this](const Index3& i) {
      return labels_[grid_.linear(i)] == Occupancy::Empty;
    });
  }

  OccupancyHistogram histogram() const {
    OccupancyHistogram h;
    for (Occupancy l : labels_) {
      if (l == Occupancy::Occupied) ++h.occupied;
      else if (l == Occupancy::Empty) ++h.empty;
      else ++h.unobserved;
    }
    return h;
  }

  // -- serialization -------------------------------------------------------

  /// Little-endian blob: "NBVMAP01", origin (3 x f64), dims (3 x u32),
  /// l_res (f64), then per voxel in x-fastest order: value f32, weight f32,
  /// count u32.
  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open " + path + " for writing");
    out.write("NBVMAP01", 8);
    for (int k = 0; k < 3; ++k) put_u64(out, std::bit_cast<std::uint64_t>(grid_.origin[k]));
    for (int k = 0; k < 3; ++k) put_u32(out, static_cast<std::uint32_t>(grid_.dims[k]));
    put_u64(out, std::bit_cast<std::uint64_t>(grid_.resolution));
    for (const auto& v : voxels_) {
      put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v.value)));
      put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v.weight)));
      put_u32(out, v.count);
    }
  }

  static VoxelMap load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, "NBVMAP01", 8) != 0) throw Error(path + ": not a map blob");
    Vec3 origin;
    Index3 dims;
    for (int k = 0; k < 3; ++k) origin[k] = std::bit_cast<double>(get_u64(in));
    for (int k = 0; k < 3; ++k) dims[k] = static_cast<int>(get_u32(in));
    const double res = std::bit_cast<double>(get_u64(in));
    if (!in || (dims.array() <= 0).any() || !(res > 0.0)) throw Error(path + ": bad header");
    VoxelMap map(Aabb{origin, origin + dims.cast<double>() * res}, res);
    map.grid_.dims = dims;
    map.voxels_.assign(map.grid_.size(), TsdfVoxel{});
    map.labels_.assign(map.grid_.size(), Occupancy::Unobserved);
    for (std::size_t n = 0; n < map.voxels_.size(); ++n) {
      TsdfVoxel v;
      v.value = std::bit_cast<float>(get_u32(in));
      v.weight = std::bit_cast<float>(get_u32(in));
      v.count = get_u32(in);
      map.voxels_[n] = v;
      map.refresh_label(n);
    }
    if (!in) throw Error(path + ": truncated payload");
    return map;
  }

  nlohmann::json histogram_json() const {
    const auto h = histogram();
    return {{"occupied", h.occupied}, {"empty", h.empty},
            {"unobserved", h.unobserved}, {"total", h.total()},
            {"dims", {grid_.dims.x(), grid_.dims.y(), grid_.dims.z()}},
            {"l_res", grid_.resolution}};
  }

 private:
  void refresh_label(std::size_t n) {
    const TsdfVoxel& v = voxels_[n];
    if (v.weight <= 0.0)
      labels_[n] = Occupancy::Unobserved;
    else if (v.value < -occupied_margin())
      labels_[n] = Occupancy::Occupied;
    else
      labels_[n] = Occupancy::Empty;
  }

  static void put_u32(std::ostream& out, std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out.write(b, 4);
  }
  static void put_u64(std::ostream& out, std::uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out.write(b, 8);
  }
  static std::uint32_t get_u32(std::istream& in) {
    unsigned char b[4] = {};
    in.read(reinterpret_cast<char*>(b), 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
  }
  static std::uint64_t get_u64(std::istream& in) {
    unsigned char b[8] = {};
    in.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  }

  GridGeometry grid_;
  double truncation_ = 0.3;
  std::vector<TsdfVoxel> voxels_;
  std::vector<Occupancy> labels_;
};

}  // namespace nbv

#endif  // NBV_VOXEL_MAP_HPP_
