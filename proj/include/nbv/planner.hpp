#ifndef NBV_PLANNER_HPP_
#define NBV_PLANNER_HPP_

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <functional>
#include <limits>
#include <queue>
#include <random>
#include <span>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "nbv/common.hpp"
#include "nbv/voxel_map.hpp"

namespace nbv {

/// Anything that maps a position to a gain in [0, 1].
template <typename F>
concept GainOracle = requires(const F& f, const Vec3& p) {
  { f(p) } -> std::convertible_to<double>;
};

struct PlannerConfig {
  double lambda_gain = 0.5;
  double lambda_rank = 1.5;
  double l_step = 0.2;
  std::size_t max_expansions = 200000;
  double goal_bias = 0.1;  // RRT only
  std::uint64_t seed = 0;  // RRT only

  void validate() const {
    if (!(l_step > 0.0)) throw ConfigError("l_step must be positive");
    if (!(lambda_gain >= 0.0 && lambda_gain <= 1.0)) throw ConfigError("lambda_gain must lie in [0, 1]");
    if (!(lambda_rank >= 0.0)) throw ConfigError("lambda_rank must be non-negative");
    if (!(goal_bias >= 0.0 && goal_bias <= 1.0)) throw ConfigError("goal_bias must lie in [0, 1]");
  }
};

/// Informative path cost: length discounted by the mean gain collected.
inline double ip_cost(double path_length, double mean_gain, double lambda_gain) {
  return path_length - lambda_gain * path_length * mean_gain;
}

/// A* expansion priority.
inline double rank_priority(double ip, double distance_to_goal, double lambda_rank) {
  return ip + lambda_rank * distance_to_goal;
}

/// Mean gain over the path nodes after the start node (the start itself is
/// excluded). A start-only path has gain 0.
template <GainOracle F>
double path_gain(std::span<const Vec3> points, const F& gain) {
  if (points.empty()) throw Error("path_gain: empty path");
  if (points.size() == 1) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 1; i < points.size(); ++i) sum += gain(points[i]);
  return sum / static_cast<double>(points.size() - 1);
}

struct PathNode {
  Vec3 position;
  double gain = 0.0;   // oracle value at this node (0 for the start)
  double length = 0.0; // f_d from the start
  double ip = 0.0;
};

struct ViewPath {
  std::vector<PathNode> nodes;
  double length = 0.0;
  double mean_gain = 0.0;
  double terminal_ip = 0.0;
  PlanStats stats;

  std::vector<Vec3> positions() const {
    std::vector<Vec3> out;
    out.reserve(nodes.size());
    for (const auto& n : nodes) out.push_back(n.position);
    return out;
  }

  nlohmann::json to_json() const {
    nlohmann::json jn = nlohmann::json::array();
    for (const auto& n : nodes)
      jn.push_back({{"position", {n.position.x(), n.position.y(), n.position.z()}},
                    {"gain", n.gain},
                    {"length", n.length},
                    {"ip", n.ip}});
    return {{"nodes", jn},
            {"length", length},
            {"mean_gain", mean_gain},
            {"terminal_ip", terminal_ip},
            {"counters",
             {{"expansions", stats.expansions},
              {"n_query", stats.n_query},
              {"t_query", stats.t_query},
              {"t_planner", stats.t_planner}}}};
  }
};

namespace detail {

/// Wraps an oracle with a call counter and a timer.
template <GainOracle F>
class TimedOracle {
 public:
  explicit TimedOracle(const F& f) : f_(f) {}
  double operator()(const Vec3& p) {
    Stopwatch w;
    const double g = f_(p);
    seconds_ += w.seconds();
    ++calls_;
    return g;
  }
  std::size_t calls() const { return calls_; }
  double seconds() const { return seconds_; }

 private:
  const F& f_;
  std::size_t calls_ = 0;
  double seconds_ = 0.0;
};

struct SearchNode {
  Vec3 position;
  int parent = -1;
  double length = 0.0;
  double gain = 0.0;
  double gain_sum = 0.0;
  int gain_count = 0;
  double ip = 0.0;
  bool closed = false;
};

inline ViewPath trivial_path(const Vec3& p) {
  ViewPath path;
  path.nodes.push_back({p, 0.0, 0.0, 0.0});
  return path;
}

inline ViewPath extract_path(const std::vector<SearchNode>& nodes, int terminal) {
  ViewPath path;
  for (int n = terminal; n >= 0; n = nodes[n].parent)
    path.nodes.push_back({nodes[n].position, nodes[n].gain, nodes[n].length, nodes[n].ip});
  std::reverse(path.nodes.begin(), path.nodes.end());
  path.nodes.front().gain = 0.0;
  const SearchNode& t = nodes[terminal];
  path.length = t.length;
  path.mean_gain = t.gain_count > 0 ? t.gain_sum / t.gain_count : 0.0;
  path.terminal_ip = t.ip;
  return path;
}

inline std::uint64_t pack_key(const Index3& k) {
  constexpr std::int64_t kBias = 1 << 20;
  return (static_cast<std::uint64_t>(k.x() + kBias) << 42) |
         (static_cast<std::uint64_t>(k.y() + kBias) << 21) |
         static_cast<std::uint64_t>(k.z() + kBias);
}

}  // namespace detail

/// Best-first informative search on the 26-connected lattice of spacing
/// l_step anchored at p_s. Priority is rank_priority(IP, |p - p_g|); ties go
/// to the shorter f_d, then to the lexicographically smaller lattice key.
/// A node within l_step of p_g with a free segment to it closes the path at
/// p_g. Throws NoPathError when the frontier empties or max_expansions is
/// exceeded.
template <GainOracle F>
ViewPath plan_astar(const VoxelMap& map, const F& gain, const Vec3& p_s, const Vec3& p_g,
                    const PlannerConfig& cfg) {
  cfg.validate();
  Stopwatch clock;
  if ((p_g - p_s).norm() < 1e-12) return detail::trivial_path(p_s);

  detail::TimedOracle<F> oracle(gain);
  const Aabb bounds = map.grid().bounds();
  const double step = cfg.l_step;

  std::vector<detail::SearchNode> nodes;
  std::vector<Index3> keys;
  std::unordered_map<std::uint64_t, int> index;
  constexpr int kGoalSentinel = std::numeric_limits<int>::max();
  int goal_node = -1;

  struct Entry {
    double rank;
    double length;
    Index3 key;
    int node;
    double ip;
  };
  auto worse = [](const Entry& a, const Entry& b) {
    if (a.rank != b.rank) return a.rank > b.rank;
    if (a.length != b.length) return a.length > b.length;
    return std::tie(a.key.x(), a.key.y(), a.key.z()) > std::tie(b.key.x(), b.key.y(), b.key.z());
  };
  std::priority_queue<Entry, std::vector<Entry>, decltype(worse)> open(worse);

  nodes.push_back({p_s, -1, 0.0, 0.0, 0.0, 0, 0.0, false});
  keys.push_back(Index3::Zero());
  index[detail::pack_key(Index3::Zero())] = 0;
  open.push({rank_priority(0.0, (p_g - p_s).norm(), cfg.lambda_rank), 0.0, Index3::Zero(), 0, 0.0});

  std::optional<double> goal_gain;
  std::size_t expansions = 0;

  while (!open.empty()) {
    const Entry e = open.top();
    open.pop();
    detail::SearchNode& cur = nodes[e.node];
    if (cur.closed || e.ip != cur.ip) continue;
    if (e.node == goal_node) {
      ViewPath path = detail::extract_path(nodes, goal_node);
      path.stats.expansions = expansions;
      path.stats.n_query = oracle.calls();
      path.stats.t_query = oracle.seconds();
      path.stats.t_planner = clock.seconds() - oracle.seconds();
      return path;
    }
    cur.closed = true;
    if (++expansions > cfg.max_expansions) break;
    const Vec3 pos = cur.position;
    const Index3 key = keys[e.node];

    // Goal connection.
    const double to_goal = (p_g - pos).norm();
    if (to_goal <= step + 1e-9 && (to_goal < 1e-9 || map.is_path_free(pos, p_g))) {
      detail::SearchNode cand;
      cand.position = p_g;
      if (to_goal < 1e-9) {
        cand = nodes[e.node];
        cand.closed = false;
      } else {
        if (!goal_gain) goal_gain = oracle(p_g);
        cand.parent = e.node;
        cand.length = cur.length + to_goal;
        cand.gain = *goal_gain;
        cand.gain_sum = cur.gain_sum + *goal_gain;
        cand.gain_count = cur.gain_count + 1;
        cand.ip = ip_cost(cand.length, cand.gain_sum / cand.gain_count, cfg.lambda_gain);
      }
      if (goal_node < 0) {
        goal_node = static_cast<int>(nodes.size());
        nodes.push_back(cand);
        keys.push_back(Index3::Constant(kGoalSentinel));
        open.push({cand.ip, cand.length, keys.back(), goal_node, cand.ip});
      } else if (cand.ip < nodes[goal_node].ip ||
                 (cand.ip == nodes[goal_node].ip && cand.length < nodes[goal_node].length)) {
        nodes[goal_node] = cand;
        open.push({cand.ip, cand.length, keys[goal_node], goal_node, cand.ip});
      }
    }

    for (int dz = -1; dz <= 1; ++dz)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          if (dx == 0 && dy == 0 && dz == 0) continue;
          const Index3 nk = key + Index3(dx, dy, dz);
          const Vec3 np = p_s + nk.cast<double>() * step;
          if (!bounds.contains(np)) continue;
          const std::uint64_t packed = detail::pack_key(nk);
          auto it = index.find(packed);
          if (it != index.end() && nodes[it->second].closed) continue;
          if (!map.is_path_free(pos, np)) continue;
          const detail::SearchNode& parent = nodes[e.node];
          const double length = parent.length + std::sqrt(static_cast<double>(dx * dx + dy * dy + dz * dz)) * step;
          int ni;
          if (it == index.end()) {
            ni = static_cast<int>(nodes.size());
            detail::SearchNode fresh;
            fresh.position = np;
            fresh.gain = oracle(np);
            fresh.ip = std::numeric_limits<double>::infinity();
            fresh.length = std::numeric_limits<double>::infinity();
            nodes.push_back(fresh);
            keys.push_back(nk);
            index.emplace(packed, ni);
          } else {
            ni = it->second;
          }
          detail::SearchNode& child = nodes[ni];
          const detail::SearchNode& par = nodes[e.node];
          const double sum = par.gain_sum + child.gain;
          const int count = par.gain_count + 1;
          const double ip = ip_cost(length, sum / count, cfg.lambda_gain);
          if (ip < child.ip || (ip == child.ip && length < child.length)) {
            child.parent = e.node;
            child.length = length;
            child.gain_sum = sum;
            child.gain_count = count;
            child.ip = ip;
            open.push({rank_priority(ip, (p_g - np).norm(), cfg.lambda_rank), length, nk, ni, ip});
          }
        }
  }
  throw NoPathError("plan_astar: no path to goal after " + std::to_string(expansions) + " expansions",
                    {expansions, oracle.calls(), oracle.seconds(), clock.seconds() - oracle.seconds()});
}

/// RRT baseline over the same map and costs. Samples uniformly in the map
/// bounds with goal bias, steers by l_step, and attaches each new node to the
/// tree node within l_step that minimizes its informative path cost. Once
/// the goal region is first reached the tree keeps growing for as many
/// iterations again; the goal branch with the lowest IP is returned.
template <GainOracle F>
ViewPath plan_rrt(const VoxelMap& map, const F& gain, const Vec3& p_s, const Vec3& p_g,
                  const PlannerConfig& cfg) {
  cfg.validate();
  Stopwatch clock;
  if ((p_g - p_s).norm() < 1e-12) return detail::trivial_path(p_s);
  if (cfg.max_expansions == 0) throw NoPathError("plan_rrt: zero expansion budget");

  detail::TimedOracle<F> oracle(gain);
  const Aabb bounds = map.grid().bounds();
  const double step = cfg.l_step;
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  std::vector<detail::SearchNode> nodes;
  nodes.push_back({p_s, -1, 0.0, 0.0, 0.0, 0, 0.0, false});
  std::optional<double> goal_gain;
  std::optional<detail::SearchNode> best_goal;
  std::size_t first_goal_iter = 0;
  std::size_t iter = 0;

  auto attach = [&](int parent, const Vec3& p, double g) {
    const detail::SearchNode& par = nodes[parent];
    detail::SearchNode n;
    n.position = p;
    n.parent = parent;
    n.length = par.length + (p - par.position).norm();
    n.gain = g;
    n.gain_sum = par.gain_sum + g;
    n.gain_count = par.gain_count + 1;
    n.ip = ip_cost(n.length, n.gain_sum / n.gain_count, cfg.lambda_gain);
    return n;
  };

  for (iter = 1; iter <= cfg.max_expansions; ++iter) {
    if (best_goal && iter > 2 * first_goal_iter) break;
    Vec3 q;
    if (unit(rng) < cfg.goal_bias) {
      q = p_g;
    } else {
      for (int k = 0; k < 3; ++k) q[k] = bounds.min[k] + unit(rng) * (bounds.max[k] - bounds.min[k]);
    }
    int nearest = 0;
    double nearest_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      const double d = (nodes[i].position - q).squaredNorm();
      if (d < nearest_d) {
        nearest_d = d;
        nearest = static_cast<int>(i);
      }
    }
    nearest_d = std::sqrt(nearest_d);
    if (nearest_d < 1e-12) continue;
    const Vec3 from = nodes[nearest].position;
    const Vec3 p = nearest_d <= step ? q : Vec3(from + (step / nearest_d) * (q - from));
    if (map.occupancy(p) != Occupancy::Empty || !map.is_path_free(from, p)) continue;

    const double g = oracle(p);
    detail::SearchNode node = attach(nearest, p, g);
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      if (static_cast<int>(i) == nearest || (nodes[i].position - p).norm() > step + 1e-9) continue;
      detail::SearchNode alt = attach(static_cast<int>(i), p, g);
      if (alt.ip < node.ip && map.is_path_free(nodes[i].position, p)) node = alt;
    }
    nodes.push_back(node);
    const int ni = static_cast<int>(nodes.size()) - 1;

    const double to_goal = (p_g - p).norm();
    if (to_goal <= step + 1e-9 && (to_goal < 1e-9 || map.is_path_free(p, p_g))) {
      detail::SearchNode goal = node;
      if (to_goal >= 1e-9) {
        if (!goal_gain) goal_gain = oracle(p_g);
        goal = attach(ni, p_g, *goal_gain);
      }
      if (!best_goal || goal.ip < best_goal->ip) best_goal = goal;
      if (first_goal_iter == 0) first_goal_iter = iter;
    }
  }
  if (!best_goal)
    throw NoPathError("plan_rrt: goal not reached after " + std::to_string(iter - 1) + " iterations",
                      {iter - 1, oracle.calls(), oracle.seconds(), clock.seconds() - oracle.seconds()});
  nodes.push_back(*best_goal);
  ViewPath path = detail::extract_path(nodes, static_cast<int>(nodes.size()) - 1);
  path.stats.expansions = iter - 1;
  path.stats.n_query = oracle.calls();
  path.stats.t_query = oracle.seconds();
  path.stats.t_planner = clock.seconds() - oracle.seconds();
  return path;
}

}  // namespace nbv

#endif  // NBV_PLANNER_HPP_
