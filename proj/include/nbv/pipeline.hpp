#ifndef NBV_PIPELINE_HPP_
#define NBV_PIPELINE_HPP_

#include <algorithm>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "nbv/approximator.hpp"
#include "nbv/common.hpp"
#include "nbv/gain_field.hpp"
#include "nbv/metrics.hpp"
#include "nbv/planner.hpp"
#include "nbv/sampler.hpp"
#include "nbv/scene.hpp"
#include "nbv/voxel_map.hpp"

namespace nbv {

inline constexpr int kRunRecordSchemaVersion = 1;

enum class PlannerKind { AStar, Rrt };

inline const char* to_string(PlannerKind k) { return k == PlannerKind::AStar ? "astar" : "rrt"; }

inline PlannerKind planner_kind_from_string(const std::string& s) {
  if (s == "astar") return PlannerKind::AStar;
  if (s == "rrt") return PlannerKind::Rrt;
  throw ConfigError("unknown planner kind '" + s + "' (expected astar or rrt)");
}

/// Method variant: planner, gain approximator on/off, TSDF view filter on/off.
struct Variant {
  PlannerKind planner = PlannerKind::AStar;
  bool use_approximator = true;
  bool use_filter = true;

  /// V2..V6 for the combinations of the ablation grid, "custom" otherwise.
  std::string label() const {
    const bool astar = planner == PlannerKind::AStar;
    if (!use_filter && !use_approximator) return astar ? "V3" : "V2";
    if (!use_filter && use_approximator) return astar ? "V5" : "V4";
    if (use_filter && use_approximator && astar) return "V6";
    return std::string("custom-") + to_string(planner) + (use_approximator ? "-approx" : "") +
           (use_filter ? "-filter" : "");
  }
};

/// Splitmix64 step, used to derive independent per-stage seeds.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

struct Capture {
  Viewpoint view;
  DepthImage image;
};

struct StepReport {
  int step = 0;
  double t_s = 0.0;        // sampling + gain evaluation
  double t_train = 0.0;
  double t_query = 0.0;
  double t_planner = 0.0;  // planning without gain queries
  double t_sp = 0.0;       // t_train + t_query + t_planner
  std::size_t n_query = 0;
  std::size_t expansions = 0;
  double goal_gain = 0.0;
  double path_length = 0.0;
  std::size_t cheap_evaluations = 0;
  std::size_t expensive_evaluations = 0;
  std::size_t captures = 0;
  std::size_t skipped_captures = 0;
  int goal_attempts = 0;
  OccupancyHistogram histogram;  // after integrating pending captures
  Vec3 start = Vec3::Zero();
  Vec3 goal = Vec3::Zero();
  ViewPath path;
};

/// Raised when no goal of a step is reachable; carries the step's counters
/// up to the failure.
class RunAborted : public Error {
 public:
  RunAborted(const std::string& what, StepReport partial) : Error(what), partial_(std::move(partial)) {}
  const StepReport& partial() const { return partial_; }

 private:
  StepReport partial_;
};

/// Everything a step produced, handed to PipelineOptions::on_step.
struct StepArtifacts {
  const StepReport& report;
  const GainSampleSet& samples;
  const GainApproximator* model;  // null without approximator
  const VoxelMap& map;
  const UncertaintyField& field;
};

struct PipelineOptions {
  Variant variant;
  std::uint64_t seed = 0;
  RayBudget budget;
  NetworkConfig network;
  PlannerConfig planner;  // l_step is taken from the scene
  int threads = 1;
  int steps = -1;  // < 0: scene view budget
  std::size_t metric_samples = 20000;
  int max_goal_attempts = 3;
  bool record_paths = true;
  /// Called on every planner gain query, independently of planner counters.
  std::function<void(const Vec3&)> on_gain_query;
  std::function<void(const StepArtifacts&)> on_step;
};

struct ReconstructionState {
  VoxelMap map;
  UncertaintyField field;
  Vec3 p_s = Vec3::Zero();
  Viewpoint current;
  std::vector<Capture> history;
  std::size_t integrated = 0;
  int step = 0;
  double path_length = 0.0;
};

/// Empty map around the start pose plus one pending capture from it.
inline ReconstructionState init_state(const Scene& scene, std::uint64_t seed) {
  const SceneConfig& cfg = scene.config;
  ReconstructionState s;
  s.map = VoxelMap::for_scene(cfg);
  s.field = UncertaintyField(s.map.grid());
  s.p_s = cfg.start_position;
  s.current = Viewpoint(cfg.start_position, cfg.start_yaw, cfg.start_pitch);
  s.map.seed_free_space(s.p_s, cfg.d_n + cfg.l_res);
  s.history.push_back({s.current, render_depth(scene, s.current, mix_seed(seed, 0xC0FFEE))});
  return s;
}

/// Fuses captures not yet in the map, then refreshes the uncertainty field.
inline void integrate_pending(ReconstructionState& s, const SceneConfig& cfg) {
  for (; s.integrated < s.history.size(); ++s.integrated)
    s.map.integrate(s.history[s.integrated].view, s.history[s.integrated].image, cfg);
  s.field.decay(s.map);
}

namespace detail {

/// Exact gain at a position, looking along the direction chosen for the
/// nearest sampled location, normalized into the range of the sample set.
struct ExactGainOracle {
  const UncertaintyField& field;
  const VoxelMap& map;
  const SceneConfig& cfg;
  const GainSampleSet& samples;
  RayBudget budget;

  double operator()(const Vec3& p) const {
    const Direction& d = samples.directions[samples.nearest(p)];
    return samples.normalize(evaluate_viewpoint(field, map, Viewpoint(p, d.yaw, d.pitch), cfg, budget).gain);
  }
};

template <typename F>
struct HookedOracle {
  const F& inner;
  const std::function<void(const Vec3&)>& hook;
  double operator()(const Vec3& p) const {
    if (hook) hook(p);
    return inner(p);
  }
};

}  // namespace detail

/// One planning step: integrate, sample and score views, fit g_phi, pick the
/// best goal, plan to it, and capture along the way.
inline StepReport run_step(ReconstructionState& state, const Scene& scene,
                           const PipelineOptions& opt, std::uint64_t step_seed) {
  const SceneConfig& cfg = scene.config;
  StepReport rep;
  rep.step = state.step;
  rep.start = state.p_s;

  integrate_pending(state, cfg);
  rep.histogram = state.map.histogram();

  Stopwatch clock;
  SelectionOptions sel;
  sel.use_filter = opt.variant.use_filter;
  sel.budget = opt.budget;
  sel.threads = opt.threads;
  const GainSampleSet samples =
      select_views(state.map, state.field, state.p_s, cfg, sel, mix_seed(step_seed, 1));
  rep.t_s = clock.seconds();
  rep.cheap_evaluations = samples.cheap_evaluations;
  rep.expensive_evaluations = samples.expensive_evaluations;

  std::optional<GainApproximator> model;
  if (opt.variant.use_approximator) {
    NetworkConfig net = opt.network;
    net.seed = mix_seed(step_seed, 2);
    model = fit(samples.positions, samples.gains, state.p_s, cfg.l_s, net);
    rep.t_train = model->train_seconds();
  }

  PlannerConfig pc = opt.planner;
  pc.l_step = cfg.l_step;
  pc.seed = mix_seed(step_seed, 3);

  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return samples.gains[a] > samples.gains[b]; });

  auto plan = [&](const auto& oracle, const Vec3& goal) {
    const detail::HookedOracle<std::decay_t<decltype(oracle)>> hooked{oracle, opt.on_gain_query};
    return opt.variant.planner == PlannerKind::AStar ? plan_astar(state.map, hooked, state.p_s, goal, pc)
                                                     : plan_rrt(state.map, hooked, state.p_s, goal, pc);
  };

  std::optional<ViewPath> path;
  std::size_t goal_index = order.front();
  std::string failures;
  const int attempts = std::min<int>(opt.max_goal_attempts, static_cast<int>(order.size()));
  for (int a = 0; a < attempts && !path; ++a) {
    goal_index = order[a];
    rep.goal_attempts = a + 1;
    try {
      if (model) {
        path = plan(*model, samples.positions[goal_index]);
      } else {
        const detail::ExactGainOracle exact{state.field, state.map, cfg, samples, opt.budget};
        path = plan(exact, samples.positions[goal_index]);
      }
    } catch (const NoPathError& e) {
      failures += std::string(failures.empty() ? "" : "; ") + e.what();
      rep.n_query += e.stats().n_query;
      rep.expansions += e.stats().expansions;
      rep.t_query += e.stats().t_query;
      rep.t_planner += e.stats().t_planner;
    }
  }
  rep.t_sp = rep.t_train + rep.t_query + rep.t_planner;
  if (!path)
    throw RunAborted("step " + std::to_string(state.step) + ": no path to any of the top " +
                         std::to_string(attempts) + " goals (" + failures + ")",
                     rep);

  rep.goal = samples.positions[goal_index];
  rep.goal_gain = samples.gains[goal_index];
  rep.path_length = path->length;
  // Counters include the failed attempts on higher-ranked goals.
  rep.n_query += path->stats.n_query;
  rep.expansions += path->stats.expansions;
  rep.t_query += path->stats.t_query;
  rep.t_planner += path->stats.t_planner;
  rep.t_sp = rep.t_train + rep.t_query + rep.t_planner;

  // Execute: capture every `interval` meters of travel and at the goal.
  const double interval = std::max(2.0 * cfg.l_step, cfg.l_s / 3.0);
  auto capture = [&](const Vec3& p, const Direction& d) {
    if (!(scene.sdf(p) > 0.0)) {
      ++rep.skipped_captures;
      return;
    }
    const Viewpoint v(p, d.yaw, d.pitch);
    state.history.push_back({v, render_depth(scene, v, mix_seed(step_seed, 100 + rep.captures))});
    ++rep.captures;
  };
  double since_capture = 0.0;
  for (std::size_t i = 1; i + 1 < path->nodes.size(); ++i) {
    since_capture += (path->nodes[i].position - path->nodes[i - 1].position).norm();
    if (since_capture >= interval) {
      capture(path->nodes[i].position, samples.directions[samples.nearest(path->nodes[i].position)]);
      since_capture = 0.0;
    }
  }
  capture(rep.goal, samples.directions[goal_index]);

  state.current = Viewpoint(rep.goal, samples.directions[goal_index].yaw, samples.directions[goal_index].pitch);
  state.p_s = rep.goal;
  state.path_length += rep.path_length;
  if (opt.record_paths) rep.path = *path;

  if (opt.on_step) opt.on_step(StepArtifacts{rep, samples, model ? &*model : nullptr, state.map, state.field});
  ++state.step;
  return rep;
}

struct RunRecord {
  std::string scene;
  Variant variant;
  std::uint64_t seed = 0;
  int budget = 0;
  bool aborted = false;
  std::string diagnostic;
  std::vector<StepReport> steps;
  std::optional<StepReport> failed_step;  // counters of the step that aborted the run
  double l_res = 0.0;
  GeometryMetrics metrics;
  double threshold = 0.0;
  std::size_t gt_points = 0;
  std::size_t rec_points = 0;
  OccupancyHistogram final_histogram;

  double total_path_length() const {
    double s = 0.0;
    for (const auto& r : steps) s += r.path_length;
    return s;
  }
  double t_gp() const {
    double s = failed_step ? failed_step->t_s + failed_step->t_sp : 0.0;
    for (const auto& r : steps) s += r.t_s + r.t_sp;
    return s;
  }
  double t_sp_total() const {
    double s = failed_step ? failed_step->t_sp : 0.0;
    for (const auto& r : steps) s += r.t_sp;
    return s;
  }
  std::size_t n_query_total() const {
    std::size_t s = failed_step ? failed_step->n_query : 0;
    for (const auto& r : steps) s += r.n_query;
    return s;
  }
};

/// Runs the full loop for the view budget (or opt.steps) and scores the
/// final map against the scene surface.
inline RunRecord run_experiment(const Scene& scene, const PipelineOptions& opt,
                                ReconstructionState* final_state = nullptr) {
  const SceneConfig& cfg = scene.config;
  RunRecord rec;
  rec.scene = cfg.name;
  rec.variant = opt.variant;
  rec.seed = opt.seed;
  rec.budget = opt.steps >= 0 ? opt.steps : cfg.view_budget;
  rec.l_res = cfg.l_res;

  ReconstructionState state = init_state(scene, opt.seed);
  for (int k = 0; k < rec.budget; ++k) {
    try {
      rec.steps.push_back(run_step(state, scene, opt, mix_seed(opt.seed, 1000 + k)));
    } catch (const RunAborted& e) {
      rec.aborted = true;
      rec.diagnostic = e.what();
      rec.failed_step = e.partial();
      break;
    } catch (const SamplingError& e) {
      rec.aborted = true;
      rec.diagnostic = "step " + std::to_string(k) + ": " + e.what();
      break;
    }
  }
  integrate_pending(state, cfg);
  rec.final_histogram = state.map.histogram();

  rec.threshold = 2.0 * cfg.l_res;
  if (opt.metric_samples > 0) {
    const auto gt = sample_gt_surface(scene, opt.metric_samples, mix_seed(opt.seed, 7));
    const auto rs = sample_reconstructed_surface(state.map, opt.metric_samples, mix_seed(opt.seed, 8), cfg.d_f, false);
    rec.gt_points = gt.points.size();
    rec.rec_points = rs.points.size();
    if (!rs.points.empty()) {
      rec.metrics = geometry_metrics(rs, gt, rec.threshold);
    } else {
      rec.metrics = {std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(), 0.0};
    }
  }
  if (final_state) *final_state = std::move(state);
  return rec;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline nlohmann::json vec_json(const Vec3& v) { return {v.x(), v.y(), v.z()}; }

inline nlohmann::json to_json(const StepReport& r, bool with_path) {
  nlohmann::json j = {{"step", r.step},
                      {"T_s", r.t_s},
                      {"T_train", r.t_train},
                      {"T_query", r.t_query},
                      {"T_planner", r.t_planner},
                      {"T_SP", r.t_sp},
                      {"N_query", r.n_query},
                      {"expansions", r.expansions},
                      {"goal_gain", r.goal_gain},
                      {"path_length", r.path_length},
                      {"cheap_evaluations", r.cheap_evaluations},
                      {"expensive_evaluations", r.expensive_evaluations},
                      {"captures", r.captures},
                      {"skipped_captures", r.skipped_captures},
                      {"goal_attempts", r.goal_attempts},
                      {"occupied", r.histogram.occupied},
                      {"empty", r.histogram.empty},
                      {"unobserved", r.histogram.unobserved},
                      {"start", vec_json(r.start)},
                      {"goal", vec_json(r.goal)}};
  if (with_path) j["path"] = r.path.to_json();
  return j;
}

inline nlohmann::json to_json(const RunRecord& rec, bool with_paths = true) {
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& s : rec.steps) steps.push_back(to_json(s, with_paths));
  auto finite_or_null = [](double v) -> nlohmann::json {
    return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
  };
  return {{"schema_version", kRunRecordSchemaVersion},
          {"scene", rec.scene},
          {"variant", rec.variant.label()},
          {"planner", to_string(rec.variant.planner)},
          {"use_approximator", rec.variant.use_approximator},
          {"use_filter", rec.variant.use_filter},
          {"seed", rec.seed},
          {"budget", rec.budget},
          {"aborted", rec.aborted},
          {"diagnostic", rec.diagnostic},
          {"l_res", rec.l_res},
          {"timing_fields", {"T_s", "T_train", "T_query", "T_planner", "T_SP", "T_GP"}},
          {"steps", steps},
          {"failed_step", rec.failed_step ? to_json(*rec.failed_step, false) : nlohmann::json(nullptr)},
          {"totals",
           {{"path_length", rec.total_path_length()},
            {"T_GP", rec.t_gp()},
            {"T_SP", rec.t_sp_total()},
            {"N_query", rec.n_query_total()},
            {"steps", rec.steps.size()}}},
          {"metrics",
           {{"accuracy", finite_or_null(rec.metrics.accuracy)},
            {"completion", finite_or_null(rec.metrics.completion)},
            {"completion_ratio", rec.metrics.completion_ratio},
            {"threshold", rec.threshold},
            {"gt_points", rec.gt_points},
            {"rec_points", rec.rec_points}}},
          {"final_map",
           {{"occupied", rec.final_histogram.occupied},
            {"empty", rec.final_histogram.empty},
            {"unobserved", rec.final_histogram.unobserved},
            {"total", rec.final_histogram.total()}}}};
}

/// Per-step timing table; timing columns are wall-clock and not reproducible.
inline std::string step_csv(const RunRecord& rec) {
  std::string out = "step,T_s,T_train,T_query,T_planner,T_SP,N_query,P.L.\n";
  for (const auto& s : rec.steps) {
    out += std::to_string(s.step) + "," + std::to_string(s.t_s) + "," + std::to_string(s.t_train) + "," +
           std::to_string(s.t_query) + "," + std::to_string(s.t_planner) + "," + std::to_string(s.t_sp) +
           "," + std::to_string(s.n_query) + "," + std::to_string(s.path_length) + "\n";
  }
  return out;
}

}  // namespace nbv

#endif  // NBV_PIPELINE_HPP_
