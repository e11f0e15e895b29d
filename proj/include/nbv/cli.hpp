#ifndef NBV_CLI_HPP_
#define NBV_CLI_HPP_

#include <glob.h>

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "nbv/config.hpp"
#include "nbv/pipeline.hpp"

namespace nbv {

enum ExitCode : int { kExitOk = 0, kExitAborted = 1, kExitConfigError = 2 };

inline double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

inline std::string record_stem(const std::string& scene, const Variant& v, std::uint64_t seed) {
  return scene + "_" + v.label() + "_" + to_string(v.planner) + "_seed" + std::to_string(seed);
}

/// Flat metrics row for table assembly.
inline std::string metrics_csv(const RunRecord& rec) {
  std::ostringstream out;
  out << std::setprecision(10);
  out << "scene,variant,seed,aborted,steps,Acc,Comp,C.R.,N_query,P.L.,T_SP_s,T_GP_s\n";
  out << rec.scene << "," << rec.variant.label() << "," << rec.seed << "," << rec.aborted << ","
      << rec.steps.size() << "," << rec.metrics.accuracy << "," << rec.metrics.completion << ","
      << rec.metrics.completion_ratio << "," << rec.n_query_total() << "," << rec.total_path_length()
      << "," << rec.t_sp_total() << "," << rec.t_gp() << "\n";
  return out.str();
}

/// g_phi evaluated on a horizontal grid through the current position.
inline nlohmann::json model_slice_json(const GainApproximator& model, const Vec3& center, double radius,
                                       int n = 41) {
  std::vector<double> values;
  values.reserve(static_cast<std::size_t>(n) * n);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) {
      const Vec3 p = center + Vec3(radius * (2.0 * i / (n - 1) - 1.0), radius * (2.0 * j / (n - 1) - 1.0), 0.0);
      values.push_back(model(p));
    }
  return {{"center", vec_json(center)}, {"half_extent", radius}, {"n", n},
          {"layout", "row-major (y, x)"}, {"g_phi", values}};
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << text;
}

inline int cmd_run(const RunManifest& m, std::ostream& log = std::cout, std::ostream& err = std::cerr) {
  namespace fs = std::filesystem;
  ExperimentConfig cfg;
  try {
    cfg = load_experiment_config(m.scene_path);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfigError;
  }
  std::error_code ec;
  fs::create_directories(m.output_dir, ec);
  if (ec || !fs::is_directory(m.output_dir)) {
    err << "config error: output directory '" << m.output_dir << "' is not writable\n";
    return kExitConfigError;
  }

  PipelineOptions opt;
  opt.variant = {m.planner, m.use_approximator, m.use_filter};
  opt.budget = {m.rays, m.samples};
  opt.network = cfg.network;
  opt.planner = cfg.planner;
  opt.threads = thread_budget();
  opt.steps = m.steps;
  opt.metric_samples = m.metric_samples;
  opt.record_paths = m.dump_paths;

  int status = kExitOk;
  for (const std::uint64_t seed : m.seeds) {
    opt.seed = seed;
    const std::string stem = record_stem(cfg.scene.config.name, opt.variant, seed);
    const fs::path dump_dir = fs::path(m.output_dir) / (stem + "_dumps");
    if (m.dump_gain_field || m.dump_map) fs::create_directories(dump_dir);
    opt.on_step = [&](const StepArtifacts& a) {
      const std::string tag = "step" + std::to_string(a.report.step);
      if (m.dump_gain_field) {
        nlohmann::json j = {{"schema_version", kRunRecordSchemaVersion},
                            {"step", a.report.step},
                            {"p_s", vec_json(a.report.start)},
                            {"p_g", vec_json(a.report.goal)},
                            {"field", a.field.slices_json()},
                            {"samples", a.samples.to_json()}};
        if (a.model) {
          j["model"] = model_slice_json(*a.model, a.report.start, cfg.scene.config.l_s);
          a.model->write_loss_csv((dump_dir / (tag + "_loss.csv")).string());
        }
        write_text(dump_dir / (tag + "_gain.json"), j.dump());
      }
      if (m.dump_map) {
        a.map.save((dump_dir / (tag + "_map.bin")).string());
        write_text(dump_dir / (tag + "_map_histogram.json"), a.map.histogram_json().dump(2));
      }
    };
    const RunRecord rec = run_experiment(cfg.scene, opt);
    write_text(fs::path(m.output_dir) / (stem + ".json"), to_json(rec, m.dump_paths).dump(2));
    write_text(fs::path(m.output_dir) / (stem + "_steps.csv"), step_csv(rec));
    write_text(fs::path(m.output_dir) / (stem + "_metrics.csv"), metrics_csv(rec));
    log << stem << ": steps=" << rec.steps.size() << " P.L.=" << rec.total_path_length()
        << " C.R.=" << rec.metrics.completion_ratio << (rec.aborted ? " ABORTED" : "") << "\n";
    if (rec.aborted) {
      err << stem << ": " << rec.diagnostic << "\n";
      status = kExitAborted;
    }
  }
  return status;
}

inline std::vector<std::string> expand_glob(const std::string& pattern) {
  glob_t g{};
  std::vector<std::string> out;
  if (::glob(pattern.c_str(), 0, nullptr, &g) == 0)
    for (std::size_t i = 0; i < g.gl_pathc; ++i) out.emplace_back(g.gl_pathv[i]);
  globfree(&g);
  std::sort(out.begin(), out.end());
  return out;
}

/// Per (scene, variant) medians over the matching run records.
inline std::string summary_table(const std::vector<std::string>& paths) {
  if (paths.empty()) throw ConfigError("no run records matched");
  struct Row {
    std::vector<double> acc, comp, cr, nq, tsp, tgp, pl;
  };
  std::map<std::pair<std::string, std::string>, Row> rows;
  for (const auto& path : paths) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read run record '" + path + "'");
    nlohmann::json j;
    try {
      in >> j;
    } catch (const std::exception& e) {
      throw ConfigError("run record '" + path + "' is not valid JSON: " + e.what());
    }
    if (!j.contains("schema_version") || j["schema_version"] != kRunRecordSchemaVersion)
      throw ConfigError("run record '" + path + "' has schema_version " +
                        (j.contains("schema_version") ? j["schema_version"].dump() : std::string("(missing)")) +
                        ", expected " + std::to_string(kRunRecordSchemaVersion));
    try {
      Row& r = rows[{j.at("scene").get<std::string>(), j.at("variant").get<std::string>()}];
      const auto& m = j.at("metrics");
      const auto& t = j.at("totals");
      auto num = [](const nlohmann::json& v) {
        return v.is_null() ? std::numeric_limits<double>::infinity() : v.get<double>();
      };
      r.acc.push_back(num(m.at("accuracy")));
      r.comp.push_back(num(m.at("completion")));
      r.cr.push_back(m.at("completion_ratio").get<double>());
      r.nq.push_back(t.at("N_query").get<double>());
      r.tsp.push_back(t.at("T_SP").get<double>());
      r.tgp.push_back(t.at("T_GP").get<double>());
      r.pl.push_back(t.at("path_length").get<double>());
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("run record '" + path + "': " + e.what());
    }
  }
  std::ostringstream out;
  out << std::setprecision(10);
  out << "scene,variant,runs,Acc,Comp,C.R.,N_query,P.L.,T_SP_s,T_GP_s\n";
  for (const auto& [key, r] : rows)
    out << key.first << "," << key.second << "," << r.pl.size() << "," << median(r.acc) << ","
        << median(r.comp) << "," << median(r.cr) << "," << median(r.nq) << "," << median(r.pl) << ","
        << median(r.tsp) << "," << median(r.tgp) << "\n";
  return out.str();
}

inline int cmd_table(const std::string& pattern, const std::string& out_path, std::ostream& err = std::cerr) {
  try {
    const std::string table = summary_table(expand_glob(pattern));
    write_text(out_path, table);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfigError;
  }
  return kExitOk;
}

struct BenchReport {
  int rays = 0;
  int samples = 0;
  std::vector<double> exact_seconds;
  std::vector<double> query_seconds;
  double median_exact = 0.0;
  double median_query = 0.0;
  double ratio = 0.0;         // median exact / median query
  double median_pair_ratio = 0.0;

  nlohmann::json to_json() const {
    return {{"rays", rays}, {"samples", samples}, {"repetitions", exact_seconds.size()},
            {"median_exact_s", median_exact}, {"median_query_s", median_query},
            {"ratio", ratio}, {"median_pair_ratio", median_pair_ratio}};
  }
};

/// Paired timings of the exact gain (ray uncertainty + view depth + decay)
/// and a g_phi query at the same viewpoints. The map is built from the start
/// capture and one step of the pipeline so that rays meet real structure.
inline BenchReport run_bench(const ExperimentConfig& cfg, int rays, int samples, int reps,
                             std::uint64_t seed = 1) {
  if (reps < 10) throw ConfigError("bench needs at least 10 repetitions");
  if (rays < 1 || samples < 1) throw ConfigError("bench needs rays >= 1 and samples >= 1");
  const Scene& scene = cfg.scene;
  const SceneConfig& sc = scene.config;
  ReconstructionState state = init_state(scene, seed);
  integrate_pending(state, sc);

  SelectionOptions sel;
  sel.budget = {rays, samples};
  const GainSampleSet set = select_views(state.map, state.field, state.p_s, sc, sel, mix_seed(seed, 1));
  NetworkConfig net = cfg.network;
  net.seed = mix_seed(seed, 2);
  const GainApproximator model = fit(set.positions, set.gains, state.p_s, sc.l_s, net);

  const auto views = sample_locations(state.map, state.p_s, sc.l_s, reps, mix_seed(seed, 3));
  const auto dirs = direction_candidates(sc);
  BenchReport rep;
  rep.rays = rays;
  rep.samples = samples;
  std::vector<double> pair_ratio;
  volatile double sink = 0.0;
  for (int k = 0; k < reps; ++k) {
    const Direction& d = dirs[static_cast<std::size_t>(k) % dirs.size()];
    const Viewpoint v(views[k], d.yaw, d.pitch);
    auto t0 = std::chrono::steady_clock::now();
    sink = sink + evaluate_viewpoint(state.field, state.map, v, sc, {rays, samples}).gain;
    auto t1 = std::chrono::steady_clock::now();
    sink = sink + model(views[k]);
    auto t2 = std::chrono::steady_clock::now();
    rep.exact_seconds.push_back(std::chrono::duration<double>(t1 - t0).count());
    rep.query_seconds.push_back(std::max(std::chrono::duration<double>(t2 - t1).count(), 1e-9));
    pair_ratio.push_back(rep.exact_seconds.back() / rep.query_seconds.back());
  }
  rep.median_exact = median(rep.exact_seconds);
  rep.median_query = median(rep.query_seconds);
  rep.ratio = rep.median_exact / rep.median_query;
  rep.median_pair_ratio = median(pair_ratio);
  return rep;
}

inline int cmd_bench(const std::string& scene_path, int rays, int samples, int reps,
                     std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  try {
    const BenchReport r = run_bench(load_experiment_config(scene_path), rays, samples, reps);
    out << r.to_json().dump(2) << "\n";
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfigError;
  }
  return kExitOk;
}

}  // namespace nbv

#endif  // NBV_CLI_HPP_
