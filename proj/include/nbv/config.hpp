#ifndef NBV_CONFIG_HPP_
#define NBV_CONFIG_HPP_

#include <algorithm>
#include <cctype>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "nbv/approximator.hpp"
#include "nbv/common.hpp"
#include "nbv/pipeline.hpp"
#include "nbv/planner.hpp"
#include "nbv/scene.hpp"

namespace nbv {

// Config files are flat "key = value" text grouped in [sections]. '#' starts
// a comment. The [primitives] section holds one primitive per line:
//
//   sphere center=x,y,z radius=r
//   box    center=x,y,z half=hx,hy,hz
//   plane  point=x,y,z normal=nx,ny,nz

namespace config_detail {

inline std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

inline double parse_double(const std::string& s, int line, const std::string& key) {
  const std::string t = trim(s);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || ec != std::errc() || ptr != t.data() + t.size())
    throw ConfigError("'" + key + "': expected a number, got '" + t + "'", line);
  return v;
}

inline long parse_int(const std::string& s, int line, const std::string& key) {
  const std::string t = trim(s);
  long v = 0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || ec != std::errc() || ptr != t.data() + t.size())
    throw ConfigError("'" + key + "': expected an integer, got '" + t + "'", line);
  return v;
}

inline bool parse_bool(const std::string& s, int line, const std::string& key) {
  const std::string t = trim(s);
  if (t == "true" || t == "1" || t == "yes" || t == "on") return true;
  if (t == "false" || t == "0" || t == "no" || t == "off") return false;
  throw ConfigError("'" + key + "': expected true or false, got '" + t + "'", line);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(trim(cur));
  return out;
}

inline Vec3 parse_vec3(const std::string& s, int line, const std::string& key) {
  const auto parts = split(s, ',');
  if (parts.size() != 3) throw ConfigError("'" + key + "': expected x,y,z", line);
  return {parse_double(parts[0], line, key), parse_double(parts[1], line, key),
          parse_double(parts[2], line, key)};
}

inline ScenePrimitive parse_primitive(const std::string& text, int line) {
  std::istringstream in(text);
  std::string kind;
  in >> kind;
  std::map<std::string, std::string> args;
  std::string tok;
  while (in >> tok) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos) throw ConfigError("primitive argument '" + tok + "' is not key=value", line);
    if (!args.emplace(tok.substr(0, eq), tok.substr(eq + 1)).second)
      throw ConfigError("duplicate primitive argument '" + tok.substr(0, eq) + "'", line);
  }
  auto take = [&](const std::string& key) {
    const auto it = args.find(key);
    if (it == args.end()) throw ConfigError(kind + ": missing '" + key + "'", line);
    std::string v = it->second;
    args.erase(it);
    return v;
  };
  ScenePrimitive prim;
  if (kind == "sphere") {
    const Vec3 c = parse_vec3(take("center"), line, "center");
    prim = Sphere{c, parse_double(take("radius"), line, "radius")};
  } else if (kind == "box") {
    const Vec3 c = parse_vec3(take("center"), line, "center");
    prim = Box{c, parse_vec3(take("half"), line, "half")};
  } else if (kind == "plane") {
    const Vec3 p = parse_vec3(take("point"), line, "point");
    prim = Plane{p, parse_vec3(take("normal"), line, "normal")};
  } else {
    throw ConfigError("unknown primitive '" + kind + "' (expected sphere, box or plane)", line);
  }
  if (!args.empty()) throw ConfigError(kind + ": unknown argument '" + args.begin()->first + "'", line);
  try {
    validate_primitive(prim);
  } catch (const ConfigError& e) {
    throw ConfigError(e.what(), line);
  }
  return prim;
}

struct Entry {
  std::string value;
  int line = 0;
};

/// section -> key -> entry, plus the raw primitive lines.
struct RawConfig {
  std::map<std::string, std::map<std::string, Entry>> sections;
  std::vector<std::pair<std::string, int>> primitive_lines;
};

inline RawConfig tokenize(std::istream& in, const std::vector<std::string>& known_sections) {
  RawConfig raw;
  std::string section;
  std::string text;
  int line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (const auto hash = text.find('#'); hash != std::string::npos) text.erase(hash);
    text = trim(text);
    if (text.empty()) continue;
    if (text.front() == '[') {
      if (text.back() != ']') throw ConfigError("malformed section header '" + text + "'", line);
      section = trim(text.substr(1, text.size() - 2));
      if (std::find(known_sections.begin(), known_sections.end(), section) == known_sections.end())
        throw ConfigError("unknown section [" + section + "]", line);
      raw.sections[section];
      continue;
    }
    if (section.empty()) throw ConfigError("entry outside of any section", line);
    if (section == "primitives") {
      raw.primitive_lines.emplace_back(text, line);
      continue;
    }
    const auto eq = text.find('=');
    if (eq == std::string::npos) throw ConfigError("expected key = value", line);
    const std::string key = trim(text.substr(0, eq));
    if (key.empty()) throw ConfigError("empty key", line);
    if (!raw.sections[section].emplace(key, Entry{trim(text.substr(eq + 1)), line}).second)
      throw ConfigError("duplicate key '" + key + "' in [" + section + "]", line);
  }
  return raw;
}

/// Consumes keys of one section and reports leftovers as unknown.
class SectionReader {
 public:
  SectionReader(RawConfig& raw, const std::string& name) : name_(name) {
    if (auto it = raw.sections.find(name); it != raw.sections.end()) entries_ = &it->second;
  }

  template <typename T, typename Parse>
  void read(const std::string& key, T& out, Parse parse) {
    if (!entries_) return;
    auto it = entries_->find(key);
    if (it == entries_->end()) return;
    out = parse(it->second.value, it->second.line, key);
    entries_->erase(it);
  }
  void number(const std::string& key, double& out) { read(key, out, parse_double); }
  void integer(const std::string& key, int& out) {
    read(key, out, [](const std::string& s, int l, const std::string& k) { return static_cast<int>(parse_int(s, l, k)); });
  }
  void size(const std::string& key, std::size_t& out) {
    read(key, out, [](const std::string& s, int l, const std::string& k) {
      const long v = parse_int(s, l, k);
      if (v < 0) throw ConfigError("'" + k + "' must be non-negative", l);
      return static_cast<std::size_t>(v);
    });
  }
  void vec(const std::string& key, Vec3& out) { read(key, out, parse_vec3); }
  void boolean(const std::string& key, bool& out) { read(key, out, parse_bool); }
  void text(const std::string& key, std::string& out) {
    read(key, out, [](const std::string& s, int, const std::string&) { return s; });
  }
  bool has(const std::string& key) const { return entries_ && entries_->count(key) > 0; }
  int line_of(const std::string& key) const { return entries_->at(key).line; }

  void finish() const {
    if (entries_ && !entries_->empty()) {
      const auto& [key, e] = *entries_->begin();
      throw ConfigError("unknown key '" + key + "' in [" + name_ + "]", e.line);
    }
  }

 private:
  std::string name_;
  std::map<std::string, Entry>* entries_ = nullptr;
};

}  // namespace config_detail

/// A scene file: geometry, scene parameters and per-scene planner/network
/// overrides.
struct ExperimentConfig {
  Scene scene;
  PlannerConfig planner;
  NetworkConfig network;
};

inline ExperimentConfig parse_experiment_config(std::istream& in) {
  using namespace config_detail;
  RawConfig raw =
      tokenize(in, {"scene", "tsdf", "sampling", "camera", "planner", "network", "primitives"});
  ExperimentConfig out;
  SceneConfig& c = out.scene.config;

  SectionReader scene(raw, "scene");
  scene.text("name", c.name);
  scene.vec("bounds_min", c.bounds.min);
  scene.vec("bounds_max", c.bounds.max);
  scene.integer("view_budget", c.view_budget);
  scene.vec("start_position", c.start_position);
  scene.number("start_yaw", c.start_yaw);
  scene.number("start_pitch", c.start_pitch);
  scene.number("k_noise", c.k_noise);
  scene.finish();

  SectionReader tsdf(raw, "tsdf");
  tsdf.number("l_res", c.l_res);
  tsdf.finish();

  SectionReader sampling(raw, "sampling");
  sampling.number("l_s", c.l_s);
  sampling.integer("N_pitch", c.n_pitch);
  sampling.integer("N_yaw", c.n_yaw);
  sampling.integer("N_loc", c.n_loc);
  sampling.number("d_min", c.d_min);
  sampling.number("d_max", c.d_max);
  sampling.finish();

  SectionReader camera(raw, "camera");
  camera.integer("width", c.camera.width);
  camera.integer("height", c.camera.height);
  camera.number("vfov_deg", c.camera.vfov_deg);
  camera.number("d_n", c.d_n);
  camera.number("d_f", c.d_f);
  camera.finish();

  SectionReader planner(raw, "planner");
  planner.number("l_step", c.l_step);
  planner.number("lambda_gain", out.planner.lambda_gain);
  planner.number("lambda_rank", out.planner.lambda_rank);
  planner.size("max_expansions", out.planner.max_expansions);
  planner.number("goal_bias", out.planner.goal_bias);
  planner.finish();
  out.planner.l_step = c.l_step;

  SectionReader network(raw, "network");
  network.integer("layers", out.network.layers);
  network.integer("width", out.network.width);
  network.number("learning_rate", out.network.learning_rate);
  network.integer("epochs", out.network.epochs);
  network.integer("batch_size", out.network.batch_size);
  network.integer("patience", out.network.patience);
  network.number("min_improvement", out.network.min_improvement);
  network.finish();

  for (const auto& [text, line] : raw.primitive_lines)
    out.scene.primitives.push_back(parse_primitive(text, line));
  if (out.scene.primitives.empty()) throw ConfigError("scene has no primitives");

  c.validate();
  out.planner.validate();
  out.network.validate();
  if (!c.bounds.contains(c.start_position)) throw ConfigError("start_position lies outside the bounds");
  if (!(out.scene.sdf(c.start_position) > 0.0)) throw ConfigError("start_position lies inside geometry");
  return out;
}

inline ExperimentConfig parse_experiment_config(const std::string& text_or_path, bool is_path) {
  if (!is_path) {
    std::istringstream in(text_or_path);
    return parse_experiment_config(in);
  }
  std::ifstream in(text_or_path);
  if (!in) throw ConfigError("cannot open scene config '" + text_or_path + "'");
  try {
    return parse_experiment_config(in);
  } catch (const ConfigError& e) {
    throw ConfigError(text_or_path + ": " + e.what());
  }
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  return parse_experiment_config(path, true);
}

/// What to run: one scene, one variant, several seeds.
struct RunManifest {
  std::string scene_path;
  PlannerKind planner = PlannerKind::AStar;
  bool use_approximator = true;
  bool use_filter = true;
  std::vector<std::uint64_t> seeds;
  std::string output_dir = "runs";
  int steps = -1;
  int rays = 100;
  int samples = 64;
  std::size_t metric_samples = 20000;
  bool dump_gain_field = false;
  bool dump_map = false;
  bool dump_paths = true;
};

/// Relative paths inside the manifest resolve against `base_dir`.
inline RunManifest parse_manifest(std::istream& in, const std::filesystem::path& base_dir = {}) {
  using namespace config_detail;
  RawConfig raw = tokenize(in, {"run", "dump"});
  RunManifest m;
  SectionReader run(raw, "run");
  if (!run.has("scene")) throw ConfigError("manifest: missing 'scene' in [run]");
  run.text("scene", m.scene_path);
  if (run.has("planner")) {
    const int line = run.line_of("planner");
    std::string p;
    run.text("planner", p);
    try {
      m.planner = planner_kind_from_string(p);
    } catch (const ConfigError& e) {
      throw ConfigError(e.what(), line);
    }
  }
  run.boolean("use_approximator", m.use_approximator);
  run.boolean("use_filter", m.use_filter);
  if (!run.has("seeds")) throw ConfigError("manifest: missing 'seeds' in [run]");
  run.read("seeds", m.seeds, [](const std::string& s, int line, const std::string& key) {
    std::vector<std::uint64_t> out;
    for (const auto& part : split(s, ',')) {
      const long v = parse_int(part, line, key);
      if (v < 0) throw ConfigError("seeds must be non-negative", line);
      out.push_back(static_cast<std::uint64_t>(v));
    }
    if (out.empty()) throw ConfigError("seeds must be non-empty", line);
    return out;
  });
  run.text("output", m.output_dir);
  run.integer("steps", m.steps);
  run.integer("rays", m.rays);
  run.integer("samples", m.samples);
  run.size("metric_samples", m.metric_samples);
  run.finish();

  SectionReader dump(raw, "dump");
  dump.boolean("gain_field", m.dump_gain_field);
  dump.boolean("map", m.dump_map);
  dump.boolean("paths", m.dump_paths);
  dump.finish();

  if (m.rays < 1 || m.samples < 1) throw ConfigError("manifest: rays and samples must be >= 1");
  namespace fs = std::filesystem;
  if (!base_dir.empty()) {
    if (fs::path(m.scene_path).is_relative()) m.scene_path = (base_dir / m.scene_path).string();
    if (fs::path(m.output_dir).is_relative()) m.output_dir = (base_dir / m.output_dir).string();
  }
  return m;
}

inline RunManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open manifest '" + path + "'");
  try {
    return parse_manifest(in, std::filesystem::path(path).parent_path());
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

}  // namespace nbv

#endif  // NBV_CONFIG_HPP_
