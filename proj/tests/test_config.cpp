#include <gtest/gtest.h>

#include <sstream>

#include "nbv/config.hpp"
#include "test_util.hpp"

using namespace nbv;

namespace {

const char* kMinimal = R"(# comment line
[scene]
name = tiny
bounds_min = -1,-1,-1
bounds_max = 1,1,1
start_position = 0,0,0.5

[tsdf]
l_res = 0.1

[sampling]
l_s = 0.5
d_min = 0.5
d_max = 1.0

[camera]
d_n = 0.2
d_f = 2

[primitives]
sphere center=0,0,-0.5 radius=0.3   # trailing comment
box center=0.5,0.5,0 half=0.1,0.1,0.1
plane point=0,0,-0.9 normal=0,0,2
)";

ExperimentConfig parse(const std::string& text) { return parse_experiment_config(text, false); }

int error_line(const std::string& text) {
  try {
    parse(text);
  } catch (const ConfigError& e) {
    return e.line();
  }
  return -1;
}

std::string replace(std::string s, const std::string& from, const std::string& to) {
  s.replace(s.find(from), from.size(), to);
  return s;
}

}  // namespace

TEST(ExperimentConfig, ParsesMinimalScene) {
  const ExperimentConfig c = parse(kMinimal);
  EXPECT_EQ(c.scene.config.name, "tiny");
  EXPECT_EQ(c.scene.primitives.size(), 3u);
  EXPECT_DOUBLE_EQ(c.scene.config.l_res, 0.1);
  EXPECT_DOUBLE_EQ(c.scene.config.d_f, 2.0);
  EXPECT_EQ(c.scene.config.start_position, Vec3(0, 0, 0.5));
  // Plane normals are normalized: the floor is 0.9 below the origin.
  EXPECT_NEAR(c.scene.sdf(Vec3(0.9, -0.9, 0.0)), 0.9, 1e-12);
}

TEST(ExperimentConfig, ShippedScenesLoad) {
  for (const char* name : {"cabin", "room", "landmark", "pillars", "courtyard"}) {
    const ExperimentConfig c = load_experiment_config(fixtures::scene_path(name));
    EXPECT_EQ(c.scene.config.name, name);
    EXPECT_GT(c.scene.config.view_budget, 0);
    EXPECT_FALSE(c.scene.primitives.empty());
  }
}

TEST(ExperimentConfig, ErrorsCarryLineNumbers) {
  EXPECT_EQ(error_line(replace(kMinimal, "l_res = 0.1", "l_rez = 0.1")), 9);
  EXPECT_EQ(error_line(replace(kMinimal, "l_res = 0.1", "l_res = 0.1x")), 9);
  EXPECT_EQ(error_line(replace(kMinimal, "l_s = 0.5", "l_s = 0.5\nl_s = 0.6")), 13);
  EXPECT_EQ(error_line(replace(kMinimal, "[camera]", "[lens]")), 16);
  EXPECT_EQ(error_line(replace(kMinimal, "box center", "cone center")), 22);
  EXPECT_EQ(error_line(replace(kMinimal, "radius=0.3", "radius=-0.3")), 21);
  EXPECT_EQ(error_line(replace(kMinimal, "bounds_min = -1,-1,-1", "bounds_min = -1,-1")), 4);
  EXPECT_EQ(error_line(replace(kMinimal, "d_n = 0.2", "d_n 0.2")), 17);
}

TEST(ExperimentConfig, SemanticChecks) {
  // d_max beyond d_f, start inside geometry, start outside bounds.
  EXPECT_THROW(parse(replace(kMinimal, "d_max = 1.0", "d_max = 3.0")), ConfigError);
  EXPECT_THROW(parse(replace(kMinimal, "start_position = 0,0,0.5", "start_position = 0,0,-0.5")), ConfigError);
  EXPECT_THROW(parse(replace(kMinimal, "start_position = 0,0,0.5", "start_position = 0,0,5")), ConfigError);
  std::string no_prims = kMinimal;
  no_prims.erase(no_prims.find("sphere"));
  EXPECT_THROW(parse(no_prims), ConfigError);
}

TEST(ExperimentConfig, PathPrefixedErrors) {
  try {
    load_experiment_config("/nonexistent/scene.cfg");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent/scene.cfg"), std::string::npos);
  }
}

TEST(Manifest, ParsesAndResolvesRelativePaths) {
  std::istringstream in(R"([run]
scene = scenes/cabin.cfg
planner = rrt
use_approximator = false
use_filter = no
seeds = 1, 2,3
output = out
steps = 4
rays = 10
samples = 8

[dump]
gain_field = true
)");
  const RunManifest m = parse_manifest(in, "/base");
  EXPECT_EQ(m.scene_path, "/base/scenes/cabin.cfg");
  EXPECT_EQ(m.output_dir, "/base/out");
  EXPECT_EQ(m.planner, PlannerKind::Rrt);
  EXPECT_FALSE(m.use_approximator);
  EXPECT_FALSE(m.use_filter);
  EXPECT_EQ(m.seeds, (std::vector<std::uint64_t>{1, 2, 3}));
  EXPECT_EQ(m.steps, 4);
  EXPECT_TRUE(m.dump_gain_field);
  EXPECT_FALSE(m.dump_map);
}

TEST(Manifest, Errors) {
  auto line_of = [](const std::string& text) {
    std::istringstream in(text);
    try {
      parse_manifest(in);
    } catch (const ConfigError& e) {
      return e.line();
    }
    return -1;
  };
  EXPECT_EQ(line_of("[run]\nscene = a.cfg\nseeds = 1\nplanner = bfs\n"), 4);
  EXPECT_EQ(line_of("[run]\nscene = a.cfg\nseeds = 1,-2\n"), 3);
  EXPECT_EQ(line_of("[run]\nscene = a.cfg\nseeds = 1\ncolour = red\n"), 4);
  EXPECT_EQ(line_of("[run]\nseeds = 1\n"), 0);
  EXPECT_THROW(load_manifest("/nonexistent/manifest.cfg"), ConfigError);
}
