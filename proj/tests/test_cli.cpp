#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "nbv/cli.hpp"
#include "test_util.hpp"

using namespace nbv;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("nbv_cli_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

RunManifest quick_manifest(const fs::path& out) {
  RunManifest m;
  m.scene_path = fixtures::scene_path("cabin");
  m.seeds = {1, 2, 3};
  m.output_dir = out.string();
  m.steps = 1;
  m.rays = 12;
  m.samples = 12;
  m.metric_samples = 500;
  return m;
}

int run_binary(const std::string& args) {
  const std::string cmd = std::string(NBV_CLI_BIN) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Cli, RunWritesOneRecordPerSeedAndDumps) {
  const fs::path out = fresh_dir("run");
  RunManifest m = quick_manifest(out);
  m.dump_gain_field = true;
  m.dump_map = true;
  std::ostringstream log, err;
  ASSERT_EQ(cmd_run(m, log, err), kExitOk) << err.str();
  for (int seed = 1; seed <= 3; ++seed) {
    const std::string stem = "cabin_V6_astar_seed" + std::to_string(seed);
    EXPECT_TRUE(fs::exists(out / (stem + ".json")));
    EXPECT_TRUE(fs::exists(out / (stem + "_steps.csv")));
    EXPECT_TRUE(fs::exists(out / (stem + "_metrics.csv")));
    const fs::path dumps = out / (stem + "_dumps");
    EXPECT_TRUE(fs::exists(dumps / "step0_gain.json"));
    EXPECT_TRUE(fs::exists(dumps / "step0_loss.csv"));
    EXPECT_TRUE(fs::exists(dumps / "step0_map.bin"));
    EXPECT_TRUE(fs::exists(dumps / "step0_map_histogram.json"));
  }
  std::size_t records = 0;
  for (const auto& e : fs::directory_iterator(out)) records += e.path().extension() == ".json";
  EXPECT_EQ(records, 3u);

  std::ifstream in(out / "cabin_V6_astar_seed1_dumps" / "step0_gain.json");
  const auto j = nlohmann::json::parse(in);
  EXPECT_EQ(j.at("schema_version"), kRunRecordSchemaVersion);
  EXPECT_TRUE(j.contains("model"));
  EXPECT_TRUE(j.contains("samples"));
  const VoxelMap map = VoxelMap::load((out / "cabin_V6_astar_seed1_dumps" / "step0_map.bin").string());
  EXPECT_GT(map.size(), 0u);
}

TEST(Cli, InvalidScenePathIsAConfigError) {
  const fs::path out = fresh_dir("bad");
  RunManifest m = quick_manifest(out);
  m.scene_path = "/nonexistent/scene.cfg";
  std::ostringstream log, err;
  EXPECT_EQ(cmd_run(m, log, err), kExitConfigError);
  EXPECT_NE(err.str().find("/nonexistent/scene.cfg"), std::string::npos);

  std::ofstream(out / "manifest.cfg") << "[run]\nscene = /nonexistent/scene.cfg\nseeds = 1\n";
  EXPECT_EQ(run_binary("run --manifest " + (out / "manifest.cfg").string()), 2);
  EXPECT_EQ(run_binary("run --manifest " + (out / "missing.cfg").string()), 2);
  EXPECT_EQ(run_binary("frobnicate"), 2);
}

TEST(Cli, TableMediansAndSchemaCheck) {
  const fs::path out = fresh_dir("table");
  RunManifest m = quick_manifest(out);
  m.seeds = {4};
  std::ostringstream log, err;
  ASSERT_EQ(cmd_run(m, log, err), kExitOk) << err.str();
  m.use_filter = false;
  ASSERT_EQ(cmd_run(m, log, err), kExitOk) << err.str();

  const auto rows = [&] {
    const std::string t = summary_table(expand_glob((out / "*.json").string()));
    std::istringstream in(t);
    std::vector<std::string> v;
    for (std::string l; std::getline(in, l);) v.push_back(l);
    return v;
  }();
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0], "scene,variant,runs,Acc,Comp,C.R.,N_query,P.L.,T_SP_s,T_GP_s");
  EXPECT_EQ(rows[1].rfind("cabin,V5,1,", 0), 0u);
  EXPECT_EQ(rows[2].rfind("cabin,V6,1,", 0), 0u);

  // One record: the median row equals that record's own values.
  std::ifstream in(out / "cabin_V6_astar_seed4.json");
  const auto j = nlohmann::json::parse(in);
  const std::string single = summary_table({(out / "cabin_V6_astar_seed4.json").string()});
  std::istringstream row(single.substr(single.find('\n') + 1));
  std::vector<std::string> cells;
  for (std::string c; std::getline(row, c, ',');) cells.push_back(c);
  ASSERT_EQ(cells.size(), 10u);
  EXPECT_NEAR(std::stod(cells[5]), j["metrics"]["completion_ratio"].get<double>(), 1e-8);
  EXPECT_NEAR(std::stod(cells[7]), j["totals"]["path_length"].get<double>(), 1e-8);
  EXPECT_NEAR(std::stod(cells[6]), j["totals"]["N_query"].get<double>(), 1e-8);

  auto bad = j;
  bad["schema_version"] = 99;
  std::ofstream(out / "old.json") << bad.dump();
  try {
    summary_table(expand_glob((out / "*.json").string()));
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("old.json"), std::string::npos);
  }
  EXPECT_EQ(cmd_table((out / "*.json").string(), (out / "t.csv").string(), err), kExitConfigError);
  EXPECT_EQ(cmd_table((out / "nothing*.json").string(), (out / "t.csv").string(), err), kExitConfigError);
}

TEST(Cli, MetricsCsvHeader) {
  RunRecord rec;
  rec.scene = "x";
  const auto lines = [&] {
    std::istringstream in(metrics_csv(rec));
    std::vector<std::string> v;
    for (std::string l; std::getline(in, l);) v.push_back(l);
    return v;
  }();
  ASSERT_EQ(lines.size(), 2u);
  EXPECT_EQ(lines[0], "scene,variant,seed,aborted,steps,Acc,Comp,C.R.,N_query,P.L.,T_SP_s,T_GP_s");
}

TEST(Cli, BenchSmallestBudget) {
  const ExperimentConfig cfg = load_experiment_config(fixtures::scene_path("cabin"));
  const BenchReport r = run_bench(cfg, 1, 1, 10);
  EXPECT_EQ(r.exact_seconds.size(), 10u);
  EXPECT_GT(r.median_exact, 0.0);
  EXPECT_GT(r.median_query, 0.0);
  EXPECT_THROW(run_bench(cfg, 1, 1, 5), ConfigError);
  EXPECT_EQ(run_binary(std::string("bench --scene ") + fixtures::scene_path("cabin") + " --rays 1 --samples 1 --reps 10"), 0);
  EXPECT_EQ(median({3.0, 1.0, 2.0, 10.0}), 2.5);
}
