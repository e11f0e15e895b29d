#include <iostream>

#include "CLI11.hpp"
#include "nbv/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Informative view path planning on synthetic scenes"};
  app.require_subcommand(1);

  std::string manifest;
  auto* run = app.add_subcommand("run", "Run the experiments listed in a manifest");
  run->add_option("--manifest", manifest, "Manifest file")->required();

  std::string pattern, out = "summary.csv";
  auto* table = app.add_subcommand("table", "Summarize run records into a CSV of per-variant medians");
  table->add_option("glob", pattern, "Glob matching run record JSON files")->required();
  table->add_option("--out", out, "Output CSV path");

  std::string scene;
  int rays = 100, samples = 64, reps = 100;
  auto* bench = app.add_subcommand("bench", "Time exact gain evaluation against g_phi queries");
  bench->add_option("--scene", scene, "Scene config")->required();
  bench->add_option("--rays", rays, "Rays per view");
  bench->add_option("--samples", samples, "Samples per ray");
  bench->add_option("--reps", reps, "Paired evaluations (>= 10)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : nbv::kExitConfigError;
  }

  try {
    if (*run) {
      nbv::RunManifest m;
      try {
        m = nbv::load_manifest(manifest);
      } catch (const nbv::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return nbv::kExitConfigError;
      }
      return nbv::cmd_run(m);
    }
    if (*table) return nbv::cmd_table(pattern, out);
    if (*bench) return nbv::cmd_bench(scene, rays, samples, reps);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return nbv::kExitAborted;
  }
  return nbv::kExitOk;
}
