#include <cstdint>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "quadsim/experiment.hpp"
#include "quadsim/io.hpp"

namespace {

struct Options {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string preset = "desk";
  std::string level;
  std::optional<int> jobs;
};

quadsim::ExperimentConfig Resolve(const Options& opt, bool record) {
  const quadsim::Preset preset = quadsim::ParsePreset(opt.preset);
  quadsim::ExperimentConfig cfg =
      opt.config.empty() ? quadsim::ExperimentConfig::ForPreset(preset)
                         : quadsim::LoadExperimentConfig(opt.config, preset);
  if (!opt.out.empty()) cfg.output_dir = opt.out;
  if (opt.seed) cfg.seed = *opt.seed;
  if (opt.jobs) cfg.jobs = *opt.jobs;
  cfg.Validate();
  if (!record) return cfg;
  std::filesystem::create_directories(cfg.output_dir);
  quadsim::WriteFileAtomic(
      (std::filesystem::path(cfg.output_dir) / "config.resolved.yaml").string(),
      quadsim::ToYaml(cfg));
  return cfg;
}

std::optional<quadsim::ControlLevel> Level(const Options& opt) {
  if (opt.level.empty()) return std::nullopt;
  return quadsim::ParseControlLevel(opt.level);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Quadrotor sim-to-sim pipeline: collect, simopt, train, evaluate, report"};
  app.require_subcommand(1);
  Options opt;
  app.add_option("--config", opt.config, "YAML config overlaid on the preset")
      ->check(CLI::ExistingFile);
  app.add_option("--out", opt.out, "Output directory");
  app.add_option("--seed", opt.seed, "Master seed");
  app.add_option("--preset", opt.preset, "Base preset")
      ->check(CLI::IsMember({"paper", "desk"}));
  app.add_option("--level", opt.level, "Restrict train/evaluate to one level")
      ->check(CLI::IsMember({"pwm", "rate", "attitude"}));
  app.add_option("--jobs", opt.jobs, "Concurrent grid cells")->check(CLI::PositiveNumber);

  auto* collect = app.add_subcommand("collect", "Fly the oracle simulator and log data");
  auto* simopt = app.add_subcommand("simopt", "Recover simulator parameters from the log");
  auto* train = app.add_subcommand("train", "Train the policy grid");
  auto* evaluate = app.add_subcommand("evaluate", "Evaluate policies on the oracle");
  auto* report = app.add_subcommand("report", "Summarize outputs");
  auto* config = app.add_subcommand("config", "Print the resolved configuration");
  for (CLI::App* sub : {collect, simopt, train, evaluate, report, config}) {
    sub->fallthrough();
  }

  CLI11_PARSE(app, argc, argv);

  try {
    const quadsim::ExperimentConfig cfg = Resolve(opt, !*config);
    if (*collect) {
      quadsim::RunCollect(cfg);
    } else if (*simopt) {
      quadsim::RunSimOpt(cfg);
    } else if (*train) {
      const auto records = quadsim::RunTrainGrid(cfg, Level(opt));
      int failed = 0;
      for (const auto& r : records) failed += r.status != "ok";
      if (failed) std::cerr << failed << " cell(s) failed, see policies/index.csv\n";
    } else if (*evaluate) {
      quadsim::RunEvaluate(cfg, Level(opt));
    } else if (*report) {
      std::cout << quadsim::RunReport(cfg);
    } else if (*config) {
      std::cout << quadsim::ToYaml(cfg);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
