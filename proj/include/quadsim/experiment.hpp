#ifndef QUADSIM_EXPERIMENT_HPP_
#define QUADSIM_EXPERIMENT_HPP_

#include <cstdint>
#include <initializer_list>
#include <optional>
#include <string>
#include <vector>

#include "quadsim/bayesopt.hpp"
#include "quadsim/collect.hpp"
#include "quadsim/simopt.hpp"
#include "quadsim/trainer.hpp"

namespace quadsim {

enum class Preset { kPaper, kDesk };
Preset ParsePreset(const std::string& name);

struct SimOptRunConfig {
  std::vector<int> horizons{10, 20, 30, 40, 50};
  SimOptConfig problem;
  BoConfig bo;
  bool cache_dataset = true;
};

struct GridSpec {
  int seeds = 3;
  std::vector<double> tm{0.04, 0.08, 0.12};
  std::vector<double> latency{0.0, 0.015, 0.02};
  std::vector<ControlLevel> levels{ControlLevel::kPwm,
                                   ControlLevel::kAttitudeRate,
                                   ControlLevel::kAttitude};
};

struct EvalSpec {
  int trials = 3;
  double max_flight_time = 20.0;  // s
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::string output_dir = "out";
  int jobs = 1;  // grid cells / evaluation policies run concurrently

  DroneParams drone;
  SimParams nominal;                       // what the learner is told
  SimCandidate oracle{1.722, 0.104, 0.018};  // hidden ground truth
  TaskConfig task;
  NoiseConfig noise;
  ControlGains gains = ControlGains::Defaults();
  double collect_duration = 3600.0;
  double flight_duration = 60.0;
  SimOptRunConfig simopt;
  TrainConfig train;
  int history = 2;
  RandomizationSpec randomization;
  GridSpec grid;
  EvalSpec evaluate;

  static ExperimentConfig ForPreset(Preset preset);
  void Validate() const;

  SimParams OracleParams() const;
  // Environment for training a cell of the grid.
  EnvConfig TrainEnv(ControlLevel level, double tm, double latency) const;
  // Deterministic evaluation environment on the oracle simulator.
  EnvConfig EvalEnv(ControlLevel level) const;
  CollectConfig Collect() const;
};

// Overlays a YAML document on the preset. Unknown keys are rejected with
// std::invalid_argument naming the offending path.
ExperimentConfig ParseExperimentConfig(const std::string& yaml, Preset base);
ExperimentConfig LoadExperimentConfig(const std::string& path, Preset base);
// Fully resolved configuration as YAML; parsing it back yields the same
// configuration.
std::string ToYaml(const ExperimentConfig& cfg);

// Mixes the master seed with a stage tag and indices (splitmix64).
std::uint64_t DeriveSeed(std::uint64_t master,
                         std::initializer_list<std::uint64_t> parts);

struct SimOptRecord {
  int horizon = 0;
  int trial = 0;
  SimCandidate xi = SimCandidate::Zero();
  double objective = 0.0;
};

struct TrainCell {
  ControlLevel level = ControlLevel::kPwm;
  double tm = 0.0;
  double latency = 0.0;
  int seed = 0;

  std::string Name() const;
};

struct TrainRecord {
  TrainCell cell;
  std::string checkpoint;  // relative to the output directory
  std::string status;      // "ok" or "failed: <reason>"
  double final_mean_return = 0.0;
  double final_mean_length = 0.0;
};

struct EvalRecord {
  TrainCell cell;
  int trial = 0;
  double flight_time = 0.0;
  Termination cause = Termination::kNone;
};

std::vector<TrainCell> GridCells(const GridSpec& grid,
                                 std::optional<ControlLevel> only = {});

// Pipeline stages. Each writes below cfg.output_dir and replaces earlier
// outputs atomically.
FlightLog RunCollect(const ExperimentConfig& cfg);
std::vector<SimOptRecord> RunSimOpt(const ExperimentConfig& cfg);
std::vector<TrainRecord> RunTrainGrid(const ExperimentConfig& cfg,
                                      std::optional<ControlLevel> only = {});
std::vector<EvalRecord> RunEvaluate(const ExperimentConfig& cfg,
                                    std::optional<ControlLevel> only = {});
// Summarizes whatever stage outputs exist into report.md and report.json.
// Returns the Markdown text.
std::string RunReport(const ExperimentConfig& cfg);

struct BoxStats {
  int n = 0;
  double min = 0.0, q1 = 0.0, median = 0.0, q3 = 0.0, max = 0.0;
};
// Linear-interpolation quantiles; empty input gives n = 0.
BoxStats ComputeBoxStats(std::vector<double> values);

}  // namespace quadsim

#endif  // QUADSIM_EXPERIMENT_HPP_
