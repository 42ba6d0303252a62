#ifndef QUADSIM_ENV_HPP_
#define QUADSIM_ENV_HPP_

#include <ostream>
#include <string_view>
#include <variant>
#include <vector>

#include "quadsim/control.hpp"
#include "quadsim/dynamics.hpp"
#include "quadsim/sensing.hpp"

namespace quadsim {

inline constexpr int kObservationDim = 20;
inline constexpr int kActionDim = 4;

// Circle-tracking task.
struct TaskConfig {
  double diameter = 0.5;  // m
  double period = 3.0;    // s
  double height = 1.0;    // m
  bool clockwise = true;
  int episode_steps = 500;  // policy steps
  double termination_radius = 0.25;  // m
  double terminal_reward = -100.0;
  double max_tilt_deg = 30.0;    // safety backup on roll and pitch
  double max_rate_deg = 800.0;   // safety backup on roll and pitch rates

  void Validate() const;
};

struct RandomizationSpec {
  double half_width = 0.10;  // relative, applied uniformly
  void Validate() const;
};

struct EnvConfig {
  ControlLevel level = ControlLevel::kPwm;
  int history = 2;
  TaskConfig task;
  NoiseConfig noise;
  RandomizationSpec randomization;
  DroneParams drone;
  SimParams sim;
  ControlGains gains = ControlGains::Defaults();
  ActionRanges ranges;
  double init_tilt_deg = 2.0;   // per-axis uniform attitude perturbation
  double init_speed = 0.05;     // per-axis uniform velocity perturbation, m/s

  void Validate() const;
  int ObservationSize() const { return kObservationDim * history; }
};

// Point on the reference circle at `time` seconds, offset by `phase` rad.
Eigen::Vector3d CircleSetpoint(double time, const TaskConfig& task,
                               double phase);

// Per-step reward. All tracking and effort terms are penalties; the terminal
// reward is added when `terminated` is set.
double Reward(const DroneState& state, const Eigen::Vector4d& action,
              const Eigen::Vector4d& prev_action,
              const Eigen::Vector3d& setpoint, bool terminated,
              const TaskConfig& task);

// [noisy 13-dim state, position error, previous action].
Eigen::VectorXd MakeObservation(const DroneState& noisy_state,
                                const Eigen::Vector3d& setpoint,
                                const Eigen::Vector4d& prev_action);

// Ring of the H latest observations, oldest first when flattened.
class HistoryStack {
 public:
  explicit HistoryStack(int size);
  // Fills every slot with `first`.
  void Reset(const Eigen::VectorXd& first);
  void Push(const Eigen::VectorXd& observation);
  Eigen::VectorXd Flattened() const;
  int size() const { return size_; }

 private:
  int size_;
  int head_ = 0;  // slot of the oldest entry
  std::vector<Eigen::VectorXd> slots_;
};

// Sampled physical and simulation parameters for one episode.
struct EpisodeParams {
  DroneParams drone;
  SimParams sim;
};

EpisodeParams SampleParams(const DroneParams& drone, const SimParams& sim,
                           const RandomizationSpec& spec, Rng& rng);

enum class Termination { kNone, kTrackingError, kSafety, kDiverged, kTimeLimit };
std::string_view ToString(Termination cause);

struct StepInfo {
  double time = 0.0;  // s since reset
  int step = 0;       // policy steps since reset
  DroneState state;   // true state
  Eigen::Vector3d error = Eigen::Vector3d::Zero();  // r - t (true)
  Eigen::Vector4d action = Eigen::Vector4d::Zero();
  Eigen::Vector4d command = Eigen::Vector4d::Zero();  // last motor command
  Termination cause = Termination::kNone;
};

struct EnvStep {
  Eigen::VectorXd observation;  // stacked, 20 H
  double reward = 0.0;
  bool done = false;
  // True when the episode ended by failure rather than by the time limit.
  bool terminated = false;
  StepInfo info;
};

enum class EnvError { kEpisodeDone, kNotReset };

using EnvStepResult = std::variant<EnvStep, EnvError>;

// The RL task. Owns the simulator, controllers, noise processes and RNG of
// one rollout worker.
class Env {
 public:
  Env(const EnvConfig& config, std::uint64_t seed);

  // Starts a new episode and returns the stacked observation.
  Eigen::VectorXd Reset();
  // Starts a new episode with explicitly given parameters (no sampling).
  Eigen::VectorXd Reset(const EpisodeParams& params);
  EnvStepResult Step(const Eigen::Vector4d& action);

  const EnvConfig& config() const { return config_; }
  const EpisodeParams& episode_params() const { return params_; }
  const DroneState& state() const { return quad_.state(); }
  int substeps() const { return substeps_; }
  bool done() const { return done_; }
  double phase() const { return phase_; }
  double time() const { return time_; }

 private:
  Eigen::VectorXd Observe();
  NoisyState Measure();
  Eigen::Vector4d InnerControl(const Eigen::Vector4d& action,
                               const DroneState& measured);

  EnvConfig config_;
  Rng rng_;
  EpisodeParams params_;
  Quadrotor quad_;
  MixerModel mixer_;
  HistoryStack history_;
  GyroBiasState gyro_;
  OuState ou_;
  PidState rate_state_;
  CascadeState cascade_state_;
  Eigen::Vector4d prev_action_ = Eigen::Vector4d::Zero();
  double phase_ = 0.0;
  double time_ = 0.0;
  double last_measure_time_ = 0.0;
  int steps_ = 0;
  int substeps_ = 1;
  bool done_ = false;
  bool has_reset_ = false;
};

// Writes one CSV row per policy step.
class EpisodeCsvWriter {
 public:
  explicit EpisodeCsvWriter(std::ostream& out);
  void Write(const EnvStep& step);

 private:
  std::ostream& out_;
};

}  // namespace quadsim

#endif  // QUADSIM_ENV_HPP_
