#include "quadsim/env.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace quadsim {

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;

}  // namespace

void TaskConfig::Validate() const {
  if (!(diameter > 0 && period > 0 && height > 0 && episode_steps > 0 &&
        termination_radius > 0 && max_tilt_deg > 0 && max_rate_deg > 0)) {
    throw std::invalid_argument("TaskConfig: values must be positive");
  }
}

void RandomizationSpec::Validate() const {
  if (!(half_width >= 0.0 && half_width < 1.0)) {
    throw std::invalid_argument("RandomizationSpec: half_width not in [0,1)");
  }
}

void EnvConfig::Validate() const {
  if (history < 1) throw std::invalid_argument("EnvConfig: history < 1");
  if (200 % PolicyRateHz(level) != 0) {
    throw std::invalid_argument("EnvConfig: policy rate must divide 200 Hz");
  }
  task.Validate();
  noise.Validate();
  randomization.Validate();
  drone.Validate();
  sim.Validate();
}

Eigen::Vector3d CircleSetpoint(double time, const TaskConfig& task,
                               double phase) {
  const double radius = task.diameter / 2.0;
  const double direction = task.clockwise ? -1.0 : 1.0;
  const double angle =
      phase + direction * 2.0 * std::numbers::pi * time / task.period;
  return {radius * std::cos(angle), radius * std::sin(angle), task.height};
}

double Reward(const DroneState& state, const Eigen::Vector4d& action,
              const Eigen::Vector4d& prev_action,
              const Eigen::Vector3d& setpoint, bool terminated,
              const TaskConfig& task) {
  const double tracking = (state.position - setpoint).norm();
  const double effort = 1e-4 * action.norm();
  const double smoothness = 1e-3 * (prev_action - action).norm();
  const double spin = 1e-3 * state.body_rates.norm();
  const double terminal = terminated ? task.terminal_reward : 0.0;
  return -(tracking + effort + smoothness + spin) + terminal;
}

Eigen::VectorXd MakeObservation(const DroneState& noisy_state,
                                const Eigen::Vector3d& setpoint,
                                const Eigen::Vector4d& prev_action) {
  Eigen::VectorXd obs(kObservationDim);
  obs.head<13>() = noisy_state.ToVector();
  obs.segment<3>(13) = noisy_state.position - setpoint;
  obs.tail<4>() = prev_action;
  return obs;
}

HistoryStack::HistoryStack(int size) : size_(size) {
  if (size < 1) throw std::invalid_argument("HistoryStack: size < 1");
  slots_.assign(static_cast<std::size_t>(size),
                Eigen::VectorXd::Zero(kObservationDim));
}

void HistoryStack::Reset(const Eigen::VectorXd& first) {
  for (auto& slot : slots_) slot = first;
  head_ = 0;
}

void HistoryStack::Push(const Eigen::VectorXd& observation) {
  slots_[static_cast<std::size_t>(head_)] = observation;
  head_ = (head_ + 1) % size_;
}

Eigen::VectorXd HistoryStack::Flattened() const {
  const Eigen::Index dim = slots_.front().size();
  Eigen::VectorXd out(dim * size_);
  for (int i = 0; i < size_; ++i) {
    out.segment(i * dim, dim) =
        slots_[static_cast<std::size_t>((head_ + i) % size_)];
  }
  return out;
}

EpisodeParams SampleParams(const DroneParams& drone, const SimParams& sim,
                           const RandomizationSpec& spec, Rng& rng) {
  std::uniform_real_distribution<double> scale(1.0 - spec.half_width,
                                               1.0 + spec.half_width);
  EpisodeParams p{drone, sim};
  if (spec.half_width == 0.0) return p;
  p.sim.kf *= scale(rng);
  p.sim.dt *= scale(rng);
  p.sim.tm *= scale(rng);
  p.drone.mass *= scale(rng);
  for (int i = 0; i < 3; ++i) p.drone.inertia(i) *= scale(rng);
  p.drone.km1 *= scale(rng);
  p.drone.km2 *= scale(rng);
  return p;
}

std::string_view ToString(Termination cause) {
  switch (cause) {
    case Termination::kNone:
      return "none";
    case Termination::kTrackingError:
      return "tracking_error";
    case Termination::kSafety:
      return "safety";
    case Termination::kDiverged:
      return "diverged";
    case Termination::kTimeLimit:
      return "time_limit";
  }
  return "none";
}

Env::Env(const EnvConfig& config, std::uint64_t seed)
    : config_(config),
      rng_(seed),
      params_{config.drone, config.sim},
      quad_(config.drone, config.sim),
      mixer_{config.drone, config.sim.kf},
      history_(config.history) {
  config_.Validate();
}

Eigen::VectorXd Env::Reset() {
  return Reset(SampleParams(config_.drone, config_.sim, config_.randomization,
                            rng_));
}

Eigen::VectorXd Env::Reset(const EpisodeParams& params) {
  params_ = params;
  quad_ = Quadrotor(params_.drone, params_.sim);

  // Sub-steps keep the policy period in seconds fixed when dt is randomized.
  const double period = 1.0 / PolicyRateHz(config_.level);
  substeps_ = std::max(1, static_cast<int>(std::lround(period / params_.sim.dt)));

  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  phase_ = 2.0 * std::numbers::pi * 0.5 * (unit(rng_) + 1.0);

  DroneState start;
  start.position = CircleSetpoint(0.0, config_.task, phase_);
  for (int i = 0; i < 3; ++i) start.velocity(i) = config_.init_speed * unit(rng_);
  Eigen::Vector3d tilt;
  for (int i = 0; i < 3; ++i) tilt(i) = config_.init_tilt_deg * kDegToRad * unit(rng_);
  start.attitude = EulerToQuaternion(tilt);
  const double hover_u = 1.0 / params_.sim.kf;
  start.rotor_speeds.setConstant(HoverRotorSpeed(params_.sim.kf));
  quad_.Reset(start, Eigen::Vector4d::Constant(hover_u));

  gyro_ = GyroBiasState{};
  ou_ = OuState{};
  rate_state_ = PidState{};
  cascade_state_ = CascadeState{};
  prev_action_.setZero();
  time_ = 0.0;
  last_measure_time_ = 0.0;
  steps_ = 0;
  done_ = false;
  has_reset_ = true;

  history_.Reset(Observe());
  return history_.Flattened();
}

NoisyState Env::Measure() {
  NoisyState meas = CorruptState(quad_.state(), config_.noise, gyro_,
                                 time_ - last_measure_time_, rng_);
  gyro_ = meas.gyro;
  last_measure_time_ = time_;
  return meas;
}

Eigen::VectorXd Env::Observe() {
  const NoisyState meas = Measure();
  return MakeObservation(meas.state, CircleSetpoint(time_, config_.task, phase_),
                         prev_action_);
}

Eigen::Vector4d Env::InnerControl(const Eigen::Vector4d& action,
                                  const DroneState& measured) {
  const Eigen::Vector4d a = action.cwiseMax(-1.0).cwiseMin(1.0);
  const double g = config_.drone.gravity;
  const double collective = ActionToCollective(a(0), config_.ranges, g);
  const double dt = params_.sim.dt;
  switch (config_.level) {
    case ControlLevel::kPwm:
      return ActionToThrust(a);
    case ControlLevel::kAttitudeRate: {
      const Eigen::Vector3d rates =
          a.tail<3>() * config_.ranges.max_rate_deg * kDegToRad;
      return AttitudeRateControl(collective, rates, measured.body_rates,
                                 rate_state_, config_.gains.rate, mixer_, dt)
          .u;
    }
    case ControlLevel::kAttitude: {
      const Eigen::Vector3d rpy =
          a.tail<3>() * config_.ranges.max_angle_deg * kDegToRad;
      return AttitudeControl(collective, EulerToQuaternion(rpy), measured,
                             cascade_state_, config_.gains, mixer_, dt)
          .u;
    }
  }
  return ActionToThrust(a);
}

EnvStepResult Env::Step(const Eigen::Vector4d& action) {
  if (!has_reset_) return EnvError::kNotReset;
  if (done_) return EnvError::kEpisodeDone;

  EnvStep out;
  Eigen::Vector4d command = Eigen::Vector4d::Zero();
  bool diverged = false;
  for (int k = 0; k < substeps_ && !diverged; ++k) {
    if (config_.level == ControlLevel::kPwm) {
      command = InnerControl(action, quad_.state());
    } else {
      command = InnerControl(action, Measure().state);
    }
    diverged = !quad_.Step(ApplyActuatorNoise(command, ou_));
    ou_ = OuStep(ou_, config_.noise, params_.sim.dt, rng_);
    time_ += params_.sim.dt;
  }
  ++steps_;

  const DroneState& s = quad_.state();
  const Eigen::Vector3d setpoint = CircleSetpoint(time_, config_.task, phase_);
  const Eigen::Vector3d error = s.position - setpoint;
  const Eigen::Vector3d rpy = QuaternionToEuler(s.attitude);
  const double tilt_limit = config_.task.max_tilt_deg * kDegToRad;
  const double rate_limit = config_.task.max_rate_deg * kDegToRad;

  Termination cause = Termination::kNone;
  if (diverged) {
    cause = Termination::kDiverged;
  } else if (error.norm() > config_.task.termination_radius) {
    cause = Termination::kTrackingError;
  } else if (std::abs(rpy.x()) > tilt_limit || std::abs(rpy.y()) > tilt_limit ||
             std::abs(s.body_rates.x()) > rate_limit ||
             std::abs(s.body_rates.y()) > rate_limit) {
    cause = Termination::kSafety;
  } else if (steps_ >= config_.task.episode_steps) {
    cause = Termination::kTimeLimit;
  }
  out.terminated = cause != Termination::kNone &&
                   cause != Termination::kTimeLimit;
  out.done = cause != Termination::kNone;

  if (diverged) {
    out.reward = config_.task.terminal_reward - config_.task.termination_radius;
  } else {
    out.reward = Reward(s, action, prev_action_, setpoint, out.terminated,
                        config_.task);
  }

  prev_action_ = action;
  if (diverged) {
    out.observation = history_.Flattened();
  } else {
    history_.Push(Observe());
    out.observation = history_.Flattened();
  }
  done_ = out.done;

  out.info.time = time_;
  out.info.step = steps_;
  out.info.state = s;
  out.info.error = error;
  out.info.action = action;
  out.info.command = command;
  out.info.cause = cause;
  return out;
}

EpisodeCsvWriter::EpisodeCsvWriter(std::ostream& out) : out_(out) {
  out_ << "t,r_x,r_y,r_z,v_x,v_y,v_z,q_w,q_x,q_y,q_z,omega_x,omega_y,omega_z,"
          "e_x,e_y,e_z,a_1,a_2,a_3,a_4,u_1,u_2,u_3,u_4,reward,done\n";
}

void EpisodeCsvWriter::Write(const EnvStep& step) {
  const StepInfo& info = step.info;
  const Vector13d x = info.state.ToVector();
  out_ << info.time;
  for (int i = 0; i < 13; ++i) out_ << ',' << x(i);
  for (int i = 0; i < 3; ++i) out_ << ',' << info.error(i);
  for (int i = 0; i < 4; ++i) out_ << ',' << info.action(i);
  for (int i = 0; i < 4; ++i) out_ << ',' << info.command(i);
  out_ << ',' << step.reward << ',' << (step.done ? 1 : 0) << '\n';
}

}  // namespace quadsim
