#ifndef QUADSIM_CONTROL_HPP_
#define QUADSIM_CONTROL_HPP_

#include <string>
#include <string_view>

#include "quadsim/dynamics.hpp"

namespace quadsim {

struct PidGains {
  Eigen::Vector3d kp = Eigen::Vector3d::Zero();
  Eigen::Vector3d ki = Eigen::Vector3d::Zero();
  Eigen::Vector3d kd = Eigen::Vector3d::Zero();
  double i_limit = 0.0;    // componentwise clamp on the integral
  double out_limit = 0.0;  // componentwise clamp on the output
};

struct PidState {
  Eigen::Vector3d integral = Eigen::Vector3d::Zero();
  Eigen::Vector3d prev_error = Eigen::Vector3d::Zero();
  // The derivative term is zero until a previous error exists.
  bool has_prev = false;
};

struct PidOutput {
  Eigen::Vector3d out;
  PidState state;
};

// Discrete PID with a clamped integral and clamped output. The derivative is
// the backward difference of the error.
PidOutput PidStep(const Eigen::Vector3d& error, const PidState& state,
                  const PidGains& gains, double dt);

// Same, with the error derivative supplied by the caller.
PidOutput PidStep(const Eigen::Vector3d& error,
                  const Eigen::Vector3d& error_rate, const PidState& state,
                  const PidGains& gains, double dt);

// The controller's belief about the plant, used for mixing.
struct MixerModel {
  DroneParams params;
  double kf = 1.722;
};

struct MixerOutput {
  Eigen::Vector4d u = Eigen::Vector4d::Zero();
  bool saturated = false;
};

// Maps mass-normalized collective thrust (m/s^2) and body torque (N m) to
// normalized motor commands by inverting the rotor force and torque maps.
MixerOutput Mixer(double collective, const Eigen::Vector3d& torque,
                  const MixerModel& model);

struct ControlGains {
  PidGains rate;      // rad/s error -> rad/s^2
  PidGains attitude;  // rad error -> rad/s
  PidGains position;  // m error -> m/s^2
  double max_tilt = 0.5;  // rad, position controller attitude limit

  static ControlGains Defaults();
};

struct CascadeState {
  PidState attitude;
  PidState rate;
};

struct PositionState {
  PidState position;
  CascadeState cascade;
  Eigen::Vector3d prev_setpoint = Eigen::Vector3d::Zero();
  bool has_setpoint = false;
};

MixerOutput AttitudeRateControl(double collective,
                                const Eigen::Vector3d& rates_desired,
                                const Eigen::Vector3d& rates_measured,
                                PidState& state, const PidGains& gains,
                                const MixerModel& model, double dt);

// Rotation vector taking `measured` onto `desired`, in the body frame.
Eigen::Vector3d AttitudeError(const Eigen::Quaterniond& desired,
                              const Eigen::Quaterniond& measured);

// Outer attitude loop producing body-rate setpoints for the inner loop.
Eigen::Vector3d AttitudeToRates(const Eigen::Quaterniond& desired,
                                const Eigen::Quaterniond& measured,
                                PidState& state, const PidGains& gains,
                                double dt);

MixerOutput AttitudeControl(double collective,
                            const Eigen::Quaterniond& desired,
                            const DroneState& measured, CascadeState& state,
                            const ControlGains& gains, const MixerModel& model,
                            double dt);

// Cascaded position controller: position PID -> desired acceleration ->
// (collective thrust, attitude) -> attitude cascade.
MixerOutput PositionControl(const Eigen::Vector3d& setpoint,
                            const DroneState& measured, PositionState& state,
                            const ControlGains& gains, const MixerModel& model,
                            double dt);

// Roll-pitch-yaw (rad) to a body->world quaternion, ZYX convention.
Eigen::Quaterniond EulerToQuaternion(const Eigen::Vector3d& rpy);
// Inverse of EulerToQuaternion.
Eigen::Vector3d QuaternionToEuler(const Eigen::Quaterniond& q);

enum class ControlLevel { kPwm, kAttitudeRate, kAttitude };

// Policy rate in Hz: 100, 50 and 25 for the three levels.
int PolicyRateHz(ControlLevel level);
std::string_view ToString(ControlLevel level);
// Accepts "pwm", "rate" and "attitude".
ControlLevel ParseControlLevel(std::string_view name);

// Physical ranges that a normalized action in [-1,1]^4 is scaled to.
struct ActionRanges {
  double max_collective_g = 2.0;  // c in [0, max * g]
  double max_rate_deg = 60.0;     // omega_d per axis
  double max_angle_deg = 10.0;    // attitude setpoint per axis
};

// Collective thrust (m/s^2) from a normalized action component.
double ActionToCollective(double a, const ActionRanges& ranges, double g);

}  // namespace quadsim

#endif  // QUADSIM_CONTROL_HPP_
