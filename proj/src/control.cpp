#include "quadsim/control.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace quadsim {

namespace {

Eigen::Vector3d ClampNorm(const Eigen::Vector3d& v, double limit) {
  return v.cwiseMax(-limit).cwiseMin(limit);
}


}  // namespace

PidOutput PidStep(const Eigen::Vector3d& error, const PidState& state,
                  const PidGains& gains, double dt) {
  const Eigen::Vector3d rate = state.has_prev
                                   ? Eigen::Vector3d((error - state.prev_error) / dt)
                                   : Eigen::Vector3d::Zero();
  return PidStep(error, rate, state, gains, dt);
}

PidOutput PidStep(const Eigen::Vector3d& error,
                  const Eigen::Vector3d& error_rate, const PidState& state,
                  const PidGains& gains, double dt) {
  if (!(dt > 0)) throw std::invalid_argument("PidStep: dt must be > 0");
  PidOutput result;
  result.state.integral = ClampNorm(state.integral + error * dt, gains.i_limit);
  result.state.prev_error = error;
  result.state.has_prev = true;
  const Eigen::Vector3d out = gains.kp.cwiseProduct(error) +
                              gains.ki.cwiseProduct(result.state.integral) +
                              gains.kd.cwiseProduct(error_rate);
  result.out = ClampNorm(out, gains.out_limit);
  return result;
}

MixerOutput Mixer(double collective, const Eigen::Vector3d& torque,
                  const MixerModel& model) {
  const DroneParams& p = model.params;
  const double total = p.mass * std::max(collective, 0.0);
  const double l = p.arm_length / std::sqrt(2.0);
  const double tx = torque.x() / l;
  const double ty = torque.y() / l;
  const double tz = torque.z() / p.km1;

  // The force-to-(thrust, torque) map has mutually orthogonal +-1 rows, so
  // its inverse is a scaled transpose.
  Eigen::Vector4d forces;
  forces << total - tx - ty - tz, total - tx + ty + tz, total + tx + ty - tz,
      total + tx - ty + tz;
  forces *= 0.25;

  const double per_rotor = p.mass * p.gravity / 4.0 * model.kf;
  const Eigen::Vector4d raw = forces / per_rotor;
  MixerOutput out;
  out.u = raw.cwiseMax(0.0).cwiseMin(1.0);
  out.saturated = (out.u.array() != raw.array()).any();
  return out;
}

ControlGains ControlGains::Defaults() {
  ControlGains g;
  // Tuned with tools/tune_gains on the nominal plant.
  g.rate.kp = Eigen::Vector3d(25.0, 25.0, 6.0);
  g.rate.ki = Eigen::Vector3d(4.0, 4.0, 2.0);
  g.rate.kd = Eigen::Vector3d(0.8, 0.8, 0.0);
  g.rate.i_limit = 2.0;
  g.rate.out_limit = 400.0;

  g.attitude.kp = Eigen::Vector3d(8.0, 8.0, 3.0);
  g.attitude.ki = Eigen::Vector3d::Zero();
  g.attitude.kd = Eigen::Vector3d::Zero();
  g.attitude.i_limit = 0.0;
  g.attitude.out_limit = 6.0;

  g.position.kp = Eigen::Vector3d(16.0, 16.0, 16.0);
  g.position.ki = Eigen::Vector3d(0.0, 0.0, 2.0);
  g.position.kd = Eigen::Vector3d(8.0, 8.0, 8.0);
  g.position.i_limit = 0.5;
  g.position.out_limit = 8.0;
  g.max_tilt = 0.5;
  return g;
}

MixerOutput AttitudeRateControl(double collective,
                                const Eigen::Vector3d& rates_desired,
                                const Eigen::Vector3d& rates_measured,
                                PidState& state, const PidGains& gains,
                                const MixerModel& model, double dt) {
  PidOutput pid = PidStep(rates_desired - rates_measured, state, gains, dt);
  state = pid.state;
  const Eigen::Vector3d torque = model.params.inertia.cwiseProduct(pid.out);
  return Mixer(collective, torque, model);
}

Eigen::Vector3d AttitudeError(const Eigen::Quaterniond& desired,
                              const Eigen::Quaterniond& measured) {
  Eigen::Quaterniond err = measured.conjugate() * desired;
  if (err.w() < 0.0) err.coeffs() = -err.coeffs();
  const Eigen::Vector3d v = err.vec();
  const double s = v.norm();
  if (s < 1e-12) return 2.0 * v;
  return 2.0 * std::atan2(s, err.w()) * v / s;
}

Eigen::Vector3d AttitudeToRates(const Eigen::Quaterniond& desired,
                                const Eigen::Quaterniond& measured,
                                PidState& state, const PidGains& gains,
                                double dt) {
  PidOutput pid = PidStep(AttitudeError(desired, measured), state, gains, dt);
  state = pid.state;
  return pid.out;
}

MixerOutput AttitudeControl(double collective,
                            const Eigen::Quaterniond& desired,
                            const DroneState& measured, CascadeState& state,
                            const ControlGains& gains, const MixerModel& model,
                            double dt) {
  const Eigen::Vector3d rates_desired = AttitudeToRates(
      desired, measured.attitude, state.attitude, gains.attitude, dt);
  return AttitudeRateControl(collective, rates_desired, measured.body_rates,
                             state.rate, gains.rate, model, dt);
}

MixerOutput PositionControl(const Eigen::Vector3d& setpoint,
                            const DroneState& measured, PositionState& state,
                            const ControlGains& gains, const MixerModel& model,
                            double dt) {
  const Eigen::Vector3d setpoint_rate =
      state.has_setpoint ? Eigen::Vector3d((setpoint - state.prev_setpoint) / dt)
                         : Eigen::Vector3d::Zero();
  state.prev_setpoint = setpoint;
  state.has_setpoint = true;

  // Derivative of the position error, using the measured velocity.
  const Eigen::Vector3d error = setpoint - measured.position;
  const Eigen::Vector3d error_rate = setpoint_rate - measured.velocity;
  PidOutput pid = PidStep(error, error_rate, state.position, gains.position, dt);
  state.position = pid.state;

  const double g = model.params.gravity;
  Eigen::Vector3d accel = pid.out + Eigen::Vector3d(0.0, 0.0, g);
  accel.z() = std::max(accel.z(), 0.2 * g);
  const double max_horizontal = accel.z() * std::tan(gains.max_tilt);
  const double horizontal = accel.head<2>().norm();
  if (horizontal > max_horizontal) {
    accel.head<2>() *= max_horizontal / horizontal;
  }

  // Desired attitude aligns body z with the acceleration, zero yaw.
  const Eigen::Vector3d z_axis = accel.normalized();
  Eigen::Vector3d y_axis = z_axis.cross(Eigen::Vector3d::UnitX()).normalized();
  const Eigen::Vector3d x_axis = y_axis.cross(z_axis);
  Eigen::Matrix3d rotation;
  rotation.col(0) = x_axis;
  rotation.col(1) = y_axis;
  rotation.col(2) = z_axis;
  const Eigen::Quaterniond desired(rotation);

  const Eigen::Vector3d body_z = measured.attitude * Eigen::Vector3d::UnitZ();
  const double collective = std::clamp(accel.dot(body_z), 0.0, 2.0 * g);
  return AttitudeControl(collective, desired, measured, state.cascade, gains,
                         model, dt);
}

Eigen::Quaterniond EulerToQuaternion(const Eigen::Vector3d& rpy) {
  return Eigen::Quaterniond(
      Eigen::AngleAxisd(rpy.z(), Eigen::Vector3d::UnitZ()) *
      Eigen::AngleAxisd(rpy.y(), Eigen::Vector3d::UnitY()) *
      Eigen::AngleAxisd(rpy.x(), Eigen::Vector3d::UnitX()));
}

Eigen::Vector3d QuaternionToEuler(const Eigen::Quaterniond& q) {
  const double w = q.w(), x = q.x(), y = q.y(), z = q.z();
  const double roll = std::atan2(2 * (w * x + y * z), 1 - 2 * (x * x + y * y));
  const double pitch = std::asin(std::clamp(2 * (w * y - z * x), -1.0, 1.0));
  const double yaw = std::atan2(2 * (w * z + x * y), 1 - 2 * (y * y + z * z));
  return {roll, pitch, yaw};
}

int PolicyRateHz(ControlLevel level) {
  switch (level) {
    case ControlLevel::kPwm:
      return 100;
    case ControlLevel::kAttitudeRate:
      return 50;
    case ControlLevel::kAttitude:
      return 25;
  }
  return 100;
}

std::string_view ToString(ControlLevel level) {
  switch (level) {
    case ControlLevel::kPwm:
      return "pwm";
    case ControlLevel::kAttitudeRate:
      return "rate";
    case ControlLevel::kAttitude:
      return "attitude";
  }
  return "pwm";
}

ControlLevel ParseControlLevel(std::string_view name) {
  if (name == "pwm") return ControlLevel::kPwm;
  if (name == "rate") return ControlLevel::kAttitudeRate;
  if (name == "attitude") return ControlLevel::kAttitude;
  throw std::invalid_argument("unknown control level: " + std::string(name));
}

double ActionToCollective(double a, const ActionRanges& ranges, double g) {
  return 0.5 * (std::clamp(a, -1.0, 1.0) + 1.0) * ranges.max_collective_g * g;
}

}  // namespace quadsim
