#include "quadsim/dynamics.hpp"

#include <cmath>
#include <stdexcept>

namespace quadsim {

namespace {

Eigen::Quaterniond QuaternionRate(const Eigen::Quaterniond& q,
                                  const Eigen::Vector3d& body_rates) {
  // q_dot = 0.5 * q (x) (0, omega)
  const Eigen::Quaterniond omega(0.0, body_rates.x(), body_rates.y(),
                                 body_rates.z());
  Eigen::Quaterniond dq = q * omega;
  dq.coeffs() *= 0.5;
  return dq;
}

struct RigidBodyDerivative {
  Eigen::Vector3d position;
  Eigen::Vector3d velocity;
  Eigen::Vector4d attitude;  // coeffs() order (x, y, z, w)
  Eigen::Vector3d body_rates;
};

RigidBodyDerivative Derivative(const DroneState& s, double total_thrust,
                               const Eigen::Vector3d& torque,
                               const DroneParams& params) {
  RigidBodyDerivative d;
  d.position = s.velocity;
  d.velocity = LinearAccel(s.attitude, total_thrust, params);
  d.attitude = QuaternionRate(s.attitude, s.body_rates).coeffs();
  d.body_rates = AngularAccel(s.body_rates, torque, params);
  return d;
}

DroneState Advance(const DroneState& s, const RigidBodyDerivative& d,
                   double h) {
  DroneState out = s;
  out.position += h * d.position;
  out.velocity += h * d.velocity;
  out.attitude.coeffs() += h * d.attitude;
  out.body_rates += h * d.body_rates;
  return out;
}

bool IsFinite(const DroneState& s) {
  return s.position.allFinite() && s.velocity.allFinite() &&
         s.attitude.coeffs().allFinite() && s.body_rates.allFinite() &&
         s.rotor_speeds.allFinite();
}

}  // namespace

void DroneParams::Validate() const {
  if (!(mass > 0 && gravity > 0 && inertia.minCoeff() > 0 && arm_length > 0 &&
        km1 > 0 && km2 > 0)) {
    throw std::invalid_argument("DroneParams: all fields must be positive");
  }
}

void SimParams::Validate() const {
  if (!(kf > 0)) throw std::invalid_argument("SimParams: kf must be > 0");
  if (!(tm > 0)) throw std::invalid_argument("SimParams: tm must be > 0");
  if (!(latency >= 0)) {
    throw std::invalid_argument("SimParams: latency must be >= 0");
  }
  if (!(dt > 0)) throw std::invalid_argument("SimParams: dt must be > 0");
}

int SimParams::LatencySteps() const {
  return static_cast<int>(std::lround(latency / dt));
}

Vector13d DroneState::ToVector() const {
  Vector13d x;
  x.segment<3>(0) = position;
  x.segment<3>(3) = velocity;
  x(6) = attitude.w();
  x(7) = attitude.x();
  x(8) = attitude.y();
  x(9) = attitude.z();
  x.segment<3>(10) = body_rates;
  return x;
}

DroneState DroneState::FromVector(const Vector13d& x) {
  DroneState s;
  s.position = x.segment<3>(0);
  s.velocity = x.segment<3>(3);
  s.attitude = Eigen::Quaterniond(x(6), x(7), x(8), x(9));
  s.body_rates = x.segment<3>(10);
  return s;
}

LatencyQueue::LatencyQueue(int depth, const Eigen::Vector4d& fill)
    : depth_(depth) {
  if (depth < 0) throw std::invalid_argument("LatencyQueue: negative depth");
  Fill(fill);
}

Eigen::Vector4d LatencyQueue::Push(const Eigen::Vector4d& command) {
  if (depth_ == 0) return command;
  buffer_.push_back(command);
  Eigen::Vector4d out = buffer_.front();
  buffer_.pop_front();
  return out;
}

void LatencyQueue::Fill(const Eigen::Vector4d& command) {
  buffer_.assign(static_cast<std::size_t>(depth_), command);
}

Eigen::Vector4d ActionToThrust(const Eigen::Vector4d& action) {
  return 0.5 * (action.cwiseMax(-1.0).cwiseMin(1.0).array() + 1.0).matrix();
}

Eigen::Vector4d RotorForces(const Eigen::Vector4d& rotor_speeds,
                            const DroneParams& params, double kf) {
  const double scale = params.mass * params.gravity / 4.0 * kf;
  return scale * rotor_speeds.array().square().matrix();
}

Eigen::Vector4d RotorMoments(const Eigen::Vector4d& forces,
                             const DroneParams& params) {
  return (params.km1 * forces.array() + params.km2).matrix();
}

Eigen::Vector3d BodyTorque(const Eigen::Vector4d& f, const Eigen::Vector4d& m,
                           const DroneParams& params) {
  const double l = params.arm_length / std::sqrt(2.0);
  return {l * (-f(0) - f(1) + f(2) + f(3)), l * (-f(0) + f(1) + f(2) - f(3)),
          -m(0) + m(1) - m(2) + m(3)};
}

Eigen::Vector3d LinearAccel(const Eigen::Quaterniond& attitude,
                            double total_thrust, const DroneParams& params) {
  const Eigen::Vector3d thrust_world =
      attitude * Eigen::Vector3d(0.0, 0.0, total_thrust);
  return thrust_world / params.mass - Eigen::Vector3d(0.0, 0.0, params.gravity);
}

Eigen::Vector3d AngularAccel(const Eigen::Vector3d& body_rates,
                             const Eigen::Vector3d& torque,
                             const DroneParams& params) {
  const Eigen::Vector3d momentum = params.inertia.cwiseProduct(body_rates);
  return (torque - body_rates.cross(momentum)).cwiseQuotient(params.inertia);
}

Eigen::Vector4d MotorStep(const Eigen::Vector4d& rotor_speeds,
                          const Eigen::Vector4d& command, double tm,
                          double dt) {
  const Eigen::Vector4d target =
      command.cwiseMax(0.0).cwiseMin(1.0).cwiseSqrt();
  const double decay = std::exp(-dt / tm);
  const Eigen::Vector4d next = target + (rotor_speeds - target) * decay;
  return next.cwiseMax(0.0).cwiseMin(1.0);
}

StepResult Step(const DroneState& state, const Eigen::Vector4d& command,
                const DroneParams& params, const SimParams& sim,
                LatencyQueue& queue) {
  const Eigen::Vector4d delayed = queue.Push(command);
  const double dt = sim.dt;

  DroneState next = state;
  next.rotor_speeds = MotorStep(state.rotor_speeds, delayed, sim.tm, dt);

  const Eigen::Vector4d forces = RotorForces(next.rotor_speeds, params, sim.kf);
  const Eigen::Vector3d torque =
      BodyTorque(forces, RotorMoments(forces, params), params);
  const double total_thrust = forces.sum();

  if (sim.integrator == Integrator::kSemiImplicitEuler) {
    next.velocity += dt * LinearAccel(state.attitude, total_thrust, params);
    // Trapezoidal position update: exact under constant acceleration.
    next.position += 0.5 * dt * (state.velocity + next.velocity);
    next.body_rates +=
        dt * AngularAccel(state.body_rates, torque, params);
    next.attitude.coeffs() +=
        dt * QuaternionRate(state.attitude, next.body_rates).coeffs();
  } else {
    // Classic RK4 with rotor forces held over the step.
    const auto k1 = Derivative(state, total_thrust, torque, params);
    const auto k2 =
        Derivative(Advance(state, k1, dt / 2), total_thrust, torque, params);
    const auto k3 =
        Derivative(Advance(state, k2, dt / 2), total_thrust, torque, params);
    const auto k4 =
        Derivative(Advance(state, k3, dt), total_thrust, torque, params);
    next.position = state.position + dt / 6 * (k1.position + 2 * k2.position +
                                               2 * k3.position + k4.position);
    next.velocity = state.velocity + dt / 6 * (k1.velocity + 2 * k2.velocity +
                                               2 * k3.velocity + k4.velocity);
    next.attitude.coeffs() =
        state.attitude.coeffs() +
        dt / 6 * (k1.attitude + 2 * k2.attitude + 2 * k3.attitude + k4.attitude);
    next.body_rates =
        state.body_rates + dt / 6 * (k1.body_rates + 2 * k2.body_rates +
                                     2 * k3.body_rates + k4.body_rates);
  }
  next.attitude.normalize();

  return {next, !IsFinite(next)};
}

Quadrotor::Quadrotor(const DroneParams& params, const SimParams& sim,
                     const DroneState& initial)
    : params_(params), sim_(sim), state_(initial),
      queue_(sim.LatencySteps()) {
  params_.Validate();
  sim_.Validate();
}

void Quadrotor::Reset(const DroneState& state,
                      const Eigen::Vector4d& queue_fill) {
  state_ = state;
  queue_.Fill(queue_fill);
  diverged_ = false;
}

bool Quadrotor::Step(const Eigen::Vector4d& command) {
  StepResult result = quadsim::Step(state_, command, params_, sim_, queue_);
  state_ = result.state;
  diverged_ = diverged_ || result.diverged;
  return !result.diverged;
}

double HoverRotorSpeed(double kf) { return std::sqrt(1.0 / kf); }

}  // namespace quadsim
