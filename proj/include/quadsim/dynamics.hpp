#ifndef QUADSIM_DYNAMICS_HPP_
#define QUADSIM_DYNAMICS_HPP_

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include <deque>

namespace quadsim {

using Vector13d = Eigen::Matrix<double, 13, 1>;

// Physical constants of the airframe. Defaults are the CrazyFlie 2.x values.
struct DroneParams {
  double mass = 0.028;                                      // kg
  double gravity = 9.81;                                    // m/s^2
  Eigen::Vector3d inertia{1.33e-5, 1.33e-5, 2.64e-5};       // kg m^2 (diag)
  double arm_length = 0.0396;                               // m
  double km1 = 5.96e-3;                                     // m
  double km2 = 1.56e-5;                                     // N m

  // Throws std::invalid_argument unless every field is strictly positive.
  void Validate() const;
};

enum class Integrator { kSemiImplicitEuler, kRk4 };

// Simulation parameters, including the three identified quantities
// (thrust-to-weight ratio, motor time constant, latency).
struct SimParams {
  double kf = 1.722;
  double tm = 0.104;      // s
  double latency = 0.018; // s
  double dt = 0.005;      // s
  Integrator integrator = Integrator::kSemiImplicitEuler;

  void Validate() const;
  // Latency rounded to the nearest whole number of physics steps.
  int LatencySteps() const;
};

struct DroneState {
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  Eigen::Vector3d velocity = Eigen::Vector3d::Zero();
  Eigen::Quaterniond attitude = Eigen::Quaterniond::Identity();  // body->world
  Eigen::Vector3d body_rates = Eigen::Vector3d::Zero();          // body frame
  Eigen::Vector4d rotor_speeds = Eigen::Vector4d::Zero();        // in [0,1]

  // 13-dim layout: position, velocity, quaternion (w, x, y, z), body rates.
  Vector13d ToVector() const;
  // Rotor speeds are not part of the 13-dim vector and are left at zero.
  static DroneState FromVector(const Vector13d& x);
};

// Fixed-depth FIFO of motor commands. Depth 0 is a pass-through.
class LatencyQueue {
 public:
  explicit LatencyQueue(int depth = 0,
                        const Eigen::Vector4d& fill = Eigen::Vector4d::Zero());

  // Pushes the newest command and returns the one issued `depth` calls ago.
  Eigen::Vector4d Push(const Eigen::Vector4d& command);
  void Fill(const Eigen::Vector4d& command);
  int depth() const { return depth_; }
  std::size_t size() const { return buffer_.size(); }

 private:
  int depth_;
  std::deque<Eigen::Vector4d> buffer_;
};

// u_i = (clamp(a_i, -1, 1) + 1) / 2
Eigen::Vector4d ActionToThrust(const Eigen::Vector4d& action);

// F_i = (m g / 4) kF nu_i^2
Eigen::Vector4d RotorForces(const Eigen::Vector4d& rotor_speeds,
                            const DroneParams& params, double kf);

// M_i = kM1 F_i + kM2
Eigen::Vector4d RotorMoments(const Eigen::Vector4d& forces,
                             const DroneParams& params);

Eigen::Vector3d BodyTorque(const Eigen::Vector4d& forces,
                           const Eigen::Vector4d& moments,
                           const DroneParams& params);

// World-frame acceleration of the center of mass.
Eigen::Vector3d LinearAccel(const Eigen::Quaterniond& attitude,
                            double total_thrust, const DroneParams& params);

// Euler's rotation equations with diagonal inertia.
Eigen::Vector3d AngularAccel(const Eigen::Vector3d& body_rates,
                             const Eigen::Vector3d& torque,
                             const DroneParams& params);

// Exact discretization of T_m dnu/dt = -nu + sqrt(u) over one step of dt.
Eigen::Vector4d MotorStep(const Eigen::Vector4d& rotor_speeds,
                          const Eigen::Vector4d& command, double tm, double dt);

struct StepResult {
  DroneState state;
  bool diverged = false;
};

// Advances the full model by sim.dt: latency queue, motor lag, rigid body.
StepResult Step(const DroneState& state, const Eigen::Vector4d& command,
                const DroneParams& params, const SimParams& sim,
                LatencyQueue& queue);

// Owns the state and latency queue of one simulated vehicle.
class Quadrotor {
 public:
  Quadrotor(const DroneParams& params, const SimParams& sim,
            const DroneState& initial = {});

  // Resets the state; the latency queue is refilled with `queue_fill`.
  void Reset(const DroneState& state,
             const Eigen::Vector4d& queue_fill = Eigen::Vector4d::Zero());
  // Returns false if the step produced a non-finite state.
  bool Step(const Eigen::Vector4d& command);

  const DroneState& state() const { return state_; }
  const DroneParams& params() const { return params_; }
  const SimParams& sim() const { return sim_; }
  bool diverged() const { return diverged_; }

 private:
  DroneParams params_;
  SimParams sim_;
  DroneState state_;
  LatencyQueue queue_;
  bool diverged_ = false;
};

// Rotor speed at which the four rotors exactly carry the weight.
double HoverRotorSpeed(double kf);

}  // namespace quadsim

#endif  // QUADSIM_DYNAMICS_HPP_
