#ifndef QUADSIM_SENSING_HPP_
#define QUADSIM_SENSING_HPP_

#include <random>
#include <utility>

#include "quadsim/dynamics.hpp"

namespace quadsim {

using Rng = std::mt19937_64;

// Sensor and actuator noise magnitudes. The angular-rate and actuator
// defaults are stand-ins that have not been validated against hardware.
struct NoiseConfig {
  double sigma_pos = 2e-3;        // m
  double sigma_vel = 5e-3;        // m/s
  double sigma_att = 1e-3;        // rad
  double uniform_pos = 2e-3;      // half-width, m
  double uniform_vel = 5e-3;      // half-width, m/s
  double uniform_att = 1e-3;      // half-width, rad
  double gyro_sigma = 5e-3;       // rad/s
  double gyro_bias_sigma = 5e-4;  // rad/s per sqrt(s)
  double ou_theta = 15.0;         // 1/s
  double ou_sigma = 0.05;

  void Validate() const;
  static NoiseConfig Zero();
};

struct GyroBiasState {
  Eigen::Vector3d bias = Eigen::Vector3d::Zero();
};

struct OuState {
  Eigen::Vector4d x = Eigen::Vector4d::Zero();
};

struct NoisyState {
  DroneState state;
  GyroBiasState gyro;
};

// Corrupts position, velocity and attitude with Gaussian plus uniform noise
// and the body rates with white noise plus a random-walk bias. `dt` is the
// time elapsed since the previous call and drives the bias random walk.
NoisyState CorruptState(const DroneState& state, const NoiseConfig& cfg,
                        const GyroBiasState& gyro, double dt, Rng& rng);

// One Euler-Maruyama step of the mean-reverting actuator perturbation.
OuState OuStep(const OuState& s, const NoiseConfig& cfg, double dt, Rng& rng);

// Adds the actuator perturbation to a motor command and re-clamps to [0,1].
Eigen::Vector4d ApplyActuatorNoise(const Eigen::Vector4d& command,
                                   const OuState& s);

}  // namespace quadsim

#endif  // QUADSIM_SENSING_HPP_
