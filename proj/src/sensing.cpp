#include "quadsim/sensing.hpp"

#include <cmath>
#include <stdexcept>

namespace quadsim {

namespace {

Eigen::Vector3d GaussianPlusUniform(double sigma, double half_width,
                                    Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(-1.0, 1.0);
  Eigen::Vector3d out;
  for (int i = 0; i < 3; ++i) {
    const double n = normal(rng);
    const double u = uniform(rng);
    out(i) = sigma * n + half_width * u;
  }
  return out;
}

Eigen::Quaterniond SmallRotation(const Eigen::Vector3d& rotation_vector) {
  const double angle = rotation_vector.norm();
  if (angle == 0.0) return Eigen::Quaterniond::Identity();
  return Eigen::Quaterniond(
      Eigen::AngleAxisd(angle, rotation_vector / angle));
}

}  // namespace

void NoiseConfig::Validate() const {
  const double values[] = {sigma_pos,   sigma_vel,   sigma_att,
                           uniform_pos, uniform_vel, uniform_att,
                           gyro_sigma,  gyro_bias_sigma, ou_theta,
                           ou_sigma};
  for (double v : values) {
    if (!(v >= 0.0)) {
      throw std::invalid_argument("NoiseConfig: magnitudes must be >= 0");
    }
  }
}

NoiseConfig NoiseConfig::Zero() {
  NoiseConfig cfg;
  cfg.sigma_pos = cfg.sigma_vel = cfg.sigma_att = 0.0;
  cfg.uniform_pos = cfg.uniform_vel = cfg.uniform_att = 0.0;
  cfg.gyro_sigma = cfg.gyro_bias_sigma = 0.0;
  cfg.ou_theta = cfg.ou_sigma = 0.0;
  return cfg;
}

NoisyState CorruptState(const DroneState& state, const NoiseConfig& cfg,
                        const GyroBiasState& gyro, double dt, Rng& rng) {
  NoisyState out{state, gyro};
  out.state.position += GaussianPlusUniform(cfg.sigma_pos, cfg.uniform_pos, rng);
  out.state.velocity += GaussianPlusUniform(cfg.sigma_vel, cfg.uniform_vel, rng);

  const Eigen::Vector3d tilt =
      GaussianPlusUniform(cfg.sigma_att, cfg.uniform_att, rng);
  if (cfg.sigma_att > 0.0 || cfg.uniform_att > 0.0) {
    out.state.attitude = (state.attitude * SmallRotation(tilt)).normalized();
  }

  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::Vector3d white;
  for (int i = 0; i < 3; ++i) white(i) = normal(rng);
  out.state.body_rates += gyro.bias + cfg.gyro_sigma * white;

  const double walk = cfg.gyro_bias_sigma * std::sqrt(dt);
  for (int i = 0; i < 3; ++i) out.gyro.bias(i) += walk * normal(rng);
  return out;
}

OuState OuStep(const OuState& s, const NoiseConfig& cfg, double dt, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  OuState next;
  const double diffusion = cfg.ou_sigma * std::sqrt(dt);
  for (int i = 0; i < 4; ++i) {
    next.x(i) = s.x(i) - cfg.ou_theta * s.x(i) * dt + diffusion * normal(rng);
  }
  return next;
}

Eigen::Vector4d ApplyActuatorNoise(const Eigen::Vector4d& command,
                                   const OuState& s) {
  return (command + s.x).cwiseMax(0.0).cwiseMin(1.0);
}

}  // namespace quadsim
