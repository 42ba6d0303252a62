#include "quadsim/collect.hpp"

#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace quadsim {

void CollectConfig::Validate() const {
  if (!(duration > 0.0 && flight_duration > 0.0 && control_period > 0.0 &&
        controller_kf > 0.0)) {
    throw std::invalid_argument("CollectConfig: durations must be positive");
  }
  task.Validate();
  noise.Validate();
}

FlightLog CollectFlights(const DroneParams& drone, const SimParams& oracle,
                         const CollectConfig& cfg, std::uint64_t seed) {
  cfg.Validate();
  oracle.Validate();
  const int substeps = static_cast<int>(std::lround(cfg.control_period / oracle.dt));
  if (substeps < 1 ||
      std::abs(substeps * oracle.dt - cfg.control_period) > 1e-9) {
    throw std::invalid_argument(
        "CollectFlights: control period must be a multiple of dt");
  }
  const auto total_ticks =
      static_cast<long>(std::lround(cfg.duration / cfg.control_period));
  const auto flight_ticks = std::max(
      1L, static_cast<long>(std::lround(cfg.flight_duration / cfg.control_period)));

  Rng rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const MixerModel model{drone, cfg.controller_kf};
  FlightLog log;
  Quadrotor quad(drone, oracle);
  double time = 0.0;

  for (long done = 0; done < total_ticks;) {
    const long ticks = std::min(flight_ticks, total_ticks - done);
    const double phase = 2.0 * std::numbers::pi * unit(rng);
    DroneState start;
    start.position = CircleSetpoint(0.0, cfg.task, phase);
    start.rotor_speeds.setConstant(HoverRotorSpeed(oracle.kf));
    quad.Reset(start, Eigen::Vector4d::Constant(1.0 / oracle.kf));
    PositionState pid;
    GyroBiasState gyro;
    OuState ou;
    log.BeginFlight();

    for (long k = 0; k < ticks; ++k) {
      const double t = static_cast<double>(k) * cfg.control_period;
      const NoisyState meas =
          CorruptState(quad.state(), cfg.noise, gyro, cfg.control_period, rng);
      gyro = meas.gyro;
      const Eigen::Vector4d u =
          PositionControl(CircleSetpoint(t, cfg.task, phase), meas.state, pid,
                          cfg.gains, model, cfg.control_period)
              .u;
      log.Append(time, meas.state.ToVector(), u);
      for (int j = 0; j < substeps; ++j) {
        quad.Step(ApplyActuatorNoise(u, ou));
        ou = OuStep(ou, cfg.noise, oracle.dt, rng);
      }
      time += cfg.control_period;
      const double err =
          (quad.state().position -
           CircleSetpoint(t + cfg.control_period, cfg.task, phase))
              .norm();
      if (!(err < cfg.task.termination_radius)) {
        std::ostringstream msg;
        msg << "CollectFlights: position controller lost the circle in flight "
            << log.flights() - 1 << " at t=" << t + cfg.control_period
            << " s (error " << err << " m)";
        throw std::runtime_error(msg.str());
      }
    }
    done += ticks;
    // Keep a gap between flights so their timestamps never look contiguous.
    time += 1.0;
  }
  return log;
}

}  // namespace quadsim
