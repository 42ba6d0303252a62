#ifndef QUADSIM_COLLECT_HPP_
#define QUADSIM_COLLECT_HPP_

#include <cstdint>

#include "quadsim/control.hpp"
#include "quadsim/env.hpp"
#include "quadsim/sensing.hpp"
#include "quadsim/simopt.hpp"

namespace quadsim {

struct CollectConfig {
  double duration = 3600.0;       // total logged time, s
  double flight_duration = 60.0;  // length of one flight, s
  double control_period = kLogPeriod;
  TaskConfig task;
  NoiseConfig noise;
  ControlGains gains = ControlGains::Defaults();
  // Thrust coefficient the controller's mixer assumes.
  double controller_kf = 1.722;

  void Validate() const;
};

// Flies the circle task with the cascaded position controller on the given
// (hidden) simulator and logs the measured state with the commanded motor
// signal at every control tick. Throws std::runtime_error if the tracking
// error ever reaches the task's termination radius.
FlightLog CollectFlights(const DroneParams& drone, const SimParams& oracle,
                         const CollectConfig& cfg, std::uint64_t seed);

}  // namespace quadsim

#endif  // QUADSIM_COLLECT_HPP_
