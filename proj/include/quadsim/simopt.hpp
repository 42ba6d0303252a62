#ifndef QUADSIM_SIMOPT_HPP_
#define QUADSIM_SIMOPT_HPP_

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "quadsim/dynamics.hpp"

namespace quadsim {

// Logging period of recorded flights, s.
inline constexpr double kLogPeriod = 0.01;

struct FlightSample {
  double time = 0.0;
  Vector13d state = Vector13d::Zero();
  Eigen::Vector4d command = Eigen::Vector4d::Zero();
};

// Recorded (state, command) pairs. Consecutive flights are stored back to
// back; `flight_starts` holds the index of the first sample of each flight.
struct FlightLog {
  std::vector<FlightSample> samples;
  std::vector<std::size_t> flight_starts;

  // Appends a new flight; subsequent Append calls extend it.
  void BeginFlight();
  void Append(double time, const Vector13d& state,
              const Eigen::Vector4d& command);
  std::size_t size() const { return samples.size(); }
  std::size_t flights() const { return flight_starts.size(); }
  // [begin, end) of flight k.
  std::pair<std::size_t, std::size_t> FlightRange(std::size_t k) const;

  // Throws std::invalid_argument if timestamps are not strictly increasing
  // with 10 ms spacing (1% tolerance) inside each flight.
  void Validate() const;
};

// CSV with header flight,t,r_x,...,omega_z,u_1,...,u_4.
void WriteFlightLog(const FlightLog& log, std::ostream& out);
FlightLog ReadFlightLog(std::istream& in);
void WriteFlightLog(const FlightLog& log, const std::string& path);
FlightLog ReadFlightLog(const std::string& path);

// FNV-1a over the CSV serialization; identifies the log a dataset came from.
std::uint64_t HashFlightLog(const FlightLog& log);

struct MiniTrajectory {
  std::size_t start = 0;  // log index of x0
  Vector13d x0;
  // Commands logged just before u_i in the same flight, oldest first. Used
  // only to bring the motor and latency state up to date before replay.
  std::vector<Eigen::Vector4d> warmup;
  std::vector<Eigen::Vector4d> commands;  // u_i .. u_{i+T-1}
  std::vector<Vector13d> states;          // x_{i+1} .. x_{i+T}
};

struct Dataset {
  int horizon = 0;
  int stride = 0;
  int warmup = 0;
  std::uint64_t source_hash = 0;
  std::vector<MiniTrajectory> windows;
};

// One window per stride-th sample of every flight; windows that would run
// past the end of their flight are dropped. Each window also keeps up to
// `warmup` preceding commands. Throws if no window fits.
Dataset BuildDataset(const FlightLog& log, int horizon, int stride = 10,
                     int warmup = 0);

// Cache: <path> lists the window start indices as CSV, <path>.manifest holds
// horizon, stride, warm-up and the hash of the source log. Loading rebuilds
// the windows from the log and refuses a log with a different hash.
void SaveDataset(const Dataset& data, const std::string& path);
Dataset LoadDataset(const FlightLog& log, const std::string& path);
// Loads the cached dataset when its manifest matches, otherwise builds and
// stores a new one.
Dataset LoadOrBuildDataset(const FlightLog& log, int horizon, int stride,
                           int warmup, const std::string& path);

struct ReplayResult {
  std::vector<Vector13d> states;
  bool diverged = false;
};

// Open-loop re-simulation from x0, holding each command for one log period.
// Rotor speeds start at the steady state of the first command and the
// latency queue is filled with it. With warm-up commands, that initial
// condition is applied to the oldest one instead and only the motors and the
// latency queue are run through the warm-up before the rigid body starts.
ReplayResult Replay(const Vector13d& x0, std::span<const Eigen::Vector4d> commands,
                    const DroneParams& drone, const SimParams& sim,
                    std::span<const Eigen::Vector4d> warmup = {});

// Candidate parameter vector ordering: (kF, Tm, latency).
using SimCandidate = Eigen::Vector3d;
SimParams ApplyCandidate(const SimCandidate& xi, SimParams base = {});

struct SimOptConfig {
  int horizon = 50;
  int stride = 10;
  int replay_warmup = 50;  // logged commands replayed into the motor state
  double discount = 0.95;
  Vector13d weights = DefaultWeights();
  SimCandidate lower{1.5, 0.01, 0.0};
  SimCandidate upper{2.5, 0.50, 0.05};
  int n_evals = 250;
  int n_trials = 3;
  int threads = 1;
  DroneParams drone;
  double dt = 0.005;

  static Vector13d DefaultWeights();
  void Validate() const;
};

// sum_t discount^t (|W d_t|_1 + |W d_t|_2) for one window, with the simulated
// quaternion sign-aligned to the recorded one before differencing.
double DiscountedError(std::span<const Vector13d> sim,
                       std::span<const Vector13d> real,
                       const Vector13d& weights, double discount);

struct ObjectiveValue {
  double value = 0.0;  // +inf when any window diverged
  int diverged_windows = 0;
};

// Mean discounted error over all windows. Windows are evaluated on
// `cfg.threads` threads; the result does not depend on the thread count.
ObjectiveValue Objective(const SimCandidate& xi, const Dataset& data,
                         const SimOptConfig& cfg);

}  // namespace quadsim

#endif  // QUADSIM_SIMOPT_HPP_
