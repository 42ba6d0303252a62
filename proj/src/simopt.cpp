#include "quadsim/simopt.hpp"

#include "quadsim/io.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace quadsim {

namespace {

constexpr const char* kLogHeader =
    "flight,t,r_x,r_y,r_z,v_x,v_y,v_z,q_w,q_x,q_y,q_z,omega_x,omega_y,"
    "omega_z,u_1,u_2,u_3,u_4";

void AppendDouble(std::string& out, double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, res.ptr);
}

std::vector<double> ParseRow(const std::string& line, std::size_t expected,
                             std::size_t line_no) {
  std::vector<double> values;
  values.reserve(expected);
  const char* p = line.data();
  const char* end = p + line.size();
  while (p <= end) {
    const char* comma = std::find(p, end, ',');
    double v = 0.0;
    const auto res = std::from_chars(p, comma, v);
    if (res.ec != std::errc() || res.ptr != comma) {
      throw std::runtime_error("line " + std::to_string(line_no) +
                               ": malformed number");
    }
    values.push_back(v);
    p = comma + 1;
  }
  if (values.size() != expected) {
    throw std::runtime_error("line " + std::to_string(line_no) + ": expected " +
                             std::to_string(expected) + " fields");
  }
  return values;
}

std::string SerializeLog(const FlightLog& log) {
  std::string out = kLogHeader;
  out += '\n';
  for (std::size_t k = 0; k < log.flights(); ++k) {
    const auto [begin, end] = log.FlightRange(k);
    for (std::size_t i = begin; i < end; ++i) {
      const FlightSample& s = log.samples[i];
      out += std::to_string(k);
      out += ',';
      AppendDouble(out, s.time);
      for (int j = 0; j < 13; ++j) {
        out += ',';
        AppendDouble(out, s.state(j));
      }
      for (int j = 0; j < 4; ++j) {
        out += ',';
        AppendDouble(out, s.command(j));
      }
      out += '\n';
    }
  }
  return out;
}

std::uint64_t Fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

void FlightLog::BeginFlight() { flight_starts.push_back(samples.size()); }

void FlightLog::Append(double time, const Vector13d& state,
                       const Eigen::Vector4d& command) {
  if (flight_starts.empty()) BeginFlight();
  samples.push_back({time, state, command});
}

std::pair<std::size_t, std::size_t> FlightLog::FlightRange(std::size_t k) const {
  const std::size_t end =
      k + 1 < flight_starts.size() ? flight_starts[k + 1] : samples.size();
  return {flight_starts.at(k), end};
}

void FlightLog::Validate() const {
  if (!samples.empty() && (flight_starts.empty() || flight_starts[0] != 0)) {
    throw std::invalid_argument("FlightLog: samples outside any flight");
  }
  for (std::size_t k = 0; k < flights(); ++k) {
    const auto [begin, end] = FlightRange(k);
    for (std::size_t i = begin + 1; i < end; ++i) {
      const double gap = samples[i].time - samples[i - 1].time;
      if (!(gap > 0.0) || std::abs(gap - kLogPeriod) > 0.01 * kLogPeriod) {
        throw std::invalid_argument("FlightLog: bad timestamp spacing at row " +
                                    std::to_string(i));
      }
    }
  }
}

void WriteFlightLog(const FlightLog& log, std::ostream& out) {
  out << SerializeLog(log);
}

FlightLog ReadFlightLog(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kLogHeader) {
    throw std::runtime_error("flight log: missing or unexpected header");
  }
  FlightLog log;
  long current = -1;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::vector<double> v = ParseRow(line, 19, line_no);
    const long flight = std::lround(v[0]);
    if (flight != current) {
      if (flight != current + 1) {
        throw std::runtime_error("flight log: flights out of order at line " +
                                 std::to_string(line_no));
      }
      log.BeginFlight();
      current = flight;
    }
    FlightSample s;
    s.time = v[1];
    for (int j = 0; j < 13; ++j) s.state(j) = v[2 + j];
    for (int j = 0; j < 4; ++j) s.command(j) = v[15 + j];
    log.samples.push_back(s);
  }
  log.Validate();
  return log;
}

void WriteFlightLog(const FlightLog& log, const std::string& path) {
  WriteFileAtomic(path, SerializeLog(log));
}

FlightLog ReadFlightLog(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return ReadFlightLog(in);
}

std::uint64_t HashFlightLog(const FlightLog& log) {
  return Fnv1a(SerializeLog(log));
}

namespace {

MiniTrajectory MakeWindow(const FlightLog& log, std::size_t flight_begin,
                          std::size_t start, int horizon, int warmup) {
  const auto t = static_cast<std::size_t>(horizon);
  MiniTrajectory w;
  w.start = start;
  w.x0 = log.samples[start].state;
  const std::size_t first =
      start - std::min(start - flight_begin, static_cast<std::size_t>(warmup));
  for (std::size_t j = first; j < start; ++j) {
    w.warmup.push_back(log.samples[j].command);
  }
  w.commands.reserve(t);
  w.states.reserve(t);
  for (std::size_t j = 0; j < t; ++j) {
    w.commands.push_back(log.samples[start + j].command);
    w.states.push_back(log.samples[start + j + 1].state);
  }
  return w;
}

struct Manifest {
  int horizon = 0;
  int stride = 0;
  int warmup = 0;
  std::uint64_t source_hash = 0;
  std::size_t windows = 0;
};

Manifest ReadManifest(const std::string& path) {
  std::istringstream in(ReadFile(path));
  Manifest m;
  std::string key;
  while (in >> key) {
    if (key == "horizon") in >> m.horizon;
    else if (key == "stride") in >> m.stride;
    else if (key == "warmup") in >> m.warmup;
    else if (key == "source_hash") in >> m.source_hash;
    else if (key == "windows") in >> m.windows;
    else throw std::runtime_error(path + ": unknown key " + key);
  }
  return m;
}

}  // namespace

Dataset BuildDataset(const FlightLog& log, int horizon, int stride,
                     int warmup) {
  if (horizon < 1 || stride < 1 || warmup < 0) {
    throw std::invalid_argument("BuildDataset: bad horizon, stride or warmup");
  }
  Dataset data;
  data.horizon = horizon;
  data.stride = stride;
  data.warmup = warmup;
  data.source_hash = HashFlightLog(log);
  const auto t = static_cast<std::size_t>(horizon);
  for (std::size_t k = 0; k < log.flights(); ++k) {
    const auto [begin, end] = log.FlightRange(k);
    for (std::size_t i = begin; i + t < end; i += static_cast<std::size_t>(stride)) {
      data.windows.push_back(MakeWindow(log, begin, i, horizon, warmup));
    }
  }
  if (data.windows.empty()) {
    throw std::invalid_argument("BuildDataset: log too short for horizon " +
                                std::to_string(horizon));
  }
  return data;
}

void SaveDataset(const Dataset& data, const std::string& path) {
  std::string body = "window,start\n";
  for (std::size_t w = 0; w < data.windows.size(); ++w) {
    body += std::to_string(w) + ',' + std::to_string(data.windows[w].start) + '\n';
  }
  std::ostringstream manifest;
  manifest << "horizon " << data.horizon << "\nstride " << data.stride
           << "\nwarmup " << data.warmup << "\nsource_hash " << data.source_hash
           << "\nwindows " << data.windows.size() << '\n';
  WriteFileAtomic(path, body);
  WriteFileAtomic(path + ".manifest", manifest.str());
}

Dataset LoadDataset(const FlightLog& log, const std::string& path) {
  const Manifest m = ReadManifest(path + ".manifest");
  if (m.source_hash != HashFlightLog(log)) {
    throw std::runtime_error(path + ": cached dataset belongs to another log");
  }
  Dataset data;
  data.horizon = m.horizon;
  data.stride = m.stride;
  data.warmup = m.warmup;
  data.source_hash = m.source_hash;
  std::istringstream in(ReadFile(path));
  std::string line;
  std::getline(in, line);
  std::size_t line_no = 1;
  std::size_t flight = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::vector<double> v = ParseRow(line, 2, line_no);
    const auto start = static_cast<std::size_t>(v[1]);
    while (flight + 1 < log.flights() && log.FlightRange(flight).second <= start) {
      ++flight;
    }
    const auto [begin, end] = log.FlightRange(flight);
    if (start < begin || start + static_cast<std::size_t>(m.horizon) >= end) {
      throw std::runtime_error(path + ": window outside its flight at line " +
                               std::to_string(line_no));
    }
    data.windows.push_back(MakeWindow(log, begin, start, m.horizon, m.warmup));
  }
  if (data.windows.size() != m.windows) {
    throw std::runtime_error(path + ": window count does not match manifest");
  }
  return data;
}

Dataset LoadOrBuildDataset(const FlightLog& log, int horizon, int stride,
                           int warmup, const std::string& path) {
  try {
    const Manifest m = ReadManifest(path + ".manifest");
    if (m.horizon == horizon && m.stride == stride && m.warmup == warmup) {
      return LoadDataset(log, path);
    }
  } catch (const std::exception&) {
    // Missing, stale or unreadable cache: rebuild below.
  }
  Dataset data = BuildDataset(log, horizon, stride, warmup);
  SaveDataset(data, path);
  return data;
}

ReplayResult Replay(const Vector13d& x0, std::span<const Eigen::Vector4d> commands,
                    const DroneParams& drone, const SimParams& sim,
                    std::span<const Eigen::Vector4d> warmup) {
  ReplayResult out;
  if (commands.empty()) return out;
  const int substeps = static_cast<int>(std::lround(kLogPeriod / sim.dt));
  auto clamp = [](const Eigen::Vector4d& u) -> Eigen::Vector4d {
    return u.cwiseMax(0.0).cwiseMin(1.0);
  };
  const Eigen::Vector4d u0 = clamp(warmup.empty() ? commands[0] : warmup[0]);
  DroneState state = DroneState::FromVector(x0);
  state.attitude.normalize();
  state.rotor_speeds = u0.cwiseSqrt();
  LatencyQueue queue(sim.LatencySteps(), u0);
  for (const Eigen::Vector4d& u : warmup) {
    for (int k = 0; k < substeps; ++k) {
      state.rotor_speeds = MotorStep(state.rotor_speeds, queue.Push(u), sim.tm, sim.dt);
    }
  }
  out.states.reserve(commands.size());
  for (const Eigen::Vector4d& u : commands) {
    for (int k = 0; k < substeps; ++k) {
      StepResult r = Step(state, u, drone, sim, queue);
      if (r.diverged) {
        out.diverged = true;
        return out;
      }
      state = r.state;
    }
    out.states.push_back(state.ToVector());
  }
  return out;
}

SimParams ApplyCandidate(const SimCandidate& xi, SimParams base) {
  base.kf = xi(0);
  base.tm = xi(1);
  base.latency = xi(2);
  return base;
}

Vector13d SimOptConfig::DefaultWeights() {
  Vector13d w;
  w << 1.0, 1.0, 1.0, 0.5, 0.5, 0.5, 1.0, 1.0, 1.0, 1.0, 0.05, 0.05, 0.05;
  return w;
}

void SimOptConfig::Validate() const {
  if (horizon < 1 || stride < 1) {
    throw std::invalid_argument("SimOptConfig: horizon and stride must be >= 1");
  }
  if (!(discount > 0.0 && discount < 1.0)) {
    throw std::invalid_argument("SimOptConfig: discount must be in (0,1)");
  }
  if (!(lower.array() < upper.array()).all()) {
    throw std::invalid_argument("SimOptConfig: need lower < upper");
  }
  if (n_evals < 1 || n_trials < 1 || threads < 1 || !(dt > 0.0)) {
    throw std::invalid_argument("SimOptConfig: bad counts or dt");
  }
  if ((weights.array() < 0.0).any()) {
    throw std::invalid_argument("SimOptConfig: negative weight");
  }
}

double DiscountedError(std::span<const Vector13d> sim,
                       std::span<const Vector13d> real,
                       const Vector13d& weights, double discount) {
  if (sim.size() != real.size()) {
    throw std::invalid_argument("DiscountedError: length mismatch");
  }
  double total = 0.0;
  double factor = 1.0;
  for (std::size_t t = 0; t < sim.size(); ++t) {
    Vector13d s = sim[t];
    if (s.segment<4>(6).dot(real[t].segment<4>(6)) < 0.0) {
      s.segment<4>(6) = -s.segment<4>(6);
    }
    const Vector13d d = weights.cwiseProduct(s - real[t]);
    total += factor * (d.lpNorm<1>() + d.norm());
    factor *= discount;
  }
  return total;
}

ObjectiveValue Objective(const SimCandidate& xi, const Dataset& data,
                         const SimOptConfig& cfg) {
  SimParams sim;
  sim.dt = cfg.dt;
  sim = ApplyCandidate(xi, sim);
  const std::size_t n = data.windows.size();
  std::vector<double> errors(n, 0.0);
  std::vector<std::uint8_t> diverged(n, 0);

  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const MiniTrajectory& w = data.windows[i];
      const ReplayResult r = Replay(w.x0, w.commands, cfg.drone, sim, w.warmup);
      if (r.diverged) {
        diverged[i] = 1;
        continue;
      }
      errors[i] = DiscountedError(r.states, w.states, cfg.weights, cfg.discount);
      if (!std::isfinite(errors[i])) diverged[i] = 1;
    }
  };
  const auto threads = static_cast<std::size_t>(
      std::clamp<std::size_t>(static_cast<std::size_t>(cfg.threads), 1, n));
  if (threads == 1) {
    work(0, n);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back(work, n * t / threads, n * (t + 1) / threads);
    }
  }

  ObjectiveValue out;
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (diverged[i]) ++out.diverged_windows;
    else sum += errors[i];
  }
  out.value = out.diverged_windows > 0
                  ? std::numeric_limits<double>::infinity()
                  : sum / static_cast<double>(n);
  return out;
}

}  // namespace quadsim
