#include "quadsim/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <nlohmann/json.hpp>
#include <yaml-cpp/yaml.h>

#include "quadsim/io.hpp"

namespace quadsim {

namespace fs = std::filesystem;

namespace {

std::string Num(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string Fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

void Log(const std::string& stage, const std::string& msg) {
  static std::mutex mu;
  const std::string line = '[' + stage + "] " + msg + '\n';
  std::lock_guard<std::mutex> lock(mu);
  std::cerr << line;
}

std::vector<std::string> SplitCsv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

// Rows of a CSV file keyed by header name. Missing file gives no rows.
std::vector<std::map<std::string, std::string>> ReadCsv(const std::string& path) {
  std::vector<std::map<std::string, std::string>> rows;
  if (!fs::exists(path)) return rows;
  std::istringstream in(ReadFile(path));
  std::string line;
  if (!std::getline(in, line)) return rows;
  const std::vector<std::string> header = SplitCsv(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const std::vector<std::string> fields = SplitCsv(line);
    if (fields.size() != header.size()) {
      throw std::runtime_error(path + ": ragged row");
    }
    std::map<std::string, std::string> row;
    for (std::size_t i = 0; i < header.size(); ++i) row[header[i]] = fields[i];
    rows.push_back(std::move(row));
  }
  return rows;
}

double ToDouble(const std::string& s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc()) throw std::runtime_error("bad number: " + s);
  return v;
}

// Runs f(i) for i in [0, n) on up to `jobs` threads. Exceptions are
// collected and the first one (by index) is rethrown.
template <typename F>
void ParallelFor(std::size_t n, int jobs, F&& f) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next++) < n;) {
      try {
        f(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const auto threads =
      std::min<std::size_t>(static_cast<std::size_t>(std::max(jobs, 1)), n);
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

// ---- YAML ----------------------------------------------------------------

void CheckKeys(const YAML::Node& node, const std::string& path,
               std::initializer_list<const char*> allowed) {
  if (!node.IsMap()) throw std::invalid_argument(path + ": expected a mapping");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& kv : node) {
    const std::string key = kv.first.as<std::string>();
    if (!ok.count(key)) {
      throw std::invalid_argument("unknown config key: " +
                                  (path.empty() ? key : path + "." + key));
    }
  }
}

template <typename T>
void Get(const YAML::Node& node, const char* key, T& out, const std::string& path) {
  const YAML::Node v = node[key];
  if (!v) return;
  try {
    out = v.as<T>();
  } catch (const YAML::Exception&) {
    throw std::invalid_argument("bad value for " + path + "." + key);
  }
}

template <int N>
void GetVec(const YAML::Node& node, const char* key, Eigen::Matrix<double, N, 1>& out,
            const std::string& path) {
  const YAML::Node v = node[key];
  if (!v) return;
  std::vector<double> values;
  Get(node, key, values, path);
  if (static_cast<int>(values.size()) != N) {
    throw std::invalid_argument(path + "." + key + ": expected " +
                                std::to_string(N) + " values");
  }
  for (int i = 0; i < N; ++i) out(i) = values[static_cast<std::size_t>(i)];
}

void ParseDrone(const YAML::Node& n, DroneParams& d) {
  const std::string p = "drone";
  CheckKeys(n, p, {"mass", "gravity", "inertia", "arm_length", "km1", "km2"});
  Get(n, "mass", d.mass, p);
  Get(n, "gravity", d.gravity, p);
  GetVec<3>(n, "inertia", d.inertia, p);
  Get(n, "arm_length", d.arm_length, p);
  Get(n, "km1", d.km1, p);
  Get(n, "km2", d.km2, p);
}

void ParseNominal(const YAML::Node& n, SimParams& s) {
  const std::string p = "nominal";
  CheckKeys(n, p, {"kf", "tm", "latency", "dt", "integrator"});
  Get(n, "kf", s.kf, p);
  Get(n, "tm", s.tm, p);
  Get(n, "latency", s.latency, p);
  Get(n, "dt", s.dt, p);
  std::string integrator;
  Get(n, "integrator", integrator, p);
  if (integrator == "semi_implicit_euler") {
    s.integrator = Integrator::kSemiImplicitEuler;
  } else if (integrator == "rk4") {
    s.integrator = Integrator::kRk4;
  } else if (!integrator.empty()) {
    throw std::invalid_argument("nominal.integrator: expected semi_implicit_euler or rk4");
  }
}

void ParseTask(const YAML::Node& n, TaskConfig& t) {
  const std::string p = "task";
  CheckKeys(n, p, {"diameter", "period", "height", "clockwise", "episode_steps",
                   "termination_radius", "terminal_reward", "max_tilt_deg",
                   "max_rate_deg"});
  Get(n, "diameter", t.diameter, p);
  Get(n, "period", t.period, p);
  Get(n, "height", t.height, p);
  Get(n, "clockwise", t.clockwise, p);
  Get(n, "episode_steps", t.episode_steps, p);
  Get(n, "termination_radius", t.termination_radius, p);
  Get(n, "terminal_reward", t.terminal_reward, p);
  Get(n, "max_tilt_deg", t.max_tilt_deg, p);
  Get(n, "max_rate_deg", t.max_rate_deg, p);
}

void ParseNoise(const YAML::Node& n, NoiseConfig& c) {
  const std::string p = "noise";
  CheckKeys(n, p, {"sigma_pos", "sigma_vel", "sigma_att", "uniform_pos",
                   "uniform_vel", "uniform_att", "gyro_sigma", "gyro_bias_sigma",
                   "ou_theta", "ou_sigma"});
  Get(n, "sigma_pos", c.sigma_pos, p);
  Get(n, "sigma_vel", c.sigma_vel, p);
  Get(n, "sigma_att", c.sigma_att, p);
  Get(n, "uniform_pos", c.uniform_pos, p);
  Get(n, "uniform_vel", c.uniform_vel, p);
  Get(n, "uniform_att", c.uniform_att, p);
  Get(n, "gyro_sigma", c.gyro_sigma, p);
  Get(n, "gyro_bias_sigma", c.gyro_bias_sigma, p);
  Get(n, "ou_theta", c.ou_theta, p);
  Get(n, "ou_sigma", c.ou_sigma, p);
}

void ParseSimOpt(const YAML::Node& n, SimOptRunConfig& s) {
  const std::string p = "simopt";
  CheckKeys(n, p, {"horizons", "stride", "replay_warmup", "discount", "weights",
                   "lower", "upper", "n_evals", "n_trials", "threads",
                   "initial_design", "candidates", "refine_starts", "gp_restarts",
                   "kappa", "xi", "cache_dataset"});
  Get(n, "horizons", s.horizons, p);
  Get(n, "stride", s.problem.stride, p);
  Get(n, "replay_warmup", s.problem.replay_warmup, p);
  Get(n, "discount", s.problem.discount, p);
  GetVec<13>(n, "weights", s.problem.weights, p);
  GetVec<3>(n, "lower", s.problem.lower, p);
  GetVec<3>(n, "upper", s.problem.upper, p);
  Get(n, "n_evals", s.problem.n_evals, p);
  Get(n, "n_trials", s.problem.n_trials, p);
  Get(n, "threads", s.problem.threads, p);
  Get(n, "initial_design", s.bo.initial_design, p);
  Get(n, "candidates", s.bo.candidates, p);
  Get(n, "refine_starts", s.bo.refine_starts, p);
  Get(n, "gp_restarts", s.bo.gp_restarts, p);
  Get(n, "kappa", s.bo.acquisition.kappa, p);
  Get(n, "xi", s.bo.acquisition.xi, p);
  Get(n, "cache_dataset", s.cache_dataset, p);
}

void ParseTrain(const YAML::Node& n, ExperimentConfig& c) {
  const std::string p = "train";
  CheckKeys(n, p, {"workers", "batch", "epochs", "gamma", "lambda", "lr_actor",
                   "lr_critic", "eps_start", "eps_end", "clip", "passes",
                   "minibatch", "max_grad_norm", "history", "randomization"});
  TrainConfig& t = c.train;
  Get(n, "workers", t.workers, p);
  Get(n, "batch", t.batch, p);
  Get(n, "epochs", t.epochs, p);
  Get(n, "gamma", t.gamma, p);
  Get(n, "lambda", t.lambda, p);
  Get(n, "lr_actor", t.lr_actor, p);
  Get(n, "lr_critic", t.lr_critic, p);
  Get(n, "eps_start", t.eps_start, p);
  Get(n, "eps_end", t.eps_end, p);
  Get(n, "clip", t.ppo.clip, p);
  Get(n, "passes", t.ppo.passes, p);
  Get(n, "minibatch", t.ppo.minibatch, p);
  Get(n, "max_grad_norm", t.ppo.max_grad_norm, p);
  Get(n, "history", c.history, p);
  Get(n, "randomization", c.randomization.half_width, p);
}

void ParseGrid(const YAML::Node& n, GridSpec& g) {
  const std::string p = "grid";
  CheckKeys(n, p, {"seeds", "tm", "latency", "levels"});
  Get(n, "seeds", g.seeds, p);
  Get(n, "tm", g.tm, p);
  Get(n, "latency", g.latency, p);
  std::vector<std::string> levels;
  Get(n, "levels", levels, p);
  if (n["levels"]) {
    g.levels.clear();
    for (const std::string& l : levels) g.levels.push_back(ParseControlLevel(l));
  }
}

void ParseEvaluate(const YAML::Node& n, EvalSpec& e) {
  const std::string p = "evaluate";
  CheckKeys(n, p, {"trials", "max_flight_time"});
  Get(n, "trials", e.trials, p);
  Get(n, "max_flight_time", e.max_flight_time, p);
}

// Emits doubles in shortest round-trip form so ToYaml/Parse is lossless.
using Entry = std::pair<const char*, YAML::Node>;

YAML::Node Scalar(const std::string& s) { return YAML::Node(s); }

void EmitMap(YAML::Emitter& out, const char* key, const std::vector<Entry>& entries) {
  out << YAML::Key << key << YAML::Value << YAML::BeginMap;
  for (const auto& [k, v] : entries) out << YAML::Key << k << YAML::Value << v;
  out << YAML::EndMap;
}

YAML::Node FlowList(const std::vector<std::string>& items) {
  YAML::Node n(YAML::NodeType::Sequence);
  for (const std::string& s : items) n.push_back(s);
  n.SetStyle(YAML::EmitterStyle::Flow);
  return n;
}

YAML::Node FlowList(const std::vector<double>& v) {
  std::vector<std::string> items;
  for (double x : v) items.push_back(Num(x));
  return FlowList(items);
}

YAML::Node FlowList(const Eigen::VectorXd& v) {
  return FlowList(std::vector<double>(v.data(), v.data() + v.size()));
}

YAML::Node Bool(bool b) { return Scalar(b ? "true" : "false"); }

}  // namespace

Preset ParsePreset(const std::string& name) {
  if (name == "paper") return Preset::kPaper;
  if (name == "desk") return Preset::kDesk;
  throw std::invalid_argument("unknown preset '" + name + "' (paper, desk)");
}

ExperimentConfig ExperimentConfig::ForPreset(Preset preset) {
  ExperimentConfig c;
  c.randomization.half_width = 0.10;
  if (preset == Preset::kPaper) return c;

  c.output_dir = "out_desk";
  c.collect_duration = 600.0;
  c.simopt.problem.n_evals = 120;
  c.train.workers = 4;
  c.train.batch = 2000;
  c.train.epochs = 100;
  c.train.ppo.minibatch = 500;
  c.grid.seeds = 1;
  c.grid.tm = {0.08, 0.12};
  c.grid.latency = {0.0, 0.02};
  c.grid.levels = {ControlLevel::kPwm};
  return c;
}

void ExperimentConfig::Validate() const {
  if (jobs < 1) throw std::invalid_argument("jobs must be >= 1");
  if (output_dir.empty()) throw std::invalid_argument("output_dir is empty");
  drone.Validate();
  nominal.Validate();
  OracleParams().Validate();
  task.Validate();
  noise.Validate();
  Collect().Validate();
  simopt.problem.Validate();
  if (simopt.horizons.empty()) throw std::invalid_argument("simopt.horizons is empty");
  for (int t : simopt.horizons) {
    if (t < 1) throw std::invalid_argument("simopt.horizons must be >= 1");
  }
  train.Validate();
  if (history < 1) throw std::invalid_argument("train.history must be >= 1");
  randomization.Validate();
  if (grid.seeds < 1 || grid.tm.empty() || grid.latency.empty() ||
      grid.levels.empty()) {
    throw std::invalid_argument("grid: need >= 1 seed, Tm, latency and level");
  }
  for (double tm : grid.tm) {
    if (!(tm > 0.0)) throw std::invalid_argument("grid.tm must be positive");
  }
  for (double l : grid.latency) {
    if (!(l >= 0.0)) throw std::invalid_argument("grid.latency must be >= 0");
  }
  if (evaluate.trials < 1 || !(evaluate.max_flight_time > 0.0)) {
    throw std::invalid_argument("evaluate: need trials >= 1 and a positive cap");
  }
}

SimParams ExperimentConfig::OracleParams() const {
  return ApplyCandidate(oracle, nominal);
}

EnvConfig ExperimentConfig::TrainEnv(ControlLevel level, double tm,
                                     double latency) const {
  EnvConfig env;
  env.level = level;
  env.history = history;
  env.task = task;
  env.noise = noise;
  env.randomization = randomization;
  env.drone = drone;
  env.sim = nominal;
  env.sim.tm = tm;
  env.sim.latency = latency;
  env.gains = gains;
  return env;
}

EnvConfig ExperimentConfig::EvalEnv(ControlLevel level) const {
  EnvConfig env = TrainEnv(level, oracle(1), oracle(2));
  env.sim = OracleParams();
  env.randomization.half_width = 0.0;
  env.task.episode_steps = static_cast<int>(
      std::lround(evaluate.max_flight_time * PolicyRateHz(level)));
  return env;
}

CollectConfig ExperimentConfig::Collect() const {
  CollectConfig c;
  c.duration = collect_duration;
  c.flight_duration = flight_duration;
  c.task = task;
  c.noise = noise;
  c.gains = gains;
  c.controller_kf = nominal.kf;
  return c;
}

ExperimentConfig ParseExperimentConfig(const std::string& yaml, Preset base) {
  ExperimentConfig c = ExperimentConfig::ForPreset(base);
  YAML::Node root;
  try {
    root = YAML::Load(yaml);
  } catch (const YAML::Exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  if (!root || root.IsNull()) return c;
  CheckKeys(root, "", {"seed", "output_dir", "jobs", "drone", "nominal", "oracle",
                       "task", "noise", "collect", "simopt", "train", "grid",
                       "evaluate"});
  Get(root, "seed", c.seed, "");
  Get(root, "output_dir", c.output_dir, "");
  Get(root, "jobs", c.jobs, "");
  if (root["drone"]) ParseDrone(root["drone"], c.drone);
  if (root["nominal"]) ParseNominal(root["nominal"], c.nominal);
  if (const YAML::Node o = root["oracle"]) {
    CheckKeys(o, "oracle", {"kf", "tm", "latency"});
    Get(o, "kf", c.oracle(0), "oracle");
    Get(o, "tm", c.oracle(1), "oracle");
    Get(o, "latency", c.oracle(2), "oracle");
  }
  if (root["task"]) ParseTask(root["task"], c.task);
  if (root["noise"]) ParseNoise(root["noise"], c.noise);
  if (const YAML::Node n = root["collect"]) {
    CheckKeys(n, "collect", {"duration", "flight_duration"});
    Get(n, "duration", c.collect_duration, "collect");
    Get(n, "flight_duration", c.flight_duration, "collect");
  }
  if (root["simopt"]) ParseSimOpt(root["simopt"], c.simopt);
  if (root["train"]) ParseTrain(root["train"], c);
  if (root["grid"]) ParseGrid(root["grid"], c.grid);
  if (root["evaluate"]) ParseEvaluate(root["evaluate"], c.evaluate);
  c.Validate();
  return c;
}

ExperimentConfig LoadExperimentConfig(const std::string& path, Preset base) {
  return ParseExperimentConfig(ReadFile(path), base);
}

std::string ToYaml(const ExperimentConfig& c) {
  YAML::Emitter out;
  out << YAML::BeginMap;
  out << YAML::Key << "seed" << YAML::Value << c.seed;
  out << YAML::Key << "output_dir" << YAML::Value << c.output_dir;
  out << YAML::Key << "jobs" << YAML::Value << c.jobs;
  EmitMap(out, "drone",
          {{"mass", Scalar(Num(c.drone.mass))},
           {"gravity", Scalar(Num(c.drone.gravity))},
           {"inertia", FlowList(Eigen::VectorXd(c.drone.inertia))},
           {"arm_length", Scalar(Num(c.drone.arm_length))},
           {"km1", Scalar(Num(c.drone.km1))},
           {"km2", Scalar(Num(c.drone.km2))}});
  EmitMap(out, "nominal",
          {{"kf", Scalar(Num(c.nominal.kf))},
           {"tm", Scalar(Num(c.nominal.tm))},
           {"latency", Scalar(Num(c.nominal.latency))},
           {"dt", Scalar(Num(c.nominal.dt))},
           {"integrator", Scalar(c.nominal.integrator == Integrator::kRk4
                                     ? "rk4"
                                     : "semi_implicit_euler")}});
  EmitMap(out, "oracle",
          {{"kf", Scalar(Num(c.oracle(0)))},
           {"tm", Scalar(Num(c.oracle(1)))},
           {"latency", Scalar(Num(c.oracle(2)))}});
  EmitMap(out, "task",
          {{"diameter", Scalar(Num(c.task.diameter))},
           {"period", Scalar(Num(c.task.period))},
           {"height", Scalar(Num(c.task.height))},
           {"clockwise", Bool(c.task.clockwise)},
           {"episode_steps", Scalar(std::to_string(c.task.episode_steps))},
           {"termination_radius", Scalar(Num(c.task.termination_radius))},
           {"terminal_reward", Scalar(Num(c.task.terminal_reward))},
           {"max_tilt_deg", Scalar(Num(c.task.max_tilt_deg))},
           {"max_rate_deg", Scalar(Num(c.task.max_rate_deg))}});
  EmitMap(out, "noise",
          {{"sigma_pos", Scalar(Num(c.noise.sigma_pos))},
           {"sigma_vel", Scalar(Num(c.noise.sigma_vel))},
           {"sigma_att", Scalar(Num(c.noise.sigma_att))},
           {"uniform_pos", Scalar(Num(c.noise.uniform_pos))},
           {"uniform_vel", Scalar(Num(c.noise.uniform_vel))},
           {"uniform_att", Scalar(Num(c.noise.uniform_att))},
           {"gyro_sigma", Scalar(Num(c.noise.gyro_sigma))},
           {"gyro_bias_sigma", Scalar(Num(c.noise.gyro_bias_sigma))},
           {"ou_theta", Scalar(Num(c.noise.ou_theta))},
           {"ou_sigma", Scalar(Num(c.noise.ou_sigma))}});
  EmitMap(out, "collect",
          {{"duration", Scalar(Num(c.collect_duration))},
           {"flight_duration", Scalar(Num(c.flight_duration))}});
  const SimOptConfig& so = c.simopt.problem;
  std::vector<double> horizons(c.simopt.horizons.begin(), c.simopt.horizons.end());
  EmitMap(out, "simopt",
          {{"horizons", FlowList(horizons)},
           {"stride", Scalar(std::to_string(so.stride))},
           {"replay_warmup", Scalar(std::to_string(so.replay_warmup))},
           {"discount", Scalar(Num(so.discount))},
           {"weights", FlowList(Eigen::VectorXd(so.weights))},
           {"lower", FlowList(Eigen::VectorXd(so.lower))},
           {"upper", FlowList(Eigen::VectorXd(so.upper))},
           {"n_evals", Scalar(std::to_string(so.n_evals))},
           {"n_trials", Scalar(std::to_string(so.n_trials))},
           {"threads", Scalar(std::to_string(so.threads))},
           {"initial_design", Scalar(std::to_string(c.simopt.bo.initial_design))},
           {"candidates", Scalar(std::to_string(c.simopt.bo.candidates))},
           {"refine_starts", Scalar(std::to_string(c.simopt.bo.refine_starts))},
           {"gp_restarts", Scalar(std::to_string(c.simopt.bo.gp_restarts))},
           {"kappa", Scalar(Num(c.simopt.bo.acquisition.kappa))},
           {"xi", Scalar(Num(c.simopt.bo.acquisition.xi))},
           {"cache_dataset", Bool(c.simopt.cache_dataset)}});
  const TrainConfig& t = c.train;
  EmitMap(out, "train",
          {{"workers", Scalar(std::to_string(t.workers))},
           {"batch", Scalar(std::to_string(t.batch))},
           {"epochs", Scalar(std::to_string(t.epochs))},
           {"gamma", Scalar(Num(t.gamma))},
           {"lambda", Scalar(Num(t.lambda))},
           {"lr_actor", Scalar(Num(t.lr_actor))},
           {"lr_critic", Scalar(Num(t.lr_critic))},
           {"eps_start", Scalar(Num(t.eps_start))},
           {"eps_end", Scalar(Num(t.eps_end))},
           {"clip", Scalar(Num(t.ppo.clip))},
           {"passes", Scalar(std::to_string(t.ppo.passes))},
           {"minibatch", Scalar(std::to_string(t.ppo.minibatch))},
           {"max_grad_norm", Scalar(Num(t.ppo.max_grad_norm))},
           {"history", Scalar(std::to_string(c.history))},
           {"randomization", Scalar(Num(c.randomization.half_width))}});
  std::vector<std::string> levels;
  for (ControlLevel l : c.grid.levels) levels.emplace_back(ToString(l));
  EmitMap(out, "grid",
          {{"seeds", Scalar(std::to_string(c.grid.seeds))},
           {"tm", FlowList(c.grid.tm)},
           {"latency", FlowList(c.grid.latency)},
           {"levels", FlowList(levels)}});
  EmitMap(out, "evaluate",
          {{"trials", Scalar(std::to_string(c.evaluate.trials))},
           {"max_flight_time", Scalar(Num(c.evaluate.max_flight_time))}});
  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

std::uint64_t DeriveSeed(std::uint64_t master,
                         std::initializer_list<std::uint64_t> parts) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  std::uint64_t h = mix(master);
  for (std::uint64_t p : parts) h = mix(h ^ mix(p));
  return h;
}

std::string TrainCell::Name() const {
  return std::string(ToString(level)) + "_tm" + Fixed(tm, 3) + "_lat" +
         Fixed(latency, 3) + "_s" + std::to_string(seed);
}

std::vector<TrainCell> GridCells(const GridSpec& grid,
                                 std::optional<ControlLevel> only) {
  std::vector<TrainCell> cells;
  for (ControlLevel level : grid.levels) {
    if (only && *only != level) continue;
    for (double tm : grid.tm) {
      for (double latency : grid.latency) {
        for (int s = 0; s < grid.seeds; ++s) cells.push_back({level, tm, latency, s});
      }
    }
  }
  return cells;
}

BoxStats ComputeBoxStats(std::vector<double> values) {
  BoxStats b;
  b.n = static_cast<int>(values.size());
  if (values.empty()) return b;
  std::sort(values.begin(), values.end());
  auto q = [&](double p) {
    const double pos = p * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
  };
  b.min = values.front();
  b.q1 = q(0.25);
  b.median = q(0.5);
  b.q3 = q(0.75);
  b.max = values.back();
  return b;
}

// ---- stages ----------------------------------------------------------------

FlightLog RunCollect(const ExperimentConfig& cfg) {
  cfg.Validate();
  fs::create_directories(cfg.output_dir);
  Log("collect", "flying " + Fixed(cfg.collect_duration, 0) +
                     " s on the oracle simulator");
  FlightLog log = CollectFlights(cfg.drone, cfg.OracleParams(), cfg.Collect(),
                                 DeriveSeed(cfg.seed, {1}));
  const std::string path = (fs::path(cfg.output_dir) / "flight_log.csv").string();
  WriteFlightLog(log, path);
  Log("collect", std::to_string(log.size()) + " samples in " +
                     std::to_string(log.flights()) + " flights -> " + path);
  return log;
}

std::vector<SimOptRecord> RunSimOpt(const ExperimentConfig& cfg) {
  cfg.Validate();
  const fs::path out = fs::path(cfg.output_dir) / "simopt";
  fs::create_directories(out);
  const FlightLog log =
      ReadFlightLog((fs::path(cfg.output_dir) / "flight_log.csv").string());

  std::vector<SimOptRecord> records;
  for (int horizon : cfg.simopt.horizons) {
    SimOptConfig problem = cfg.simopt.problem;
    problem.horizon = horizon;
    problem.drone = cfg.drone;
    problem.dt = cfg.nominal.dt;
    const std::string cache =
        (out / ("dataset_T" + std::to_string(horizon) + ".csv")).string();
    const Dataset data =
        cfg.simopt.cache_dataset
            ? LoadOrBuildDataset(log, horizon, problem.stride,
                                 problem.replay_warmup, cache)
            : BuildDataset(log, horizon, problem.stride, problem.replay_warmup);
    BoConfig bo = cfg.simopt.bo;
    bo.n_evals = problem.n_evals;
    for (int trial = 0; trial < problem.n_trials; ++trial) {
      Log("simopt", "T=" + std::to_string(horizon) + " trial " +
                        std::to_string(trial) + ": " +
                        std::to_string(data.windows.size()) + " windows");
      std::mt19937_64 rng(DeriveSeed(cfg.seed, {2, static_cast<std::uint64_t>(horizon),
                                                static_cast<std::uint64_t>(trial)}));
      std::ostringstream history;
      const BoResult r = BoMinimize(
          [&](const Eigen::VectorXd& x) {
            return Objective(x, data, problem).value;
          },
          problem.lower, problem.upper, bo, rng);
      for (const BoRecord& rec : r.history) WriteHistoryLine(rec, history);
      WriteFileAtomic((out / ("history_T" + std::to_string(horizon) + "_trial" +
                              std::to_string(trial) + ".jsonl"))
                          .string(),
                      history.str());
      records.push_back({horizon, trial, r.best_x, r.best_objective});
      Log("simopt", "  best kF=" + Fixed(r.best_x(0), 4) + " Tm=" +
                        Fixed(r.best_x(1), 4) + " latency=" + Fixed(r.best_x(2), 4));
    }
  }

  std::string results = "horizon,trial,kf,tm,latency,objective\n";
  for (const SimOptRecord& r : records) {
    results += std::to_string(r.horizon) + ',' + std::to_string(r.trial) + ',' +
               Num(r.xi(0)) + ',' + Num(r.xi(1)) + ',' + Num(r.xi(2)) + ',' +
               Num(r.objective) + '\n';
  }
  WriteFileAtomic((out / "results.csv").string(), results);

  // Table: one row per parameter, one mean+-std column per horizon.
  std::string table = "parameter";
  for (int h : cfg.simopt.horizons) table += ",T=" + std::to_string(h);
  table += '\n';
  const char* names[3] = {"kF", "Tm", "Delta"};
  for (int p = 0; p < 3; ++p) {
    table += names[p];
    for (int h : cfg.simopt.horizons) {
      std::vector<double> v;
      for (const SimOptRecord& r : records) {
        if (r.horizon == h) v.push_back(r.xi(p));
      }
      double mean = 0.0;
      for (double x : v) mean += x;
      mean /= static_cast<double>(v.size());
      double var = 0.0;
      for (double x : v) var += (x - mean) * (x - mean);
      const double sd = v.size() > 1 ? std::sqrt(var / static_cast<double>(v.size() - 1)) : 0.0;
      table += ',' + Fixed(mean, 4) + " +- " + Fixed(sd, 4);
    }
    table += '\n';
  }
  WriteFileAtomic((out / "table.csv").string(), table);
  return records;
}

std::vector<TrainRecord> RunTrainGrid(const ExperimentConfig& cfg,
                                      std::optional<ControlLevel> only) {
  cfg.Validate();
  const fs::path root(cfg.output_dir);
  fs::create_directories(root / "policies");
  fs::create_directories(root / "curves");
  const std::vector<TrainCell> cells = GridCells(cfg.grid, only);
  std::vector<TrainRecord> records(cells.size());

  ParallelFor(cells.size(), cfg.jobs, [&](std::size_t i) {
    const TrainCell& cell = cells[i];
    TrainRecord& rec = records[i];
    rec.cell = cell;
    rec.checkpoint = "policies/" + cell.Name() + ".policy";
    try {
      Log("train", cell.Name() + ": start");
      const EnvConfig env = cfg.TrainEnv(cell.level, cell.tm, cell.latency);
      const TrainResult result =
          Train(env, cfg.train,
                DeriveSeed(cfg.seed, {3, static_cast<std::uint64_t>(cell.seed)}));
      std::ostringstream policy_bytes;
      SavePolicy(result.policy, policy_bytes);
      std::istringstream check(policy_bytes.str());
      const PolicyNet reloaded = LoadPolicy(check);
      const Eigen::VectorXd probe = Eigen::VectorXd::LinSpaced(
          env.ObservationSize(), -1.0, 1.0);
      if (reloaded.Mean(probe) != result.policy.Mean(probe)) {
        throw std::runtime_error("checkpoint round trip changed the policy output");
      }
      WriteFileAtomic((root / rec.checkpoint).string(), policy_bytes.str());
      std::ostringstream curve;
      WriteTrainingCurve(result.curve, curve);
      WriteFileAtomic((root / "curves" / (cell.Name() + ".csv")).string(),
                      curve.str());
      rec.status = "ok";
      rec.final_mean_return = result.curve.back().mean_return;
      rec.final_mean_length = result.curve.back().mean_episode_length;
      Log("train", cell.Name() + ": done, final mean episode length " +
                       Fixed(rec.final_mean_length, 1));
    } catch (const std::exception& e) {
      std::string reason = e.what();
      std::replace(reason.begin(), reason.end(), ',', ';');
      rec.status = "failed: " + reason;
      Log("train", cell.Name() + ": " + rec.status);
    }
  });

  std::string index =
      "level,tm,latency,seed,checkpoint,status,final_mean_return,final_mean_length\n";
  for (const TrainRecord& r : records) {
    index += std::string(ToString(r.cell.level)) + ',' + Num(r.cell.tm) + ',' +
             Num(r.cell.latency) + ',' + std::to_string(r.cell.seed) + ',' +
             r.checkpoint + ',' + r.status + ',' + Num(r.final_mean_return) + ',' +
             Num(r.final_mean_length) + '\n';
  }
  WriteFileAtomic((root / "policies" / "index.csv").string(), index);
  return records;
}

namespace {

std::string EvalCsvHeader() {
  return "level,tm,latency,seed,trial,flight_time,cause\n";
}

std::string EvalCsvRow(const EvalRecord& r) {
  return std::string(ToString(r.cell.level)) + ',' + Num(r.cell.tm) + ',' +
         Num(r.cell.latency) + ',' + std::to_string(r.cell.seed) + ',' +
         std::to_string(r.trial) + ',' + Num(r.flight_time) + ',' +
         std::string(ToString(r.cause)) + '\n';
}

Termination ParseTermination(const std::string& s) {
  for (Termination t : {Termination::kNone, Termination::kTrackingError,
                        Termination::kSafety, Termination::kDiverged,
                        Termination::kTimeLimit}) {
    if (ToString(t) == s) return t;
  }
  throw std::runtime_error("unknown termination cause " + s);
}

std::vector<EvalRecord> ReadEvalRecords(const std::string& path) {
  std::vector<EvalRecord> out;
  for (const auto& row : ReadCsv(path)) {
    EvalRecord r;
    r.cell.level = ParseControlLevel(row.at("level"));
    r.cell.tm = ToDouble(row.at("tm"));
    r.cell.latency = ToDouble(row.at("latency"));
    r.cell.seed = std::stoi(row.at("seed"));
    r.trial = std::stoi(row.at("trial"));
    r.flight_time = ToDouble(row.at("flight_time"));
    r.cause = ParseTermination(row.at("cause"));
    out.push_back(r);
  }
  return out;
}

using CellKey = std::tuple<std::string, double, double>;

std::map<CellKey, std::vector<double>> GroupFlights(
    const std::vector<EvalRecord>& records) {
  std::map<CellKey, std::vector<double>> groups;
  for (const EvalRecord& r : records) {
    groups[{std::string(ToString(r.cell.level)), r.cell.tm, r.cell.latency}]
        .push_back(r.flight_time);
  }
  return groups;
}

nlohmann::ordered_json BoxJson(const BoxStats& b) {
  nlohmann::ordered_json j;
  j["n"] = b.n;
  j["min"] = b.min;
  j["q1"] = b.q1;
  j["median"] = b.median;
  j["q3"] = b.q3;
  j["max"] = b.max;
  return j;
}

}  // namespace

std::vector<EvalRecord> RunEvaluate(const ExperimentConfig& cfg,
                                    std::optional<ControlLevel> only) {
  cfg.Validate();
  const fs::path root(cfg.output_dir);
  fs::create_directories(root / "eval");
  std::vector<TrainRecord> policies;
  for (const auto& row : ReadCsv((root / "policies" / "index.csv").string())) {
    if (row.at("status") != "ok") continue;
    TrainRecord r;
    r.cell.level = ParseControlLevel(row.at("level"));
    if (only && *only != r.cell.level) continue;
    r.cell.tm = ToDouble(row.at("tm"));
    r.cell.latency = ToDouble(row.at("latency"));
    r.cell.seed = std::stoi(row.at("seed"));
    r.checkpoint = row.at("checkpoint");
    policies.push_back(r);
  }
  if (policies.empty()) {
    throw std::runtime_error("evaluate: no trained policies under " +
                             (root / "policies").string());
  }

  std::vector<std::vector<EvalRecord>> per_policy(policies.size());
  ParallelFor(policies.size(), cfg.jobs, [&](std::size_t i) {
    const TrainRecord& p = policies[i];
    const PolicyNet policy = LoadPolicy((root / p.checkpoint).string());
    const EnvConfig env_cfg = cfg.EvalEnv(p.cell.level);
    if (policy.history != env_cfg.history) {
      throw std::runtime_error(p.checkpoint + ": history does not match config");
    }
    std::string csv = EvalCsvHeader();
    for (int trial = 0; trial < cfg.evaluate.trials; ++trial) {
      Env env(env_cfg, DeriveSeed(cfg.seed, {4, static_cast<std::uint64_t>(trial)}));
      const EpisodeOutcome o = RunEpisode(policy, env);
      EvalRecord r{p.cell, trial,
                   std::min(o.flight_time, cfg.evaluate.max_flight_time), o.cause};
      csv += EvalCsvRow(r);
      per_policy[i].push_back(r);
    }
    WriteFileAtomic((root / "eval" / (p.cell.Name() + ".csv")).string(), csv);
    Log("evaluate", p.cell.Name() + ": done");
  });

  std::vector<EvalRecord> records;
  std::string merged = EvalCsvHeader();
  for (const auto& v : per_policy) {
    for (const EvalRecord& r : v) {
      records.push_back(r);
      merged += EvalCsvRow(r);
    }
  }
  WriteFileAtomic((root / "evaluation.csv").string(), merged);

  nlohmann::ordered_json summary = nlohmann::ordered_json::array();
  for (const auto& [key, times] : GroupFlights(records)) {
    nlohmann::ordered_json cell;
    cell["level"] = std::get<0>(key);
    cell["tm"] = std::get<1>(key);
    cell["latency"] = std::get<2>(key);
    cell["flight_time"] = BoxJson(ComputeBoxStats(times));
    summary.push_back(cell);
  }
  WriteFileAtomic((root / "evaluation_summary.json").string(),
                  summary.dump(2) + "\n");
  return records;
}

std::string RunReport(const ExperimentConfig& cfg) {
  cfg.Validate();
  const fs::path root(cfg.output_dir);
  fs::create_directories(root);
  std::ostringstream md;
  nlohmann::ordered_json js;
  md << "# Experiment report\n\nMaster seed: " << cfg.seed << "\n\n";
  js["seed"] = cfg.seed;

  const auto simopt_rows = ReadCsv((root / "simopt" / "results.csv").string());
  if (!simopt_rows.empty()) {
    std::map<int, std::vector<std::array<double, 3>>> by_horizon;
    for (const auto& row : simopt_rows) {
      by_horizon[std::stoi(row.at("horizon"))].push_back(
          {ToDouble(row.at("kf")), ToDouble(row.at("tm")),
           ToDouble(row.at("latency"))});
    }
    md << "## Simulation optimization\n\nMean +- std over trials.\n\n| parameter |";
    for (const auto& [h, v] : by_horizon) md << " T=" << h << " |";
    md << "\n|---|";
    for (std::size_t i = 0; i < by_horizon.size(); ++i) md << "---|";
    md << '\n';
    const char* names[3] = {"kF", "Tm", "Delta"};
    nlohmann::ordered_json jso = nlohmann::ordered_json::array();
    for (const auto& [h, v] : by_horizon) {
      nlohmann::ordered_json e;
      e["horizon"] = h;
      e["trials"] = v.size();
      for (int p = 0; p < 3; ++p) {
        double mean = 0.0;
        for (const auto& x : v) mean += x[static_cast<std::size_t>(p)];
        mean /= static_cast<double>(v.size());
        double var = 0.0;
        for (const auto& x : v) {
          var += (x[static_cast<std::size_t>(p)] - mean) *
                 (x[static_cast<std::size_t>(p)] - mean);
        }
        const double sd =
            v.size() > 1 ? std::sqrt(var / static_cast<double>(v.size() - 1)) : 0.0;
        e[names[p]] = {{"mean", mean}, {"std", sd}};
      }
      jso.push_back(e);
    }
    for (int p = 0; p < 3; ++p) {
      md << "| " << names[p] << " |";
      for (const auto& e : jso) {
        md << ' ' << Fixed(e[names[p]]["mean"].get<double>(), 4) << " +- "
           << Fixed(e[names[p]]["std"].get<double>(), 4) << " |";
      }
      md << '\n';
    }
    md << '\n';
    js["simopt"] = jso;
  }

  const auto train_rows = ReadCsv((root / "policies" / "index.csv").string());
  if (!train_rows.empty()) {
    md << "## Training\n\n| cell | status | final mean return | final mean episode length |\n"
          "|---|---|---|---|\n";
    nlohmann::ordered_json jt = nlohmann::ordered_json::array();
    for (const auto& row : train_rows) {
      TrainCell cell{ParseControlLevel(row.at("level")), ToDouble(row.at("tm")),
                     ToDouble(row.at("latency")), std::stoi(row.at("seed"))};
      const double ret = ToDouble(row.at("final_mean_return"));
      const double len = ToDouble(row.at("final_mean_length"));
      md << "| " << cell.Name() << " | " << row.at("status") << " | "
         << Fixed(ret, 2) << " | " << Fixed(len, 1) << " |\n";
      jt.push_back({{"cell", cell.Name()},
                    {"status", row.at("status")},
                    {"final_mean_return", ret},
                    {"final_mean_length", len}});
    }
    md << '\n';
    js["training"] = jt;
  }

  const std::vector<EvalRecord> evals =
      ReadEvalRecords((root / "evaluation.csv").string());
  if (!evals.empty()) {
    md << "## Zero-shot transfer to the oracle simulator\n\nFlight time in s, "
          "capped at "
       << Fixed(cfg.evaluate.max_flight_time, 1)
       << " s.\n\n| level | Tm | latency | n | min | q1 | median | q3 | max |\n"
          "|---|---|---|---|---|---|---|---|---|\n";
    nlohmann::ordered_json je = nlohmann::ordered_json::array();
    for (const auto& [key, times] : GroupFlights(evals)) {
      const BoxStats b = ComputeBoxStats(times);
      md << "| " << std::get<0>(key) << " | " << Fixed(std::get<1>(key), 3) << " | "
         << Fixed(std::get<2>(key), 3) << " | " << b.n << " | " << Fixed(b.min, 2)
         << " | " << Fixed(b.q1, 2) << " | " << Fixed(b.median, 2) << " | "
         << Fixed(b.q3, 2) << " | " << Fixed(b.max, 2) << " |\n";
      je.push_back({{"level", std::get<0>(key)},
                    {"tm", std::get<1>(key)},
                    {"latency", std::get<2>(key)},
                    {"flight_time", BoxJson(b)}});
    }
    md << '\n';
    js["transfer"] = je;

    // Median flight time by training latency, pooled over Tm, seeds, trials.
    std::map<std::pair<std::string, double>, std::vector<double>> by_latency;
    for (const EvalRecord& r : evals) {
      by_latency[{std::string(ToString(r.cell.level)), r.cell.latency}].push_back(
          r.flight_time);
    }
    md << "### Median flight time by training latency\n\n| level | latency | n | "
          "median |\n|---|---|---|---|\n";
    nlohmann::ordered_json jl = nlohmann::ordered_json::array();
    for (const auto& [key, times] : by_latency) {
      const BoxStats b = ComputeBoxStats(times);
      md << "| " << key.first << " | " << Fixed(key.second, 3) << " | " << b.n
         << " | " << Fixed(b.median, 2) << " |\n";
      jl.push_back({{"level", key.first},
                    {"latency", key.second},
                    {"n", b.n},
                    {"median", b.median}});
    }
    md << '\n';
    js["latency_trend"] = jl;
  }

  const std::string text = md.str();
  WriteFileAtomic((root / "report.md").string(), text);
  WriteFileAtomic((root / "report.json").string(), js.dump(2) + "\n");
  return text;
}

}  // namespace quadsim
