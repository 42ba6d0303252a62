#include <algorithm>
#include <cmath>
#include <filesystem>
#include <sstream>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "oracles.hpp"
#include "quadsim/bayesopt.hpp"
#include "quadsim/collect.hpp"
#include "quadsim/simopt.hpp"

namespace quadsim {
namespace {

// Log of `n` samples produced by replaying a constant command from rest.
// Constant commands keep the motors at steady state, so every window of the
// log is reproduced exactly by the replay.
FlightLog ConstantCommandLog(int n, const Eigen::Vector4d& u,
                             const SimParams& sim = {}) {
  DroneState start;
  start.position = {0.5, -0.2, 1.0};
  const Vector13d x0 = start.ToVector();
  const std::vector<Eigen::Vector4d> commands(static_cast<std::size_t>(n - 1), u);
  const ReplayResult r = Replay(x0, commands, DroneParams{}, sim);
  FlightLog log;
  log.BeginFlight();
  log.Append(0.0, x0, u);
  for (int i = 0; i < n - 1; ++i) {
    log.Append((i + 1) * kLogPeriod, r.states[static_cast<std::size_t>(i)], u);
  }
  return log;
}

FlightLog IndexLog(int n, int flights = 1) {
  FlightLog log;
  for (int f = 0; f < flights; ++f) {
    log.BeginFlight();
    for (int i = 0; i < n; ++i) {
      log.Append(100.0 * f + i * kLogPeriod, Vector13d::Constant(i),
                 Eigen::Vector4d::Constant(0.5));
    }
  }
  return log;
}

TEST(Dataset, WindowArithmetic) {
  const Dataset d = BuildDataset(IndexLog(60), 50, 10);
  ASSERT_EQ(d.windows.size(), 1u);
  EXPECT_EQ(d.windows[0].start, 0u);
  EXPECT_EQ(d.windows[0].commands.size(), 50u);
  EXPECT_EQ(d.windows[0].states.front()(0), 1.0);
  EXPECT_EQ(d.windows[0].states.back()(0), 50.0);
  EXPECT_EQ(BuildDataset(IndexLog(37), 1, 1).windows.size(), 36u);
  EXPECT_THROW(BuildDataset(IndexLog(20), 50, 10), std::invalid_argument);
}

TEST(Dataset, WindowsStayInsideFlights) {
  FlightLog log = IndexLog(95, 3);
  const Dataset d = BuildDataset(log, 20, 7, 5);
  ASSERT_FALSE(d.windows.empty());
  for (const MiniTrajectory& w : d.windows) {
    bool inside = false;
    for (std::size_t k = 0; k < log.flights(); ++k) {
      const auto [begin, end] = log.FlightRange(k);
      if (w.start >= begin && w.start + 20 < end) {
        inside = true;
        EXPECT_EQ(w.warmup.size(), std::min<std::size_t>(5, w.start - begin));
      }
    }
    EXPECT_TRUE(inside) << w.start;
  }
}

TEST(Replay, SelfConsistent) {
  const Eigen::Vector4d u(0.60, 0.58, 0.60, 0.58);
  const FlightLog log = ConstantCommandLog(120, u);
  const Dataset d = BuildDataset(log, 30, 10);
  for (const MiniTrajectory& w : d.windows) {
    const ReplayResult r = Replay(w.x0, w.commands, DroneParams{}, SimParams{});
    ASSERT_FALSE(r.diverged);
    for (std::size_t t = 0; t < w.states.size(); ++t) {
      EXPECT_LT((r.states[t] - w.states[t]).cwiseAbs().maxCoeff(), 1e-9);
    }
  }
}

TEST(Replay, ThrustCoefficientErrorGrows) {
  const SimParams nominal;
  DroneState start;
  start.position.z() = 1.0;
  const std::vector<Eigen::Vector4d> hover(
      50, Eigen::Vector4d::Constant(1.0 / nominal.kf));
  SimParams strong = nominal;
  strong.kf *= 1.1;
  const ReplayResult a = Replay(start.ToVector(), hover, DroneParams{}, nominal);
  const ReplayResult b = Replay(start.ToVector(), hover, DroneParams{}, strong);
  double prev = 0.0;
  for (std::size_t t = 0; t < hover.size(); ++t) {
    const double err = b.states[t](2) - a.states[t](2);
    EXPECT_GT(err, prev) << t;
    prev = err;
  }
}

TEST(Objective, HandExample) {
  // Four components of 0.025: L1 = 0.1, L2 = 0.05.
  Vector13d err = Vector13d::Zero();
  err.head<4>().setConstant(0.025);
  Vector13d real = Vector13d::Zero();
  real(6) = 1.0;
  const std::vector<Vector13d> r{real, real}, s{real + err, real + err};
  const double f = DiscountedError(s, r, Vector13d::Ones(), 0.95);
  EXPECT_NEAR(f, 0.2925, 1e-12);
  EXPECT_NEAR(DiscountedError(s, r, 2.0 * Vector13d::Ones(), 0.95), 2.0 * f, 1e-15);
  EXPECT_EQ(DiscountedError(r, r, Vector13d::Ones(), 0.95), 0.0);
}

TEST(Objective, QuaternionSignIsIgnored) {
  DroneState a;
  a.attitude = Eigen::Quaterniond(Eigen::AngleAxisd(0.3, Eigen::Vector3d::UnitX()));
  DroneState b = a;
  b.attitude.coeffs() *= -1.0;
  const std::vector<Vector13d> s{b.ToVector()}, r{a.ToVector()};
  EXPECT_NEAR(DiscountedError(s, r, Vector13d::Ones(), 0.95), 0.0, 1e-15);
}

TEST(Objective, SelfReplayIsZero) {
  const FlightLog log = ConstantCommandLog(200, Eigen::Vector4d(0.6, 0.59, 0.6, 0.59));
  SimOptConfig cfg;
  cfg.horizon = 50;
  const Dataset d = BuildDataset(log, cfg.horizon, cfg.stride);
  const SimParams truth;
  const ObjectiveValue v = Objective({truth.kf, truth.tm, truth.latency}, d, cfg);
  EXPECT_EQ(v.diverged_windows, 0);
  EXPECT_LT(v.value, 1e-9);
  const ObjectiveValue off = Objective({truth.kf * 1.05, truth.tm, truth.latency}, d, cfg);
  EXPECT_GT(off.value, 1e-3);
}

TEST(Objective, IndependentOfThreadCount) {
  const FlightLog log = ConstantCommandLog(300, Eigen::Vector4d(0.6, 0.59, 0.6, 0.59));
  SimOptConfig cfg;
  const Dataset d = BuildDataset(log, 20, 10);
  const SimCandidate xi(1.8, 0.09, 0.01);
  const double one = Objective(xi, d, cfg).value;
  cfg.threads = 3;
  EXPECT_EQ(Objective(xi, d, cfg).value, one);
}

TEST(Objective, TruthIsGridMinimumOnNoiseFreeData) {
  CollectConfig collect;
  collect.duration = 20.0;
  collect.flight_duration = 10.0;
  collect.noise = NoiseConfig::Zero();
  const SimCandidate truth(1.722, 0.104, 0.018);
  const FlightLog log =
      CollectFlights(DroneParams{}, ApplyCandidate(truth), collect, 3);
  SimOptConfig cfg;
  const Dataset d = BuildDataset(log, 30, 25, cfg.replay_warmup);
  const double at_truth = Objective(truth, d, cfg).value;
  const std::array<double, 5> scale{0.6, 0.8, 1.0, 1.2, 1.4};
  const std::array<double, 5> latency{0.0, 0.009, 0.018, 0.027, 0.036};
  for (double a : scale) {
    for (double b : scale) {
      for (double c : latency) {
        if (a == 1.0 && b == 1.0 && c == 0.018) continue;
        const SimCandidate xi(truth(0) * a, truth(1) * b, c);
        EXPECT_LT(at_truth, Objective(xi, d, cfg).value) << xi.transpose();
      }
    }
  }
}

TEST(FlightLogIo, CsvRoundTrip) {
  const FlightLog log = ConstantCommandLog(30, Eigen::Vector4d(0.6, 0.5, 0.4, 0.3));
  std::stringstream buf;
  WriteFlightLog(log, buf);
  const FlightLog back = ReadFlightLog(buf);
  ASSERT_EQ(back.size(), log.size());
  EXPECT_EQ(back.flight_starts, log.flight_starts);
  for (std::size_t i = 0; i < log.size(); ++i) {
    EXPECT_EQ(back.samples[i].state, log.samples[i].state);
    EXPECT_EQ(back.samples[i].command, log.samples[i].command);
  }
  EXPECT_EQ(HashFlightLog(back), HashFlightLog(log));
}

TEST(FlightLogIo, RejectsBadSpacing) {
  FlightLog log;
  log.BeginFlight();
  log.Append(0.0, Vector13d::Zero(), Eigen::Vector4d::Zero());
  log.Append(0.02, Vector13d::Zero(), Eigen::Vector4d::Zero());
  EXPECT_THROW(log.Validate(), std::invalid_argument);
}

TEST(DatasetCache, RoundTripAndHashMismatch) {
  const auto dir = std::filesystem::temp_directory_path() / "quadsim_cache_test";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "ds.csv").string();
  const FlightLog log = ConstantCommandLog(150, Eigen::Vector4d::Constant(0.6));
  const Dataset d = BuildDataset(log, 20, 10, 5);
  SaveDataset(d, path);
  const Dataset back = LoadDataset(log, path);
  ASSERT_EQ(back.windows.size(), d.windows.size());
  for (std::size_t i = 0; i < d.windows.size(); ++i) {
    EXPECT_EQ(back.windows[i].start, d.windows[i].start);
    EXPECT_EQ(back.windows[i].states, d.windows[i].states);
    EXPECT_EQ(back.windows[i].warmup.size(), d.windows[i].warmup.size());
  }
  const FlightLog other = ConstantCommandLog(150, Eigen::Vector4d::Constant(0.61));
  EXPECT_THROW(LoadDataset(other, path), std::runtime_error);
  const Dataset rebuilt = LoadOrBuildDataset(other, 20, 10, 5, path);
  EXPECT_EQ(rebuilt.source_hash, HashFlightLog(other));
  std::filesystem::remove_all(dir);
}

TEST(GaussianProcess, InterpolatesNoiselessData) {
  std::mt19937_64 rng(20);
  const Eigen::MatrixXd X = LatinHypercube(12, 2, rng);
  Eigen::VectorXd y(12);
  for (int i = 0; i < 12; ++i) y(i) = std::sin(3 * X(i, 0)) + X(i, 1) * X(i, 1);
  GaussianProcess gp;
  gp.Fit(X, y, rng);
  for (int i = 0; i < 12; ++i) {
    const GpPrediction p = gp.Predict(Eigen::VectorXd(X.row(i).transpose()));
    EXPECT_NEAR(p.mean, y(i), 1e-6);
    EXPECT_LT(p.std, 1e-3);
  }
}

TEST(GaussianProcess, RevertsToPriorFarFromData) {
  std::mt19937_64 rng(21);
  const Eigen::MatrixXd X = LatinHypercube(10, 2, rng);
  const Eigen::VectorXd y = X.col(0).array().square() + 0.5 * X.col(1).array();
  GpHyper hyper;
  hyper.length_scales = Eigen::Vector2d(0.3, 0.3);
  hyper.signal_var = 1.3;
  GaussianProcess gp;
  gp.FitFixed(X, y, hyper);
  const double y_std = std::sqrt((y.array() - y.mean()).square().mean());
  const GpPrediction far = gp.Predict(Eigen::VectorXd(Eigen::Vector2d(20.0, -20.0)));
  EXPECT_NEAR(far.std, y_std * std::sqrt(hyper.signal_var),
              0.05 * y_std * std::sqrt(hyper.signal_var));
  EXPECT_NEAR(far.mean, y.mean(), 1e-6);
}

TEST(GaussianProcess, RecoversLengthScale) {
  const double truth = 0.25;
  GpHyper hyper;
  hyper.length_scales = Eigen::VectorXd::Constant(1, truth);
  hyper.noise_var = 1e-6;
  std::vector<double> recovered;
  std::mt19937_64 rng(22);
  std::normal_distribution<double> N;
  for (int rep = 0; rep < 50; ++rep) {
    const int n = 25;
    const Eigen::MatrixXd X = LatinHypercube(n, 1, rng);
    Eigen::MatrixXd K(n, n);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        K(i, j) = GaussianProcess::Kernel(X.row(i).transpose(), X.row(j).transpose(), hyper);
      }
      K(i, i) += hyper.noise_var;
    }
    const Eigen::MatrixXd L = K.llt().matrixL();
    const Eigen::VectorXd y = L * Eigen::VectorXd::NullaryExpr(n, [&] { return N(rng); });
    GaussianProcess gp;
    gp.Fit(X, y, rng);
    recovered.push_back(gp.hyper().length_scales(0));
  }
  std::nth_element(recovered.begin(), recovered.begin() + 25, recovered.end());
  const double median = recovered[25];
  EXPECT_GT(median, truth / 2);
  EXPECT_LT(median, truth * 2);
}

TEST(GaussianProcess, MarginalLikelihoodGradient) {
  std::mt19937_64 rng(23);
  const Eigen::MatrixXd X = LatinHypercube(15, 3, rng);
  const Eigen::VectorXd y = (X.col(0).array() * 4).sin() + X.col(2).array();
  GpHyper hyper;
  hyper.length_scales = Eigen::Vector3d(0.4, 0.7, 0.2);
  hyper.signal_var = 0.8;
  hyper.noise_var = 1e-3;
  GaussianProcess gp;
  gp.FitFixed(X, y, hyper);
  Eigen::VectorXd grad;
  gp.LogMarginalLikelihood(hyper, &grad);
  Eigen::VectorXd theta(5);
  theta << hyper.length_scales.array().log(), std::log(hyper.signal_var),
      std::log(hyper.noise_var);
  auto lml = [&](const Eigen::VectorXd& t) {
    GpHyper h;
    h.length_scales = t.head(3).array().exp();
    h.signal_var = std::exp(t(3));
    h.noise_var = std::exp(t(4));
    return gp.LogMarginalLikelihood(h);
  };
  for (int i = 0; i < 5; ++i) {
    EXPECT_LT(oracle::RelativeError(grad(i), oracle::CentralDifference(lml, theta, i)), 1e-5);
  }
}

TEST(Acquisition, ExpectedImprovementMatchesQuadrature) {
  for (double mean : {-1.0, 0.0, 0.4, 2.0}) {
    for (double std : {0.05, 0.3, 1.0}) {
      const double ei = ExpectedImprovement({mean, std}, 0.5, 0.01);
      EXPECT_GE(ei, 0.0);
      EXPECT_NEAR(ei, oracle::QuadratureExpectedImprovement(mean, std, 0.5, 0.01), 1e-9);
    }
  }
}

TEST(Acquisition, MonotoneInStd) {
  double prev = 0.0;
  for (double s = 0.1; s < 3.0; s += 0.05) {
    const double ei = ExpectedImprovement({1.0, s}, 0.5, 0.0);
    EXPECT_GT(ei, prev);
    prev = ei;
  }
}

TEST(Acquisition, DegenerateStd) {
  EXPECT_EQ(ExpectedImprovement({0.2, 0.0}, 0.5, 0.1), 0.5 - 0.2 - 0.1);
  EXPECT_EQ(ExpectedImprovement({0.7, 0.0}, 0.5, 0.1), 0.0);
  EXPECT_EQ(ProbabilityOfImprovement({0.2, 0.0}, 0.5, 0.1), 1.0);
  EXPECT_EQ(ProbabilityOfImprovement({0.7, 0.0}, 0.5, 0.1), 0.0);
  EXPECT_EQ(LowerConfidenceBound({0.7, 0.0}, 2.0), 0.7);
  EXPECT_NEAR(LowerConfidenceBound({0.7, 0.1}, 2.0), 0.5, 1e-15);
}

TEST(LatinHypercube, OnePointPerStratum) {
  std::mt19937_64 rng(24);
  const Eigen::MatrixXd X = LatinHypercube(20, 3, rng);
  for (int d = 0; d < 3; ++d) {
    std::vector<int> seen(20, 0);
    for (int i = 0; i < 20; ++i) {
      ASSERT_GE(X(i, d), 0.0);
      ASSERT_LT(X(i, d), 1.0);
      ++seen[static_cast<std::size_t>(X(i, d) * 20)];
    }
    EXPECT_EQ(std::count(seen.begin(), seen.end(), 1), 20);
  }
}

TEST(BayesOpt, QuadraticAndHistory) {
  std::mt19937_64 rng(25);
  BoConfig cfg;
  cfg.n_evals = 50;
  std::ostringstream jsonl;
  const BoResult r = BoMinimize(
      [](const Eigen::VectorXd& x) { return (x(0) - 0.3) * (x(0) - 0.3); },
      Eigen::VectorXd::Zero(1), Eigen::VectorXd::Ones(1), cfg, rng,
      [&](const BoRecord& rec) { WriteHistoryLine(rec, jsonl); });
  EXPECT_NEAR(r.best_x(0), 0.3, 0.02);
  ASSERT_EQ(r.history.size(), 50u);
  for (std::size_t i = 1; i < r.history.size(); ++i) {
    EXPECT_LE(r.history[i].incumbent_objective, r.history[i - 1].incumbent_objective);
    EXPECT_EQ(r.history[i].kind.has_value(), i >= 20u);
  }
  std::istringstream lines(jsonl.str());
  std::string line;
  int count = 0;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    for (const char* key : {"iter", "xi", "objective", "acquisition_kind", "incumbent"}) {
      EXPECT_TRUE(j.contains(key)) << key;
    }
    ++count;
  }
  EXPECT_EQ(count, 50);
}

TEST(BayesOpt, NonFiniteValuesArePenalized) {
  std::mt19937_64 rng(26);
  BoConfig cfg;
  cfg.n_evals = 30;
  cfg.initial_design = 10;
  const BoResult r = BoMinimize(
      [](const Eigen::VectorXd& x) {
        return x(0) > 0.8 ? std::numeric_limits<double>::infinity() : std::abs(x(0) - 0.5);
      },
      Eigen::VectorXd::Zero(1), Eigen::VectorXd::Ones(1), cfg, rng);
  EXPECT_TRUE(std::isfinite(r.best_objective));
  EXPECT_LT(r.best_x(0), 0.8);
}

}  // namespace
}  // namespace quadsim
