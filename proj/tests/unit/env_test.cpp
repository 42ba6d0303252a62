#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include <gtest/gtest.h>

#include "quadsim/env.hpp"

namespace quadsim {
namespace {

const ControlLevel kLevels[] = {ControlLevel::kPwm, ControlLevel::kAttitudeRate,
                                ControlLevel::kAttitude};

// Noise-free, unrandomized, unperturbed task.
EnvConfig QuietConfig(ControlLevel level = ControlLevel::kPwm) {
  EnvConfig c;
  c.level = level;
  c.noise = NoiseConfig::Zero();
  c.randomization.half_width = 0.0;
  c.init_tilt_deg = 0.0;
  c.init_speed = 0.0;
  return c;
}

// Kolmogorov distribution tail, P(sqrt(n) D > lambda).
double KolmogorovPValue(double lambda) {
  double p = 0.0;
  for (int k = 1; k <= 100; ++k) {
    p += 2.0 * ((k % 2) ? 1.0 : -1.0) * std::exp(-2.0 * k * k * lambda * lambda);
  }
  return std::clamp(p, 0.0, 1.0);
}

TEST(CircleSetpoint, Examples) {
  const TaskConfig task;
  EXPECT_TRUE(CircleSetpoint(0.0, task, 0.0).isApprox(Eigen::Vector3d(0.25, 0, 1)));
  EXPECT_TRUE(CircleSetpoint(3.0, task, 0.7).isApprox(CircleSetpoint(0.0, task, 0.7), 1e-12));
  const Eigen::Vector3d quarter = CircleSetpoint(0.75, task, 0.0);
  EXPECT_NEAR(quarter.x(), 0.0, 1e-12);
  EXPECT_NEAR(quarter.y(), -0.25, 1e-12);
}

TEST(Reward, Examples) {
  const TaskConfig task;
  DroneState s;
  const Eigen::Vector4d zero = Eigen::Vector4d::Zero();
  EXPECT_EQ(Reward(s, zero, zero, s.position, false, task), 0.0);
  const Eigen::Vector3d far = s.position + Eigen::Vector3d(0.3, 0, 0);
  EXPECT_NEAR(Reward(s, zero, zero, far, true, task), -100.3, 1e-12);
  EXPECT_NEAR(Reward(s, Eigen::Vector4d::Ones(), zero, s.position, false, task), -0.0022,
              1e-15);
}

TEST(Reward, NonPositiveAndZeroOnlyAtPerfection) {
  const TaskConfig task;
  Rng rng(1);
  std::normal_distribution<double> N(0.0, 0.3);
  for (int i = 0; i < 1000; ++i) {
    DroneState s;
    s.position = {N(rng), N(rng), N(rng)};
    s.body_rates = {N(rng), N(rng), N(rng)};
    const Eigen::Vector4d a(N(rng), N(rng), N(rng), N(rng));
    const Eigen::Vector4d b(N(rng), N(rng), N(rng), N(rng));
    EXPECT_LT(Reward(s, a, b, Eigen::Vector3d::Zero(), i % 2, task), 0.0);
  }
}

TEST(HistoryStack, RepeatsFirstThenShifts) {
  HistoryStack h(3);
  const Eigen::VectorXd a = Eigen::VectorXd::Constant(kObservationDim, 1.0);
  const Eigen::VectorXd b = Eigen::VectorXd::Constant(kObservationDim, 2.0);
  const Eigen::VectorXd c = Eigen::VectorXd::Constant(kObservationDim, 3.0);
  const Eigen::VectorXd d = Eigen::VectorXd::Constant(kObservationDim, 4.0);
  h.Reset(a);
  Eigen::VectorXd f = h.Flattened();
  ASSERT_EQ(f.size(), 3 * kObservationDim);
  EXPECT_TRUE((f.array() == 1.0).all());
  h.Push(b);
  h.Push(c);
  h.Push(d);
  f = h.Flattened();
  EXPECT_EQ(f(0), 2.0);  // oldest first
  EXPECT_EQ(f(kObservationDim), 3.0);
  EXPECT_EQ(f(2 * kObservationDim), 4.0);
  EXPECT_THROW(HistoryStack(0), std::invalid_argument);
}

TEST(MakeObservation, Layout) {
  DroneState s;
  s.position = {1, 2, 3};
  const Eigen::VectorXd o = MakeObservation(s, {0.5, 0.5, 0.5}, {0.1, 0.2, 0.3, 0.4});
  ASSERT_EQ(o.size(), 20);
  EXPECT_EQ(o.segment<3>(13), Eigen::Vector3d(0.5, 1.5, 2.5));
  EXPECT_EQ(o(19), 0.4);
}

TEST(SampleParams, ZeroWidthReturnsNominal) {
  Rng rng(2);
  const DroneParams d;
  const SimParams s;
  const EpisodeParams p = SampleParams(d, s, {0.0}, rng);
  EXPECT_EQ(p.sim.kf, s.kf);
  EXPECT_EQ(p.sim.dt, s.dt);
  EXPECT_EQ(p.drone.mass, d.mass);
  EXPECT_EQ(p.drone.inertia, d.inertia);
}

TEST(SampleParams, KfUniformWithinTenPercent) {
  Rng rng(3);
  const SimParams s;
  const int n = 10000;
  std::vector<double> u;
  for (int i = 0; i < n; ++i) {
    const double kf = SampleParams({}, s, {0.10}, rng).sim.kf;
    EXPECT_GE(kf, 0.9 * s.kf);
    EXPECT_LE(kf, 1.1 * s.kf);
    u.push_back((kf / s.kf - 0.9) / 0.2);
  }
  std::sort(u.begin(), u.end());
  double dmax = 0.0;
  for (int i = 0; i < n; ++i) {
    dmax = std::max({dmax, (i + 1.0) / n - u[i], u[i] - static_cast<double>(i) / n});
  }
  EXPECT_GT(KolmogorovPValue(std::sqrt(static_cast<double>(n)) * dmax), 0.01);
}

TEST(Env, SubstepsPerLevel) {
  const int expected[] = {2, 4, 8};
  for (int i = 0; i < 3; ++i) {
    Env env(QuietConfig(kLevels[i]), 1);
    env.Reset();
    EXPECT_EQ(env.substeps(), expected[i]);
  }
}

TEST(Env, InitialErrorSmall) {
  EnvConfig cfg;
  Env env(cfg, 4);
  for (int i = 0; i < 1000; ++i) {
    env.Reset();
    const Eigen::Vector3d t = CircleSetpoint(0.0, cfg.task, env.phase());
    EXPECT_LT((env.state().position - t).norm(), 0.05);
  }
}

TEST(Env, ObservationDimensionAlwaysTwentyH) {
  for (int h : {1, 2, 4}) {
    for (ControlLevel level : kLevels) {
      EnvConfig cfg;
      cfg.level = level;
      cfg.history = h;
      Env env(cfg, 5);
      ASSERT_EQ(env.Reset().size(), 20 * h);
      for (int k = 0; k < 30; ++k) {
        const auto r = env.Step(Eigen::Vector4d(0.17, 0.0, 0.0, 0.0));
        const EnvStep& s = std::get<EnvStep>(r);
        ASSERT_EQ(s.observation.size(), 20 * h);
        ASSERT_TRUE(s.observation.allFinite());
        if (s.done) env.Reset();
      }
    }
  }
}

TEST(Env, ZeroPolicyFallsOutOfTheTube) {
  Env env(QuietConfig(), 6);
  env.Reset();
  int steps = 0, terminal_rewards = 0;
  EnvStep last;
  do {
    last = std::get<EnvStep>(env.Step(Eigen::Vector4d::Zero()));
    ++steps;
    if (last.reward <= -100.0) ++terminal_rewards;
  } while (!last.done);
  EXPECT_EQ(steps, 47);
  EXPECT_EQ(last.info.cause, Termination::kTrackingError);
  EXPECT_TRUE(last.terminated);
  EXPECT_EQ(terminal_rewards, 1);
  EXPECT_LT(last.info.state.position.z(), 1.0);
}

TEST(Env, DoneIsAbsorbing) {
  Env env(QuietConfig(), 7);
  EXPECT_EQ(std::get<EnvError>(env.Step(Eigen::Vector4d::Zero())), EnvError::kNotReset);
  env.Reset();
  while (!std::get<EnvStep>(env.Step(Eigen::Vector4d::Zero())).done) {
  }
  EXPECT_EQ(std::get<EnvError>(env.Step(Eigen::Vector4d::Zero())), EnvError::kEpisodeDone);
}

TEST(Env, PhysicsStepsPerEpisode) {
  for (ControlLevel level : kLevels) {
    EnvConfig cfg = QuietConfig(level);
    cfg.task.termination_radius = 1e9;
    cfg.task.max_tilt_deg = 1e9;
    cfg.task.max_rate_deg = 1e9;
    Env env(cfg, 8);
    env.Reset();
    const double hover = 2.0 / cfg.sim.kf - 1.0;  // PWM action giving u = 1/kF
    const Eigen::Vector4d a = level == ControlLevel::kPwm
                                  ? Eigen::Vector4d::Constant(hover)
                                  : Eigen::Vector4d(0.0, 0, 0, 0);
    int steps = 0;
    EnvStep s;
    do {
      s = std::get<EnvStep>(env.Step(a));
      ++steps;
    } while (!s.done);
    EXPECT_EQ(steps, 500);
    EXPECT_EQ(s.info.cause, Termination::kTimeLimit);
    EXPECT_FALSE(s.terminated);
    EXPECT_EQ(steps * env.substeps(), 500 * 200 / PolicyRateHz(level));
  }
}

TEST(Env, SafetyBackupTerminates) {
  EnvConfig cfg = QuietConfig(ControlLevel::kPwm);
  cfg.task.termination_radius = 1e9;
  Env env(cfg, 9);
  env.Reset();
  EnvStep s;
  do {
    s = std::get<EnvStep>(env.Step(Eigen::Vector4d(-1, -1, 1, 1)));  // hard roll
  } while (!s.done);
  EXPECT_EQ(s.info.cause, Termination::kSafety);
  EXPECT_TRUE(s.terminated);
}

TEST(Env, DeterministicForSeed) {
  EnvConfig cfg;
  Env a(cfg, 10), b(cfg, 10);
  EXPECT_EQ(a.Reset(), b.Reset());
  for (int k = 0; k < 40; ++k) {
    const Eigen::Vector4d act(0.1 * std::sin(k), 0.05, -0.05, 0.0);
    const auto sa = std::get<EnvStep>(a.Step(act));
    const auto sb = std::get<EnvStep>(b.Step(act));
    ASSERT_EQ(sa.observation, sb.observation);
    ASSERT_EQ(sa.reward, sb.reward);
    if (sa.done) break;
  }
}

TEST(EpisodeCsvWriter, OneRowPerStep) {
  std::ostringstream out;
  EpisodeCsvWriter w(out);
  Env env(QuietConfig(), 11);
  env.Reset();
  for (int k = 0; k < 3; ++k) w.Write(std::get<EnvStep>(env.Step(Eigen::Vector4d::Zero())));
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line,
            "t,r_x,r_y,r_z,v_x,v_y,v_z,q_w,q_x,q_y,q_z,omega_x,omega_y,omega_z,"
            "e_x,e_y,e_z,a_1,a_2,a_3,a_4,u_1,u_2,u_3,u_4,reward,done");
  int rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    EXPECT_EQ(std::count(line.begin(), line.end(), ','), 26);
  }
  EXPECT_EQ(rows, 3);
}

}  // namespace
}  // namespace quadsim
