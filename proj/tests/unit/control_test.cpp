#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "quadsim/control.hpp"
#include "quadsim/sensing.hpp"

namespace quadsim {
namespace {

constexpr double kDt = 0.005;

PidGains Gains(double kp, double ki, double kd, double i_limit = 1e9,
               double out_limit = 1e9) {
  PidGains g;
  g.kp.setConstant(kp);
  g.ki.setConstant(ki);
  g.kd.setConstant(kd);
  g.i_limit = i_limit;
  g.out_limit = out_limit;
  return g;
}

DroneState HoverAt(const Eigen::Vector3d& position, double kf) {
  DroneState s;
  s.position = position;
  s.rotor_speeds.setConstant(HoverRotorSpeed(kf));
  return s;
}

TEST(Pid, ZeroErrorZeroOutput) {
  const PidOutput o = PidStep(Eigen::Vector3d::Zero(), {}, Gains(2, 3, 4), kDt);
  EXPECT_TRUE(o.out.isZero());
}

TEST(Pid, PureProportional) {
  const Eigen::Vector3d e(0.1, -0.2, 0.3);
  PidState st;
  for (int i = 0; i < 5; ++i) {
    const PidOutput o = PidStep(e, st, Gains(2.5, 0, 0), kDt);
    EXPECT_TRUE(o.out.isApprox(2.5 * e));
    st = o.state;
  }
}

TEST(Pid, IntegralAccumulatesUpToLimit) {
  const double e = 0.4, ki = 3.0, limit = 0.01;
  PidState st;
  for (int n = 1; n <= 20; ++n) {
    const PidOutput o = PidStep(Eigen::Vector3d::Constant(e), st, Gains(0, ki, 0, limit), kDt);
    EXPECT_NEAR(o.out.x(), ki * std::min(n * kDt * e, limit), 1e-15) << n;
    st = o.state;
  }
}

TEST(Pid, LinearWhenUnclamped) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> N;
  const PidGains g = Gains(1.3, 0.7, 0.05);
  PidState a, b;
  const double alpha = -2.5;
  for (int i = 0; i < 50; ++i) {
    const Eigen::Vector3d e(N(rng), N(rng), N(rng));
    const PidOutput oa = PidStep(e, a, g, kDt);
    const PidOutput ob = PidStep(alpha * e, b, g, kDt);
    EXPECT_TRUE(ob.out.isApprox(alpha * oa.out, 1e-12));
    a = oa.state;
    b = ob.state;
  }
}

TEST(Pid, AntiWindupUnderSaturation) {
  const PidGains g = Gains(10, 5, 0, 0.2, 1.0);
  PidState st;
  for (int i = 0; i < 10000; ++i) {
    const PidOutput o = PidStep(Eigen::Vector3d::Constant(50.0), st, g, kDt);
    EXPECT_LE(o.state.integral.cwiseAbs().maxCoeff(), g.i_limit);
    EXPECT_LE(o.out.cwiseAbs().maxCoeff(), g.out_limit);
    st = o.state;
  }
}

TEST(Mixer, HoverGivesInverseKf) {
  const MixerModel model;
  const MixerOutput m = Mixer(model.params.gravity, Eigen::Vector3d::Zero(), model);
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(m.u(i), 1.0 / model.kf, 1e-12);
  EXPECT_FALSE(m.saturated);
}

TEST(Mixer, RollTorqueSignPattern) {
  const MixerModel model;
  const Eigen::Vector4d hover = Mixer(model.params.gravity, Eigen::Vector3d::Zero(), model).u;
  const Eigen::Vector4d d =
      Mixer(model.params.gravity, {1e-5, 0, 0}, model).u - hover;
  EXPECT_LT(d(0), 0.0);
  EXPECT_LT(d(1), 0.0);
  EXPECT_GT(d(2), 0.0);
  EXPECT_GT(d(3), 0.0);
  EXPECT_NEAR(d(0), d(1), 1e-12);
  EXPECT_NEAR(d(2), d(3), 1e-12);
}

TEST(Mixer, TorqueRoundTrip) {
  const MixerModel model;
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  int checked = 0;
  for (int i = 0; i < 10000; ++i) {
    const double c = model.params.gravity * (1.0 + 0.2 * U(rng));
    const Eigen::Vector3d tau(2e-4 * U(rng), 2e-4 * U(rng), 2e-5 * U(rng));
    const MixerOutput m = Mixer(c, tau, model);
    EXPECT_GE(m.u.minCoeff(), 0.0);
    EXPECT_LE(m.u.maxCoeff(), 1.0);
    if (m.saturated) continue;
    const Eigen::Vector4d f = RotorForces(m.u.cwiseSqrt(), model.params, model.kf);
    const Eigen::Vector3d back = BodyTorque(f, RotorMoments(f, model.params), model.params);
    EXPECT_LT((back - tau).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_NEAR(f.sum(), model.params.mass * c, 1e-12);
    ++checked;
  }
  EXPECT_GT(checked, 9000);
}

TEST(Mixer, OutputsAlwaysInUnitBox) {
  const MixerModel model;
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  for (int i = 0; i < 2000; ++i) {
    const MixerOutput m =
        Mixer(30.0 * (U(rng) + 1.0), Eigen::Vector3d(U(rng), U(rng), U(rng)) * 1e-2, model);
    EXPECT_GE(m.u.minCoeff(), 0.0);
    EXPECT_LE(m.u.maxCoeff(), 1.0);
  }
}

TEST(AttitudeRateControl, MatchedRatesGiveHoverMixing) {
  const MixerModel model;
  const ControlGains g = ControlGains::Defaults();
  PidState st;
  const Eigen::Vector3d w(0.3, -0.1, 0.2);
  const MixerOutput m = AttitudeRateControl(model.params.gravity, w, w, st, g.rate, model, kDt);
  const MixerOutput hover = Mixer(model.params.gravity, Eigen::Vector3d::Zero(), model);
  EXPECT_TRUE(m.u.isApprox(hover.u, 1e-12));
}

TEST(AttitudeRateControl, PositiveRollErrorRaisesMotors34) {
  const MixerModel model;
  const ControlGains g = ControlGains::Defaults();
  PidState st;
  const MixerOutput m = AttitudeRateControl(model.params.gravity, {1.0, 0, 0},
                                            Eigen::Vector3d::Zero(), st, g.rate, model, kDt);
  EXPECT_GT(m.u(2) + m.u(3), m.u(0) + m.u(1));
}

TEST(AttitudeRateControl, ClosedLoopRateStep) {
  const DroneParams params;
  const SimParams sim;
  const MixerModel model{params, sim.kf};
  const ControlGains g = ControlGains::Defaults();
  Quadrotor quad(params, sim);
  quad.Reset(HoverAt({0, 0, 1}, sim.kf), Eigen::Vector4d::Constant(1.0 / sim.kf));
  PidState st;
  double reached = -1.0;
  for (int k = 0; k < 60 && reached < 0.0; ++k) {
    const auto u = AttitudeRateControl(params.gravity, {1.0, 0, 0}, quad.state().body_rates,
                                       st, g.rate, model, sim.dt);
    quad.Step(u.u);
    if (std::abs(quad.state().body_rates.x() - 1.0) <= 0.1) reached = (k + 1) * sim.dt;
  }
  ASSERT_GT(reached, 0.0);
  EXPECT_LT(reached, 0.3);
}

TEST(AttitudeControl, HoldingCurrentAttitudeGivesHover) {
  const MixerModel model;
  const ControlGains g = ControlGains::Defaults();
  CascadeState st;
  const DroneState s = HoverAt({0, 0, 1}, model.kf);
  const MixerOutput m = AttitudeControl(model.params.gravity, s.attitude, s, st, g, model, kDt);
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(m.u(i), 1.0 / model.kf, 1e-12);
}

TEST(AttitudeControl, TenDegreeRollSettles) {
  const DroneParams params;
  const SimParams sim;
  const MixerModel model{params, sim.kf};
  const ControlGains g = ControlGains::Defaults();
  Quadrotor quad(params, sim);
  quad.Reset(HoverAt({0, 0, 1}, sim.kf), Eigen::Vector4d::Constant(1.0 / sim.kf));
  const double target = 10.0 * std::numbers::pi / 180.0;
  const Eigen::Quaterniond desired = EulerToQuaternion({target, 0, 0});
  CascadeState st;
  double settle = 0.0;
  for (int k = 0; k < 600; ++k) {
    quad.Step(AttitudeControl(params.gravity, desired, quad.state(), st, g, model, sim.dt).u);
    const double roll = QuaternionToEuler(quad.state().attitude).x();
    if (std::abs(roll - target) > std::numbers::pi / 180.0) settle = (k + 1) * sim.dt;
  }
  EXPECT_LT(settle, 1.0);
}

TEST(AttitudeControl, CascadeMatchesRateLoop) {
  const MixerModel model;
  const ControlGains g = ControlGains::Defaults();
  DroneState s = HoverAt({0, 0, 1}, model.kf);
  s.attitude = EulerToQuaternion({0.05, -0.03, 0.1});
  s.body_rates = {0.2, 0.1, -0.3};
  const Eigen::Quaterniond desired = EulerToQuaternion({0.1, 0.0, 0.0});
  CascadeState cascade;
  PidState outer, inner;
  for (int k = 0; k < 10; ++k) {
    const MixerOutput a = AttitudeControl(9.0, desired, s, cascade, g, model, kDt);
    const Eigen::Vector3d wd = AttitudeToRates(desired, s.attitude, outer, g.attitude, kDt);
    const MixerOutput b = AttitudeRateControl(9.0, wd, s.body_rates, inner, g.rate, model, kDt);
    EXPECT_EQ(a.u, b.u);
  }
}

TEST(AttitudeError, SmallAngleMatchesEuler) {
  const Eigen::Quaterniond q = EulerToQuaternion({0.01, -0.02, 0.015});
  const Eigen::Vector3d e = AttitudeError(q, Eigen::Quaterniond::Identity());
  EXPECT_TRUE(e.isApprox(Eigen::Vector3d(0.01, -0.02, 0.015), 5e-2));
  EXPECT_TRUE(AttitudeError(q, q).isZero(1e-12));
}

TEST(Euler, RoundTrip) {
  const Eigen::Vector3d rpy(0.3, -0.2, 1.1);
  EXPECT_TRUE(QuaternionToEuler(EulerToQuaternion(rpy)).isApprox(rpy, 1e-12));
}

TEST(PositionControl, AtSetpointGivesHover) {
  const MixerModel model;
  const ControlGains g = ControlGains::Defaults();
  PositionState st;
  const DroneState s = HoverAt({0.2, 0.1, 1.0}, model.kf);
  const MixerOutput m = PositionControl(s.position, s, st, g, model, 0.01);
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(m.u(i), 1.0 / model.kf, 1e-12);
}

TEST(PositionControl, TiltsTowardsHorizontalOffset) {
  const DroneParams params;
  SimParams sim;
  sim.latency = 0.0;
  const MixerModel model{params, sim.kf};
  const ControlGains g = ControlGains::Defaults();
  for (const Eigen::Vector3d& dir : {Eigen::Vector3d(1, 0, 0), Eigen::Vector3d(0, -1, 0)}) {
    Quadrotor quad(params, sim);
    quad.Reset(HoverAt({0, 0, 1}, sim.kf), Eigen::Vector4d::Constant(1.0 / sim.kf));
    PositionState st;
    const Eigen::Vector3d setpoint = Eigen::Vector3d(0, 0, 1) + 0.2 * dir;
    for (int k = 0; k < 20; ++k) {
      const auto u = PositionControl(setpoint, quad.state(), st, g, model, 0.01);
      quad.Step(u.u);
      quad.Step(u.u);
    }
    const Eigen::Vector3d thrust_axis = quad.state().attitude * Eigen::Vector3d::UnitZ();
    EXPECT_GT(thrust_axis.dot(dir), 0.02);
  }
}

TEST(PositionControl, CircleTrackingUnderNoise) {
  const DroneParams params;
  const SimParams sim;
  const MixerModel model{params, sim.kf};
  const ControlGains g = ControlGains::Defaults();
  const NoiseConfig noise;
  Rng rng(11);
  const double omega = -2.0 * std::numbers::pi / 3.0;
  auto circle = [&](double t) {
    return Eigen::Vector3d(0.25 * std::cos(omega * t), 0.25 * std::sin(omega * t), 1.0);
  };
  Quadrotor quad(params, sim);
  quad.Reset(HoverAt(circle(0.0), sim.kf), Eigen::Vector4d::Constant(1.0 / sim.kf));
  PositionState st;
  GyroBiasState gyro;
  OuState ou;
  double worst = 0.0;
  for (int k = 0; k < 6000; ++k) {
    const double t = k * 0.01;
    const NoisyState meas = CorruptState(quad.state(), noise, gyro, 0.01, rng);
    gyro = meas.gyro;
    const auto u = PositionControl(circle(t), meas.state, st, g, model, 0.01);
    for (int j = 0; j < 2; ++j) {
      quad.Step(ApplyActuatorNoise(u.u, ou));
      ou = OuStep(ou, noise, sim.dt, rng);
    }
    worst = std::max(worst, (quad.state().position - circle(t + 0.01)).norm());
  }
  EXPECT_LT(worst, 0.25);
}

TEST(ControlLevel, RatesAndNames) {
  EXPECT_EQ(PolicyRateHz(ControlLevel::kPwm), 100);
  EXPECT_EQ(PolicyRateHz(ControlLevel::kAttitudeRate), 50);
  EXPECT_EQ(PolicyRateHz(ControlLevel::kAttitude), 25);
  for (ControlLevel l : {ControlLevel::kPwm, ControlLevel::kAttitudeRate, ControlLevel::kAttitude}) {
    EXPECT_EQ(200 % PolicyRateHz(l), 0);
    EXPECT_EQ(ParseControlLevel(ToString(l)), l);
  }
  EXPECT_THROW(ParseControlLevel("thrust"), std::invalid_argument);
}

}  // namespace
}  // namespace quadsim
