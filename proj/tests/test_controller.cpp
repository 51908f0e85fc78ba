#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "support.hpp"

namespace lt = lifttiles;
using lt::testing::grid;
using lt::testing::noiseless;

namespace {

std::map<std::string, lt::SensorReading> reading(const std::string& id, double cm, double t = 0.0) {
  return {{id, {id, cm, t}}};
}

lt::TargetAssignment target(const std::string& id, double cm) { return {{{id, cm}}}; }

const lt::ValveCommand& only(const lt::ControlOutput& out) { return out.commands.at(0); }

}  // namespace

TEST(ControlStep, FarBelowOpensSupply) {
  const auto out = lt::control_step(reading("a", 15), target("a", 150), {}, 0.0);
  EXPECT_EQ(only(out), (lt::ValveCommand{"a", lt::Valve::Open, lt::Valve::Closed}));
}

TEST(ControlStep, FarAboveOpensRelease) {
  const auto out = lt::control_step(reading("a", 150), target("a", 15), {}, 0.0);
  EXPECT_EQ(only(out), (lt::ValveCommand{"a", lt::Valve::Closed, lt::Valve::Open}));
}

TEST(ControlStep, InsideBandHolds) {
  for (double m : {100.0, 101.5, 98.5, 102.0, 98.0}) {
    const auto out = lt::control_step(reading("a", m), target("a", 100), {}, 0.0);
    EXPECT_EQ(only(out), (lt::ValveCommand{"a", lt::Valve::Closed, lt::Valve::Closed})) << m;
  }
}

TEST(ControlStep, StaleOrMissingReadingHolds) {
  lt::ControlConfig cfg;
  auto out = lt::control_step(reading("a", 15, 0.0), target("a", 150), cfg, 0.6);
  EXPECT_EQ(only(out).supply, lt::Valve::Closed);
  EXPECT_EQ(out.stale, std::vector<std::string>{"a"});
  out = lt::control_step({}, target("a", 150), cfg, 0.0);
  EXPECT_EQ(only(out).supply, lt::Valve::Closed);
  EXPECT_EQ(out.stale, std::vector<std::string>{"a"});
  out = lt::control_step(reading("a", 15, 0.1), target("a", 150), cfg, 0.6);
  EXPECT_TRUE(out.stale.empty());
}

// From rest the controller is a pure step function of the error with edges at
// exactly +-deadband.
TEST(ControlStep, ExhaustiveHysteresisScan) {
  for (double deadband : {0.5, 2.0, 3.7}) {
    lt::ControlConfig cfg;
    cfg.deadband_cm = deadband;
    for (int k = -1000; k <= 1000; ++k) {
      const double error = k / 10.0;
      const double measured = 80.0 + error;
      const auto c = only(lt::control_step(reading("a", measured), target("a", 80.0), cfg, 0.0));
      ASSERT_FALSE(c.supply == lt::Valve::Open && c.release == lt::Valve::Open);
      const double e = measured - 80.0;
      if (e < -deadband) {
        ASSERT_EQ(c.supply, lt::Valve::Open) << e;
      } else if (e > deadband) {
        ASSERT_EQ(c.release, lt::Valve::Open) << e;
      } else {
        ASSERT_EQ(c, (lt::ValveCommand{"a", lt::Valve::Closed, lt::Valve::Closed})) << e;
      }
    }
  }
}

TEST(ControlStep, ActiveDriveRunsToTarget) {
  lt::DriveMemory extending{{"a", lt::Drive::Extend}};
  auto out = lt::control_step(reading("a", 99.0), target("a", 100), {}, 0.0, extending);
  EXPECT_EQ(only(out).supply, lt::Valve::Open);
  out = lt::control_step(reading("a", 100.0), target("a", 100), {}, 0.0, extending);
  EXPECT_EQ(out.drives.at("a"), lt::Drive::Hold);
  lt::DriveMemory retracting{{"a", lt::Drive::Retract}};
  out = lt::control_step(reading("a", 101.0), target("a", 100), {}, 0.0, retracting);
  EXPECT_EQ(only(out).release, lt::Valve::Open);
}

TEST(ControlStep, NeverOpensBothValves) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> h(15, 150);
  const lt::Drive drives[] = {lt::Drive::Hold, lt::Drive::Extend, lt::Drive::Retract};
  for (int i = 0; i < 20000; ++i) {
    const auto out =
        lt::control_step(reading("a", h(rng)), target("a", h(rng)), {}, 0.0, {{"a", drives[rng() % 3]}});
    ASSERT_FALSE(only(out).supply == lt::Valve::Open && only(out).release == lt::Valve::Open);
  }
}

TEST(Settled, ConstantAtTargetForOneSecond) {
  std::vector<lt::SensorReading> h;
  for (int i = 0; i <= 30; ++i) h.push_back({"a", 100.0, i / 30.0});
  const auto s = lt::is_settled(h, target("a", 100), {});
  EXPECT_TRUE(s.overall);
  EXPECT_TRUE(s.per_id.at("a"));
}

TEST(Settled, ExcursionInsideWindowBreaksIt) {
  std::vector<lt::SensorReading> h;
  for (int i = 0; i <= 30; ++i) h.push_back({"a", i == 25 ? 103.0 : 100.0, i / 30.0});
  EXPECT_FALSE(lt::is_settled(h, target("a", 100), {}).overall);
}

TEST(Settled, EmptyTargetSetIsVacuouslySettled) {
  EXPECT_TRUE(lt::is_settled({}, {}, {}).overall);
}

TEST(Settled, NoReadingsIsNotSettled) {
  EXPECT_FALSE(lt::is_settled({}, target("a", 100), {}).overall);
}

TEST(RunToTarget, FullExtensionSettlesAtSixteenSeconds) {
  lt::Simulation sim(grid(1, 1), noiseless());
  const auto r = lt::run_to_target(sim, target("r0c0", 150), {}, 60);
  ASSERT_TRUE(r.settled);
  EXPECT_NEAR(r.elapsed_s(), 16.0, 0.05);
  EXPECT_NEAR(r.residual_cm.at("r0c0"), 0.0, 1e-9);
}

TEST(RunToTarget, FullRetractionSettlesAtFourSeconds) {
  const auto layout = grid(1, 1);
  const auto c = noiseless();
  lt::Simulation sim(layout, c, lt::testing::at_heights(layout, c, {{"r0c0", 150}}));
  const auto r = lt::run_to_target(sim, target("r0c0", 15), {}, 60);
  ASSERT_TRUE(r.settled);
  EXPECT_NEAR(r.elapsed_s(), 4.0, 0.05);
}

TEST(RunToTarget, FiveByFiveFlatToFullTakesEightySeconds) {
  const auto layout = grid(5, 5);
  lt::Simulation sim(layout, noiseless());
  const auto r = lt::run_to_target(sim, {lt::testing::uniform(layout, 150)}, {}, 200, false);
  ASSERT_TRUE(r.settled);
  EXPECT_NEAR(r.elapsed_s(), 80.0, 0.05);
}

TEST(RunToTarget, NoiselessOvershootIsBounded) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> h(15, 150);
  const auto layout = grid(1, 3);
  const auto c = noiseless();
  for (int trial = 0; trial < 30; ++trial) {
    std::map<std::string, double> start, goal;
    for (const auto& [id, a] : layout.actuators) {
      start[id] = h(rng);
      goal[id] = h(rng);
    }
    lt::Simulation sim(layout, c, lt::testing::at_heights(layout, c, start));
    const auto r = lt::run_to_target(sim, {goal}, {}, 120);
    ASSERT_TRUE(r.settled);
    // Worst case: a full-rate retraction for one control period past the band edge.
    EXPECT_LE(r.max_overshoot_cm, 33.75 * c.control_period_s() + 1e-9);
    for (const auto& [id, res] : r.residual_cm) EXPECT_LE(std::abs(res), 2.0 + 1e-9);
  }
}

TEST(RunToTarget, TimeoutReportsResiduals) {
  lt::Simulation sim(grid(1, 1), noiseless());
  const auto r = lt::run_to_target(sim, target("r0c0", 150), {}, 5.0);
  EXPECT_FALSE(r.settled);
  EXPECT_NEAR(r.residual_cm.at("r0c0"), 15.0 + 5.0 * 8.4375 - 150.0, 1e-6);
}

TEST(RunToTarget, OutOfRangeTargetRejected) {
  lt::Simulation sim(grid(1, 1), noiseless());
  try {
    lt::run_to_target(sim, target("r0c0", 200), {}, 5.0);
    FAIL();
  } catch (const lt::Error& e) {
    EXPECT_EQ(e.code(), lt::ErrorCode::OutOfRange);
  }
}

TEST(RunToTarget, ReproducibleUnderFixedSeed) {
  const auto layout = grid(2, 2);
  lt::SimConfig c;
  c.seed = 42;
  auto run = [&] {
    std::ostringstream trace;
    lt::Simulation sim(layout, c);
    sim.attach_trace(&trace);
    lt::run_to_target(sim, {{{"r0c0", 120}, {"r1c1", 60}, {"r0c1", 90}}}, {}, 60);
    return trace.str();
  };
  const auto a = run();
  EXPECT_EQ(a, run());
  EXPECT_NE(a.find("\"rec\":\"summary\""), std::string::npos);
}

TEST(Chatter, RareActiveCommandsDuringLongHold) {
  const auto layout = grid(1, 1);
  lt::SimConfig c;
  c.sensor_noise_sigma_cm = 0.5;  // deadband / 4
  c.seed = 2;
  lt::Simulation sim(layout, c);
  const auto settle = lt::run_to_target(sim, target("r0c0", 100), {}, 60);
  ASSERT_TRUE(settle.settled);

  lt::ControlConfig cfg;
  const auto targets = target("r0c0", 100);
  std::map<std::string, lt::SensorReading> latest;
  lt::DriveMemory drives;
  std::size_t periods = 0, active = 0;
  const double end = sim.now() + 60.0;
  while (sim.now() < end) {
    if (auto rs = sim.poll_sensors()) {
      for (const auto& r : *rs) latest[r.actuator_id] = r;
      auto out = lt::control_step(latest, targets, cfg, sim.now(), drives);
      drives = out.drives;
      ++periods;
      if (drives.at("r0c0") != lt::Drive::Hold) ++active;
      sim.apply(out.commands);
    }
    sim.advance();
  }
  ASSERT_GT(periods, 1000u);
  EXPECT_LT(static_cast<double>(active) / static_cast<double>(periods), 0.05);
}
