// Acceptance run: one PASS/FAIL line per headline requirement, exit status 1
// if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>

#include "scenarios.hpp"

namespace lt = lifttiles;
using lt::testing::grid;
using lt::testing::noiseless;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string num(double v, int digits = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Outcome single_stroke(double from, double to, double expected_s) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto layout = grid(1, 1);
  const auto c = noiseless();
  lt::Simulation sim(layout, c, lt::testing::at_heights(layout, c, {{"r0c0", from}}));
  const auto r = lt::run_to_target(sim, {{{"r0c0", to}}}, {}, 60);
  const double wall = seconds_since(t0);
  const bool ok = r.settled && std::abs(r.elapsed_s() - expected_s) <= c.control_period_s() && wall < 1.0;
  return {ok, "settled " + num(r.elapsed_s()) + " s, expected " + num(expected_s) + " +- " +
                  num(c.control_period_s()) + " s, wall " + num(wall, 3) + " s"};
}

Outcome full_extension() { return single_stroke(15, 150, 16.0); }
Outcome full_retraction() { return single_stroke(150, 15, 4.0); }

Outcome height_bounds() {
  constexpr int kSteps = 100000;
  const auto failure = lt::testing::bounds_fuzz(20261019, kSteps);
  if (!failure.empty()) return {false, failure};
  return {true, std::to_string(kSteps) + " fuzzed steps, heights in [15, 150], line flow within capacity"};
}

Outcome planner_optimality() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(123);
  double worst_exact = 0, worst_bound = 0;
  for (int i = 0; i < 200; ++i) {
    const auto in = lt::testing::random_instance(rng);
    const auto p = in.problem();
    const double greedy = lt::plan_greedy(p).predicted_makespan_s;
    worst_exact = std::max(worst_exact, std::abs(greedy - lt::plan_exact(p, 0.25).predicted_makespan_s));
    worst_bound = std::max(worst_bound, std::abs(greedy - lt::lower_bound_makespan(p)));
  }
  const double wall = seconds_since(t0);
  const bool ok = worst_exact <= 0.25 && worst_bound <= 1e-6 && wall < 60.0;
  std::ostringstream os;
  os << "200 instances, max |greedy-exact| " << num(worst_exact, 4) << " s, max |greedy-bound| " << worst_bound
     << " s, wall " << num(wall, 2) << " s";
  return {ok, os.str()};
}

Outcome chair_scenario() {
  const auto layout = grid(5, 5);
  const auto flat = lt::testing::uniform(layout, 15);
  const auto goal = lt::overlay(flat, lt::preset(lt::PresetName::Chair, layout));
  const double predicted = lt::plan_greedy({layout, flat, goal}).predicted_makespan_s;

  lt::Simulation quiet(layout, noiseless());
  const auto r = lt::run_to_target(quiet, {goal}, {}, 300, false);
  const double tolerance = 2 * noiseless().control_period_s();

  auto traced = [&] {
    lt::SimConfig c;
    c.seed = 17;
    std::ostringstream trace;
    lt::Simulation sim(layout, c);
    sim.attach_trace(&trace);
    const bool settled = lt::run_to_target(sim, {goal}, {}, 300, false).settled;
    return std::make_pair(settled, trace.str());
  };
  const auto [settled_a, trace_a] = traced();
  const auto [settled_b, trace_b] = traced();

  const bool ok = layout.actuators.size() == 25 && layout.supply_lines.size() == 5 && r.settled && settled_a &&
                  std::abs(r.elapsed_s() - predicted) <= tolerance && trace_a == trace_b;
  return {ok, "25 units on " + std::to_string(layout.supply_lines.size()) + " lines, settled " + num(r.elapsed_s()) +
                  " s vs planned " + num(predicted) + " s, seeded traces " +
                  (trace_a == trace_b ? "identical" : "differ") + " (" + std::to_string(trace_a.size()) + " bytes)"};
}

Outcome flow_split() {
  const auto layout = grid(1, 2);
  const auto c = noiseless();
  lt::Simulation up(layout, c);
  const auto ext = lt::run_to_target(up, {lt::testing::uniform(layout, 150)}, {}, 120);
  lt::Simulation down(layout, c, lt::testing::at_heights(layout, c, lt::testing::uniform(layout, 150)));
  const auto ret = lt::run_to_target(down, {lt::testing::uniform(layout, 15)}, {}, 120);
  const double tol = c.control_period_s();
  const bool ok = layout.supply_lines.size() == 1 && layout.line_capacity(layout.supply_lines[0]) == 1.0 &&
                  ext.settled && ret.settled && std::abs(ext.elapsed_s() - 32.0) <= tol &&
                  std::abs(ret.elapsed_s() - 4.0) <= tol;
  return {ok, "two on one line: extend " + num(ext.elapsed_s()) + " s (32.00), retract " + num(ret.elapsed_s()) +
                  " s (4.00)"};
}

Outcome load_model() {
  const auto layout = grid(1, 1);
  const auto& a = layout.actuators.at("r0c0");
  const auto& comp = layout.compressors.begin()->second;
  const double stall = lt::theoretical_stall_load_kg(a.spec, comp);

  lt::Simulation holding(layout, noiseless());
  holding.set_load("r0c0", 10.0);
  const auto r = lt::run_to_target(holding, {{{"r0c0", 150}}}, {}, 120);
  const bool held = r.settled && holding.state().states.at("r0c0").fault == lt::Fault::None;

  lt::Simulation over(layout, noiseless());
  over.set_load("r0c0", 12.0);
  for (int i = 0; i < 10; ++i) over.advance();
  const bool buckled = over.config().overload_policy == lt::OverloadPolicy::Buckle &&
                       over.state().states.at("r0c0").fault == lt::Fault::Buckled;

  const bool ok = held && buckled && std::abs(stall - 36.8) <= 0.5;
  return {ok, std::string("10 kg ") + (held ? "held to 150 cm" : "NOT held") + ", 12 kg " +
                  (buckled ? "buckled" : "did not buckle") + ", stall load " + num(stall) + " kg"};
}

Outcome gateway_protocol() {
  const std::filesystem::path dir(LIFTTILES_GOLDEN_DIR);
  const auto frames = lt::testing::read_lines(dir / "frames.jsonl");
  std::set<lt::FrameKind> kinds;
  for (const auto& line : frames) {
    try {
      const auto f = lt::decode_frame(line);
      if (lt::encode_frame(f) != line) return {false, "re-encoding differs: " + line};
      kinds.insert(f.kind);
    } catch (const std::exception& e) {
      return {false, std::string("golden frame rejected: ") + e.what()};
    }
  }
  if (kinds.size() != std::size(lt::kAllFrameKinds))
    return {false, "golden frames cover " + std::to_string(kinds.size()) + " kinds"};

  const auto transcript = lt::testing::read_lines(dir / "session.txt");
  if (auto why = lt::testing::replay_transcript(transcript); !why.empty()) return {false, "transcript: " + why};

  constexpr int kFrames = 100000;
  const auto fuzz = lt::testing::gateway_fuzz(20240601, kFrames);
  if (!fuzz.failure.empty()) return {false, "fuzz: " + fuzz.failure};
  const bool ok = fuzz.acks + fuzz.errs == static_cast<std::size_t>(kFrames);
  return {ok, std::to_string(kinds.size()) + " frame kinds round-trip, " + std::to_string(transcript.size()) +
                  "-line transcript replays, " + std::to_string(kFrames) + " fuzzed frames answered once (" +
                  std::to_string(fuzz.acks) + " Ack, " + std::to_string(fuzz.errs) + " Err)"};
}

}  // namespace

int main() {
  const std::pair<const char*, std::function<Outcome()>> checks[] = {
      {"full-extension-16s", full_extension},
      {"full-retraction-4s", full_retraction},
      {"height-bounds-invariant", height_bounds},
      {"planner-optimality", planner_optimality},
      {"chair-5x5-scenario", chair_scenario},
      {"flow-split-timing", flow_split},
      {"load-model", load_model},
      {"gateway-protocol", gateway_protocol},
  };
  int failed = 0;
  for (const auto& [name, check] : checks) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
