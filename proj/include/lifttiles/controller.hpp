#pragma once

// Per-actuator bang-bang height regulation with hysteresis, settle
// detection, and a closed-loop driver over a Simulation.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "lifttiles/simulation.hpp"

namespace lifttiles {

struct ControlConfig {
  double deadband_cm = 2.0;
  double settle_hold_s = 0.5;
  double stale_reading_timeout_s = 0.5;
};

inline void require_valid(const ControlConfig& c) {
  if (!(c.deadband_cm > 0.0)) throw Error(ErrorCode::Invalid, "deadband must be positive");
  if (!(c.settle_hold_s >= 0.0)) throw Error(ErrorCode::Invalid, "settle hold must be >= 0");
  if (!(c.stale_reading_timeout_s > 0.0)) throw Error(ErrorCode::Invalid, "stale timeout must be positive");
}

struct TargetAssignment {
  std::map<ActuatorId, double> targets;
  friend bool operator==(const TargetAssignment&, const TargetAssignment&) = default;
};

inline void require_valid(const TargetAssignment& t, const Layout& layout) {
  for (const auto& [id, h] : t.targets) {
    const ActuatorSpec& spec = layout.at(id).spec;
    if (!(h >= spec.min_height_cm && h <= spec.max_height_cm))
      throw Error(ErrorCode::OutOfRange, "target " + std::to_string(h) + " cm for " + id + " outside [" +
                                             std::to_string(spec.min_height_cm) + ", " +
                                             std::to_string(spec.max_height_cm) + "]");
  }
}

/// Direction an actuator is being driven. A drive, once started, continues
/// until the measurement reaches the target; from Hold it only starts when
/// the error leaves the deadband.
enum class Drive { Hold, Extend, Retract };

using DriveMemory = std::map<ActuatorId, Drive>;

inline ValveCommand command_for(const ActuatorId& id, Drive d) {
  switch (d) {
    case Drive::Extend: return {id, Valve::Open, Valve::Closed};
    case Drive::Retract: return {id, Valve::Closed, Valve::Open};
    case Drive::Hold: break;
  }
  return {id, Valve::Closed, Valve::Closed};
}

inline Drive next_drive(double measured, double target, double deadband, Drive previous) {
  const double error = measured - target;
  if (error < -deadband) return Drive::Extend;
  if (error > deadband) return Drive::Retract;
  if (previous == Drive::Extend && error < 0.0) return Drive::Extend;
  if (previous == Drive::Retract && error > 0.0) return Drive::Retract;
  return Drive::Hold;
}

struct ControlOutput {
  std::vector<ValveCommand> commands;
  std::vector<ActuatorId> stale;
  DriveMemory drives;
};

/// One controller tick. Pure: the only state carried between ticks is the
/// drive memory, passed in and handed back.
inline ControlOutput control_step(const std::map<ActuatorId, SensorReading>& latest, const TargetAssignment& targets,
                                  const ControlConfig& config, double now_s, const DriveMemory& previous = {}) {
  ControlOutput out;
  for (const auto& [id, target] : targets.targets) {
    auto it = latest.find(id);
    if (it == latest.end() || now_s - it->second.t_s > config.stale_reading_timeout_s + 1e-9) {
      out.stale.push_back(id);
      out.commands.push_back(command_for(id, Drive::Hold));
      out.drives[id] = Drive::Hold;
      continue;
    }
    auto prev = previous.find(id);
    const Drive d = next_drive(it->second.measured_height_cm, target, config.deadband_cm,
                               prev == previous.end() ? Drive::Hold : prev->second);
    out.commands.push_back(command_for(id, d));
    out.drives[id] = d;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Settle detection

struct SettleStatus {
  std::map<ActuatorId, bool> per_id;
  bool overall = true;
};

/// Incremental form of `is_settled`: tracks, per actuator, when its current
/// unbroken run of in-band readings began.
class SettleTracker {
 public:
  SettleTracker(TargetAssignment targets, ControlConfig config)
      : targets_(std::move(targets)), config_(config) {}

  void observe(const SensorReading& r) {
    latest_t_ = std::max(latest_t_, r.t_s);
    auto t = targets_.targets.find(r.actuator_id);
    if (t == targets_.targets.end()) return;
    const bool in_band = std::abs(r.measured_height_cm - t->second) <= config_.deadband_cm + 1e-12;
    auto& run = runs_[r.actuator_id];
    if (!in_band) {
      run.in_band = false;
    } else if (!run.in_band) {
      run.in_band = true;
      run.since = r.t_s;
    }
  }

  /// Marks the actuator as still moving; its in-band run restarts.
  void interrupt(const ActuatorId& id) { runs_[id].in_band = false; }

  bool settled(const ActuatorId& id) const {
    auto it = runs_.find(id);
    return it != runs_.end() && it->second.in_band && latest_t_ - it->second.since >= config_.settle_hold_s - 1e-9;
  }

  /// Start of the in-band run, when there is one.
  std::optional<double> since(const ActuatorId& id) const {
    auto it = runs_.find(id);
    if (it == runs_.end() || !it->second.in_band) return std::nullopt;
    return it->second.since;
  }

  SettleStatus status() const {
    SettleStatus s;
    for (const auto& [id, target] : targets_.targets) {
      const bool ok = settled(id);
      s.per_id[id] = ok;
      s.overall = s.overall && ok;
    }
    return s;
  }

 private:
  struct Run {
    bool in_band = false;
    double since = 0.0;
  };
  TargetAssignment targets_;
  ControlConfig config_;
  std::map<ActuatorId, Run> runs_;
  double latest_t_ = -std::numeric_limits<double>::infinity();
};

inline SettleStatus is_settled(std::span<const SensorReading> history, const TargetAssignment& targets,
                               const ControlConfig& config) {
  SettleTracker tracker(targets, config);
  for (const auto& r : history) tracker.observe(r);
  return tracker.status();
}

// ---------------------------------------------------------------------------
// Closed-loop driver

struct TrajectoryPoint {
  double t_s;
  double height_cm;
};

struct TransitionReport {
  bool settled = false;
  // Time the last actuator came to rest inside its band.
  double settle_time_s = 0.0;
  // Simulated time when the loop stopped.
  double end_time_s = 0.0;
  double start_time_s = 0.0;
  double max_overshoot_cm = 0.0;
  std::map<ActuatorId, double> residual_cm;
  std::map<ActuatorId, std::vector<TrajectoryPoint>> trajectories;
  std::size_t control_ticks = 0;
  std::size_t active_commands = 0;

  double elapsed_s() const { return settle_time_s - start_time_s; }
};

inline nlohmann::ordered_json summary_record(const TransitionReport& r) {
  nlohmann::ordered_json residuals = nlohmann::ordered_json::object();
  for (const auto& [id, v] : r.residual_cm) residuals[id] = v;
  return {{"rec", "summary"},
          {"settled", r.settled},
          {"elapsed_s", r.elapsed_s()},
          {"settle_time_s", r.settle_time_s},
          {"end_time_s", r.end_time_s},
          {"max_overshoot_cm", r.max_overshoot_cm},
          {"residual_cm", residuals}};
}

/// Drives the simulation with `control_step` at the sensor rate until every
/// target has been held in band, with the valves closed, for the settle
/// window, or until `timeout_s` of simulated time passes.
inline TransitionReport run_to_target(Simulation& sim, const TargetAssignment& targets, const ControlConfig& config,
                                      double timeout_s, bool record_trajectories = true) {
  require_valid(config);
  require_valid(targets, sim.layout());

  TransitionReport report;
  report.start_time_s = sim.now();
  const double deadline = sim.now() + timeout_s;

  std::map<ActuatorId, double> start_height;
  for (const auto& [id, h] : targets.targets) start_height[id] = sim.state().states.at(id).height_cm;

  SettleTracker tracker(targets, config);
  std::map<ActuatorId, SensorReading> latest;
  DriveMemory drives;

  auto record = [&] {
    for (const auto& [id, target] : targets.targets) {
      const double h = sim.state().states.at(id).height_cm;
      if (record_trajectories) report.trajectories[id].push_back({sim.now(), h});
      const double overshoot = start_height[id] <= target ? h - target : target - h;
      report.max_overshoot_cm = std::max(report.max_overshoot_cm, overshoot);
    }
  };
  record();

  while (true) {
    if (auto readings = sim.poll_sensors()) {
      for (const auto& r : *readings) {
        latest[r.actuator_id] = r;
        tracker.observe(r);
      }
      ControlOutput out = control_step(latest, targets, config, sim.now(), drives);
      drives = out.drives;
      ++report.control_ticks;
      for (const auto& [id, d] : drives) {
        if (d != Drive::Hold) {
          tracker.interrupt(id);
          ++report.active_commands;
        }
      }
      sim.apply(out.commands);

      const SettleStatus status = tracker.status();
      if (status.overall) {
        report.settled = true;
        double last = report.start_time_s;
        for (const auto& [id, t] : targets.targets) last = std::max(last, tracker.since(id).value_or(last));
        report.settle_time_s = last;
        break;
      }
    }
    if (sim.now() >= deadline - 1e-9) break;
    sim.advance();
    record();
  }

  report.end_time_s = sim.now();
  if (!report.settled) report.settle_time_s = sim.now();
  for (const auto& [id, target] : targets.targets)
    report.residual_cm[id] = sim.state().states.at(id).height_cm - target;
  sim.emit(summary_record(report));
  return report;
}

}  // namespace lifttiles
