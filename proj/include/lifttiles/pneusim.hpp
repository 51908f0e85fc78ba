#pragma once

// Fixed-timestep simulation of an actuator array: compressor flow shared
// along supply lines, spring-driven venting, load faults and a noisy
// overhead height sensor.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "lifttiles/model.hpp"

namespace lifttiles {

enum class OverloadPolicy { Buckle, Stall };

struct SimConfig {
  double dt_s = 0.05;
  double sensor_noise_sigma_cm = 0.5;
  double sensor_rate_hz = 30.0;
  std::uint64_t seed = 0;
  OverloadPolicy overload_policy = OverloadPolicy::Buckle;
  // Extra capacity contributed by each same-height edge neighbor.
  double neighbor_bonus_kg = 5.0;
  double height_similarity_cm = 5.0;
  double adjacency_gap_cm = 0.5;
  // Commands take effect this long after they are applied.
  double valve_latency_s = 0.0;

  double sensor_period_s() const { return 1.0 / sensor_rate_hz; }
  /// The controller can act no faster than both the sensor and the sim tick.
  double control_period_s() const { return std::max(dt_s, sensor_period_s()); }
};

inline void require_valid(const SimConfig& c) {
  if (!(c.dt_s > 0.0)) throw Error(ErrorCode::Invalid, "dt_s must be positive");
  if (!(c.sensor_noise_sigma_cm >= 0.0)) throw Error(ErrorCode::Invalid, "sensor sigma must be >= 0");
  if (!(c.sensor_rate_hz > 0.0)) throw Error(ErrorCode::Invalid, "sensor rate must be positive");
  if (!(c.valve_latency_s >= 0.0)) throw Error(ErrorCode::Invalid, "valve latency must be >= 0");
}

struct PendingCommand {
  double due_s = 0.0;
  ValveCommand command;
  friend bool operator==(const PendingCommand&, const PendingCommand&) = default;
};

struct SimState {
  double t_s = 0.0;
  std::uint64_t step_index = 0;
  std::map<ActuatorId, ActuatorState> states;
  // Sensor noise is a pure function of (seed, step_index, id); this is all
  // the generator state there is.
  std::uint64_t rng_seed = 0;
  std::vector<PendingCommand> pending;
  std::vector<std::string> warnings;

  friend bool operator==(const SimState&, const SimState&) = default;
};

struct SensorReading {
  ActuatorId actuator_id;
  double measured_height_cm = 0.0;
  double t_s = 0.0;
  friend bool operator==(const SensorReading&, const SensorReading&) = default;
};

/// Every actuator at its collapsed height with both valves closed.
inline SimState initial_state(const Layout& layout, const SimConfig& config) {
  SimState s;
  s.rng_seed = config.seed;
  for (const auto& [id, a] : layout.actuators) {
    ActuatorState st;
    st.height_cm = a.spec.min_height_cm;
    s.states.emplace(id, st);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Flow sharing

/// Water-filling split of a line's capacity among the open supply valves:
/// residual capacity is divided equally among members that are not yet at
/// their valve limit until either the capacity or every valve is exhausted.
inline std::map<ActuatorId, double> allocate_flow(const SupplyLine& line, const std::set<ActuatorId>& open_ids,
                                                  const Layout& layout) {
  for (const auto& id : open_ids) {
    if (std::find(line.members.begin(), line.members.end(), id) == line.members.end())
      throw Error(ErrorCode::BadId, id + " is not on supply line " + line.id);
  }
  std::map<ActuatorId, double> shares;
  if (open_ids.empty()) return shares;

  std::vector<std::pair<double, ActuatorId>> by_cap;
  for (const auto& id : open_ids) by_cap.emplace_back(layout.at(id).spec.valve_max_flow_units, id);
  std::sort(by_cap.begin(), by_cap.end());

  double residual = layout.line_capacity(line);
  std::size_t remaining = by_cap.size();
  for (const auto& [cap, id] : by_cap) {
    const double level = residual / static_cast<double>(remaining);
    const double share = std::min(cap, level);
    shares[id] = share;
    residual = std::max(0.0, residual - share);
    --remaining;
  }
  return shares;
}

// ---------------------------------------------------------------------------
// Loads

/// Net lift of a fully pressurized tube minus the springs, in kgf. Never
/// negative.
inline double theoretical_stall_load_kg(const ActuatorSpec& spec, const Compressor& compressor) {
  const double radius_m = 0.5 * spec.tube_diameter_cm / 100.0;
  const double area_m2 = std::numbers::pi * radius_m * radius_m;
  const double lift_kgf = compressor.pressure_kpa * 1000.0 * area_m2 / kStandardGravity;
  return std::max(0.0, lift_kgf - spec.spring_count * spec.spring_force_kgf);
}

inline double stall_load_for(const Layout& layout, const ActuatorId& id) {
  Compressor c;
  c.pressure_kpa = layout.supply_pressure_kpa(id);
  return theoretical_stall_load_kg(layout.at(id).spec, c);
}

/// Rated load plus a bonus for every edge neighbor standing at a similar
/// height; adjacent enclosures brace each other.
inline double load_capacity_kg(const SimState& state, const Layout& layout, const SimConfig& config,
                               const ActuatorId& id) {
  const double h = state.states.at(id).height_cm;
  int braced = 0;
  for (const auto& n : edge_neighbors(layout, id, config.adjacency_gap_cm)) {
    auto it = state.states.find(n);
    if (it != state.states.end() && std::abs(it->second.height_cm - h) <= config.height_similarity_cm) ++braced;
  }
  return layout.at(id).spec.rated_load_kg + config.neighbor_bonus_kg * braced;
}

inline bool overloaded(const SimState& state, const Layout& layout, const SimConfig& config, const ActuatorId& id) {
  return state.states.at(id).load_kg > load_capacity_kg(state, layout, config, id) + 1e-12;
}

/// Under the Buckle policy an overloaded unit faults. Stall leaves the state
/// alone; `step` refuses to extend an overloaded unit instead.
inline std::map<ActuatorId, ActuatorState> check_load(const SimState& state, const Layout& layout,
                                                      const SimConfig& config) {
  std::map<ActuatorId, ActuatorState> out = state.states;
  if (config.overload_policy != OverloadPolicy::Buckle) return out;
  for (auto& [id, st] : out) {
    if (st.fault == Fault::None && overloaded(state, layout, config, id)) st.fault = Fault::Buckled;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Commands and stepping

namespace detail {

inline void apply_now(SimState& s, const ValveCommand& cmd) {
  auto& st = s.states.at(cmd.actuator_id);
  if (st.fault == Fault::Buckled) {
    s.warnings.push_back("ignored command for buckled actuator " + cmd.actuator_id);
    return;
  }
  st.supply_valve = cmd.supply;
  st.release_valve = cmd.release;
}

}  // namespace detail

inline SimState apply_commands(const SimState& state, const std::vector<ValveCommand>& commands,
                               const SimConfig& config = {}) {
  for (const auto& cmd : commands) {
    if (!state.states.count(cmd.actuator_id))
      throw Error(ErrorCode::BadId, "unknown actuator '" + cmd.actuator_id + "'");
  }
  SimState next = state;
  next.warnings.clear();
  for (const auto& cmd : commands) {
    if (config.valve_latency_s > 0.0) {
      next.pending.push_back({state.t_s + config.valve_latency_s, cmd});
    } else {
      detail::apply_now(next, cmd);
    }
  }
  return next;
}

/// Ids on `line` drawing compressor air this step: supply open, release
/// closed, healthy, not at the top stop and not stalled by load.
inline std::set<ActuatorId> drawing_flow(const SimState& state, const Layout& layout, const SimConfig& config,
                                         const SupplyLine& line) {
  std::set<ActuatorId> open;
  for (const auto& id : line.members) {
    auto it = state.states.find(id);
    if (it == state.states.end()) continue;
    const ActuatorState& st = it->second;
    const ActuatorSpec& spec = layout.at(id).spec;
    if (st.fault != Fault::None || st.supply_valve != Valve::Open || st.release_valve == Valve::Open) continue;
    if (st.height_cm >= spec.max_height_cm) continue;
    if (st.load_kg >= stall_load_for(layout, id)) continue;
    if (config.overload_policy == OverloadPolicy::Stall && overloaded(state, layout, config, id)) continue;
    open.insert(id);
  }
  return open;
}

inline SimState step(const SimState& state, const Layout& layout, const SimConfig& config,
                     std::optional<double> dt_override = std::nullopt) {
  const double dt = dt_override.value_or(config.dt_s);
  SimState next = state;
  next.warnings.clear();

  if (!next.pending.empty()) {
    std::vector<PendingCommand> later;
    for (const auto& p : next.pending) {
      if (p.due_s <= state.t_s + 1e-12) {
        detail::apply_now(next, p.command);
      } else {
        later.push_back(p);
      }
    }
    next.pending = std::move(later);
  }

  for (auto& [id, st] : next.states) {
    if (st.fault == Fault::Buckled) {
      st.supply_valve = Valve::Closed;
      st.release_valve = Valve::Closed;
    }
  }

  std::map<ActuatorId, double> shares;
  for (const auto& line : layout.supply_lines) {
    for (auto& [id, share] : allocate_flow(line, drawing_flow(next, layout, config, line), layout)) shares[id] = share;
  }

  for (auto& [id, st] : next.states) {
    if (st.fault == Fault::Buckled) continue;
    const ActuatorSpec& spec = layout.at(id).spec;
    if (st.release_valve == Valve::Open) {
      st.height_cm = std::max(spec.min_height_cm, st.height_cm - spec.retract_rate_cm_s * dt);
    } else if (auto it = shares.find(id); it != shares.end()) {
      st.height_cm = std::min(spec.max_height_cm, st.height_cm + it->second * spec.extend_rate() * dt);
    }
  }

  next.states = check_load(next, layout, config);
  next.t_s = state.t_s + dt;
  ++next.step_index;
  return next;
}

// ---------------------------------------------------------------------------
// Sensing

namespace detail {

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace detail

/// One reading per actuator at the state's current time. Noise depends only
/// on (seed, step index, actuator id), never on call order.
inline std::vector<SensorReading> sense(const SimState& state, const Layout& layout, const SimConfig& config) {
  std::vector<SensorReading> out;
  out.reserve(state.states.size());
  for (const auto& [id, st] : state.states) {
    double measured = st.height_cm;
    if (config.sensor_noise_sigma_cm > 0.0) {
      const std::uint64_t key = detail::fnv1a(id);
      std::seed_seq seq{static_cast<std::uint32_t>(state.rng_seed), static_cast<std::uint32_t>(state.rng_seed >> 32),
                        static_cast<std::uint32_t>(state.step_index),
                        static_cast<std::uint32_t>(state.step_index >> 32), static_cast<std::uint32_t>(key),
                        static_cast<std::uint32_t>(key >> 32)};
      std::mt19937_64 gen(seq);
      std::normal_distribution<double> noise(0.0, config.sensor_noise_sigma_cm);
      measured += noise(gen);
      const ActuatorSpec& spec = layout.at(id).spec;
      measured = std::clamp(measured, spec.min_height_cm, spec.max_height_cm);
    }
    out.push_back({id, measured, state.t_s});
  }
  return out;
}

}  // namespace lifttiles
