#pragma once

// Stateful simulation handle plus the newline-delimited trace log used for
// replay and golden comparisons.
//
// Trace records, one JSON object per line, keys in this order:
//   {"rec":"header","format":...,"config":{...},"layout":{...},"initial":{...}}
//   {"rec":"cmd","step":k,"id":...,"supply":...,"release":...}
//   {"rec":"load","step":k,"id":...,"load_kg":...}
//   {"rec":"clear_fault","step":k,"id":...}
//   {"rec":"layout","step":k,"layout":{...}}
//   {"rec":"tick","step":k,"dt_s":...}
//   {"rec":"state","t_s":...,"id":...,"height_cm":...,"supply":...,"release":...,"fault":...,"step":k}
//   {"rec":"summary",...}
// `step` on cmd/load/layout records is the step index at which the event was
// applied; on tick/state records it is the index after the step.

#include <cmath>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "lifttiles/pneusim.hpp"

namespace lifttiles {

inline constexpr const char* kTraceFormat = "lifttiles-trace-v1";

inline std::string_view to_string(OverloadPolicy p) { return p == OverloadPolicy::Buckle ? "buckle" : "stall"; }

inline OverloadPolicy overload_policy_from(const std::string& s) {
  if (s == "buckle") return OverloadPolicy::Buckle;
  if (s == "stall") return OverloadPolicy::Stall;
  throw Error(ErrorCode::Invalid, "unknown overload policy '" + s + "'");
}

inline nlohmann::ordered_json to_json(const SimConfig& c) {
  return {{"dt_s", c.dt_s},
          {"sensor_noise_sigma_cm", c.sensor_noise_sigma_cm},
          {"sensor_rate_hz", c.sensor_rate_hz},
          {"seed", c.seed},
          {"overload_policy", to_string(c.overload_policy)},
          {"neighbor_bonus_kg", c.neighbor_bonus_kg},
          {"height_similarity_cm", c.height_similarity_cm},
          {"adjacency_gap_cm", c.adjacency_gap_cm},
          {"valve_latency_s", c.valve_latency_s}};
}

template <class Json>
SimConfig sim_config_from_json(const Json& j) {
  SimConfig c;
  c.dt_s = j.value("dt_s", c.dt_s);
  c.sensor_noise_sigma_cm = j.value("sensor_noise_sigma_cm", c.sensor_noise_sigma_cm);
  c.sensor_rate_hz = j.value("sensor_rate_hz", c.sensor_rate_hz);
  c.seed = j.value("seed", c.seed);
  c.overload_policy = overload_policy_from(j.value("overload_policy", std::string("buckle")));
  c.neighbor_bonus_kg = j.value("neighbor_bonus_kg", c.neighbor_bonus_kg);
  c.height_similarity_cm = j.value("height_similarity_cm", c.height_similarity_cm);
  c.adjacency_gap_cm = j.value("adjacency_gap_cm", c.adjacency_gap_cm);
  c.valve_latency_s = j.value("valve_latency_s", c.valve_latency_s);
  return c;
}

inline nlohmann::ordered_json to_json(const ActuatorState& s) {
  return {{"height_cm", s.height_cm},
          {"supply", to_string(s.supply_valve)},
          {"release", to_string(s.release_valve)},
          {"load_kg", s.load_kg},
          {"fault", to_string(s.fault)}};
}

template <class Json>
ActuatorState actuator_state_from_json(const Json& j) {
  ActuatorState s;
  s.height_cm = j.at("height_cm").template get<double>();
  s.supply_valve = valve_from(j.value("supply", std::string("closed")));
  s.release_valve = valve_from(j.value("release", std::string("closed")));
  s.load_kg = j.value("load_kg", 0.0);
  s.fault = fault_from(j.value("fault", std::string("none")));
  return s;
}

inline nlohmann::ordered_json state_record(const SimState& s, const ActuatorId& id) {
  const ActuatorState& st = s.states.at(id);
  return {{"rec", "state"},
          {"t_s", s.t_s},
          {"id", id},
          {"height_cm", st.height_cm},
          {"supply", to_string(st.supply_valve)},
          {"release", to_string(st.release_valve)},
          {"fault", to_string(st.fault)},
          {"step", s.step_index}};
}

/// Owns one running simulation. Single writer: every mutation goes through
/// this class, and every mutation is echoed to the attached trace.
class Simulation {
 public:
  Simulation(Layout layout, SimConfig config)
      : layout_(std::move(layout)), config_(config), state_(initial_state(layout_, config_)) {
    require_valid(config_);
  }

  Simulation(Layout layout, SimConfig config, SimState initial)
      : layout_(std::move(layout)), config_(config), state_(std::move(initial)) {
    require_valid(config_);
    for (const auto& [id, a] : layout_.actuators) {
      if (!state_.states.count(id)) throw Error(ErrorCode::BadId, "initial state lacks actuator '" + id + "'");
    }
  }

  const Layout& layout() const { return layout_; }
  const SimConfig& config() const { return config_; }
  const SimState& state() const { return state_; }
  double now() const { return state_.t_s; }

  /// Starts writing the trace; emits the header immediately.
  void attach_trace(std::ostream* out) {
    trace_ = out;
    if (!trace_) return;
    nlohmann::ordered_json initial = nlohmann::ordered_json::object();
    for (const auto& [id, st] : state_.states) initial[id] = to_json(st);
    nlohmann::ordered_json header = {{"rec", "header"},
                                     {"format", kTraceFormat},
                                     {"t_s", state_.t_s},
                                     {"step", state_.step_index},
                                     {"config", to_json(config_)},
                                     {"layout", to_json(layout_)},
                                     {"initial", initial}};
    emit(header);
  }

  void emit(const nlohmann::ordered_json& record) {
    if (trace_) *trace_ << record.dump() << '\n';
  }

  void apply(const std::vector<ValveCommand>& commands) {
    state_ = apply_commands(state_, commands, config_);
    for (const auto& c : commands) {
      emit({{"rec", "cmd"},
            {"step", state_.step_index},
            {"id", c.actuator_id},
            {"supply", to_string(c.supply)},
            {"release", to_string(c.release)}});
    }
  }

  /// Loads at or above the stall force are refused: nothing could lift them.
  void set_load(const ActuatorId& id, double load_kg) {
    if (!state_.states.count(id)) throw Error(ErrorCode::BadId, "unknown actuator '" + id + "'");
    const double limit = stall_load_for(layout_, id);
    if (!(load_kg >= 0.0) || load_kg > limit)
      throw Error(ErrorCode::OutOfRange, "load for " + id + " must be within [0, " + std::to_string(limit) + "] kg");
    state_.states.at(id).load_kg = load_kg;
    emit({{"rec", "load"}, {"step", state_.step_index}, {"id", id}, {"load_kg", load_kg}});
  }

  void clear_fault(const ActuatorId& id) {
    if (!state_.states.count(id)) throw Error(ErrorCode::BadId, "unknown actuator '" + id + "'");
    state_.states.at(id).fault = Fault::None;
    emit({{"rec", "clear_fault"}, {"step", state_.step_index}, {"id", id}});
  }

  /// Swaps the layout. Units that survive keep their state; new units start
  /// collapsed.
  void set_layout(Layout layout) {
    require_valid(layout);
    std::map<ActuatorId, ActuatorState> states;
    for (const auto& [id, a] : layout.actuators) {
      auto it = state_.states.find(id);
      ActuatorState st;
      st.height_cm = a.spec.min_height_cm;
      if (it != state_.states.end()) {
        st = it->second;
        st.height_cm = std::clamp(st.height_cm, a.spec.min_height_cm, a.spec.max_height_cm);
      }
      states.emplace(id, st);
    }
    state_.states = std::move(states);
    std::erase_if(state_.pending, [&](const PendingCommand& p) { return !layout.contains(p.command.actuator_id); });
    layout_ = std::move(layout);
    emit({{"rec", "layout"}, {"step", state_.step_index}, {"layout", to_json(layout_)}});
  }

  void advance(std::optional<double> dt = std::nullopt) {
    state_ = step(state_, layout_, config_, dt);
    if (!trace_) return;
    emit({{"rec", "tick"}, {"step", state_.step_index}, {"dt_s", dt.value_or(config_.dt_s)}});
    for (const auto& [id, st] : state_.states) emit(state_record(state_, id));
  }

  /// Readings when a sensor period has elapsed since the last frame, at most
  /// one frame per period.
  std::optional<std::vector<SensorReading>> poll_sensors() {
    const double period = config_.sensor_period_s();
    if (state_.t_s + 1e-9 < static_cast<double>(sensor_frames_) * period) return std::nullopt;
    sensor_frames_ = static_cast<std::uint64_t>(std::floor((state_.t_s + 1e-9) / period)) + 1;
    return sense(state_, layout_, config_);
  }

 private:
  Layout layout_;
  SimConfig config_;
  SimState state_;
  std::uint64_t sensor_frames_ = 0;
  std::ostream* trace_ = nullptr;
};

// ---------------------------------------------------------------------------
// Replay

struct ReplayResult {
  bool identical = true;
  std::size_t states_checked = 0;
  std::size_t line = 0;  // first diverging line, 1-based; 0 when identical
  std::string detail;
};

/// Re-runs the recorded events against a fresh simulation and compares
/// every state record field-for-field.
inline ReplayResult replay_trace(std::istream& in) {
  ReplayResult result;
  std::optional<Simulation> sim;
  std::string text;
  std::size_t line_no = 0;
  auto diverge = [&](std::string why) {
    result.identical = false;
    result.line = line_no;
    result.detail = std::move(why);
    return result;
  };

  while (std::getline(in, text)) {
    ++line_no;
    if (text.empty()) continue;
    nlohmann::ordered_json rec;
    try {
      rec = nlohmann::ordered_json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(ErrorCode::Invalid, "trace line " + std::to_string(line_no) + " is not JSON: " + e.what());
    }
    const std::string kind = rec.value("rec", std::string());
    if (kind == "header") {
      if (rec.value("format", std::string()) != kTraceFormat)
        throw Error(ErrorCode::Invalid, "unsupported trace format");
      Layout layout = layout_from_json(nlohmann::json::parse(rec.at("layout").dump()));
      SimConfig config = sim_config_from_json(rec.at("config"));
      SimState init = initial_state(layout, config);
      init.t_s = rec.value("t_s", 0.0);
      init.step_index = rec.value("step", std::uint64_t{0});
      for (const auto& [id, st] : rec.at("initial").items()) init.states[id] = actuator_state_from_json(st);
      sim.emplace(std::move(layout), config, std::move(init));
      continue;
    }
    if (!sim) throw Error(ErrorCode::Invalid, "trace does not start with a header");
    if (kind == "cmd") {
      sim->apply({{rec.at("id").get<std::string>(), valve_from(rec.at("supply").get<std::string>()),
                   valve_from(rec.at("release").get<std::string>())}});
    } else if (kind == "load") {
      sim->set_load(rec.at("id").get<std::string>(), rec.at("load_kg").get<double>());
    } else if (kind == "clear_fault") {
      sim->clear_fault(rec.at("id").get<std::string>());
    } else if (kind == "layout") {
      sim->set_layout(layout_from_json(nlohmann::json::parse(rec.at("layout").dump())));
    } else if (kind == "tick") {
      sim->advance(rec.at("dt_s").get<double>());
      if (sim->state().step_index != rec.at("step").get<std::uint64_t>()) return diverge("step index mismatch");
    } else if (kind == "state") {
      const auto id = rec.at("id").get<std::string>();
      if (!sim->state().states.count(id)) return diverge("unknown actuator " + id);
      if (state_record(sim->state(), id) != rec) {
        return diverge("state of " + id + " differs: recorded " + text + ", replayed " +
                       state_record(sim->state(), id).dump());
      }
      ++result.states_checked;
    }
    // summary and unknown records carry no simulation events
  }
  if (!sim) throw Error(ErrorCode::Invalid, "empty trace");
  return result;
}

}  // namespace lifttiles
