#pragma once

// Wire protocol and the authoritative control session behind it.
//
// Frames are single-line UTF-8 JSON objects, keys in the order
//   {"kind":..., "id":..., "seq":... (StateSnapshot only), "payload":{...}}
// Requests: SetTarget, LoadLayout, LoadPreset, OverrideValve, MoveActuator,
// SetLoad, GetState, Plan, Subscribe. Every request gets exactly one Ack or
// Err carrying the request's id. StateSnapshot frames are pushed to
// subscribers, one per sensor frame, with a per-subscription sequence number
// that starts at 1.

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"
#include "lifttiles/controller.hpp"
#include "lifttiles/planner.hpp"
#include "lifttiles/shapes.hpp"
#include "lifttiles/simulation.hpp"

namespace lifttiles {

enum class FrameKind {
  SetTarget,
  LoadLayout,
  LoadPreset,
  OverrideValve,
  MoveActuator,
  SetLoad,
  GetState,
  Plan,
  Subscribe,
  StateSnapshot,
  Ack,
  Err,
};

inline constexpr FrameKind kAllFrameKinds[] = {
    FrameKind::SetTarget, FrameKind::LoadLayout, FrameKind::LoadPreset, FrameKind::OverrideValve,
    FrameKind::MoveActuator, FrameKind::SetLoad, FrameKind::GetState, FrameKind::Plan,
    FrameKind::Subscribe, FrameKind::StateSnapshot, FrameKind::Ack, FrameKind::Err};

inline std::string_view to_string(FrameKind k) {
  switch (k) {
    case FrameKind::SetTarget: return "SetTarget";
    case FrameKind::LoadLayout: return "LoadLayout";
    case FrameKind::LoadPreset: return "LoadPreset";
    case FrameKind::OverrideValve: return "OverrideValve";
    case FrameKind::MoveActuator: return "MoveActuator";
    case FrameKind::SetLoad: return "SetLoad";
    case FrameKind::GetState: return "GetState";
    case FrameKind::Plan: return "Plan";
    case FrameKind::Subscribe: return "Subscribe";
    case FrameKind::StateSnapshot: return "StateSnapshot";
    case FrameKind::Ack: return "Ack";
    case FrameKind::Err: return "Err";
  }
  return "Err";
}

inline std::optional<FrameKind> frame_kind_from(std::string_view s) {
  for (auto k : kAllFrameKinds)
    if (to_string(k) == s) return k;
  return std::nullopt;
}

inline bool is_request(FrameKind k) {
  return k != FrameKind::StateSnapshot && k != FrameKind::Ack && k != FrameKind::Err;
}

struct Frame {
  FrameKind kind = FrameKind::Ack;
  std::string id;
  std::optional<std::uint64_t> seq;
  nlohmann::ordered_json payload = nlohmann::ordered_json::object();

  friend bool operator==(const Frame&, const Frame&) = default;
};

/// One line, no trailing newline. Invalid UTF-8 in strings is replaced
/// rather than emitted.
inline std::string encode_frame(const Frame& f) {
  nlohmann::ordered_json j;
  j["kind"] = to_string(f.kind);
  j["id"] = f.id;
  if (f.seq) j["seq"] = *f.seq;
  j["payload"] = f.payload;
  return j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
}

/// Throws Error(BadFrame) with a parse diagnostic.
inline Frame decode_frame(std::string_view line) {
  if (!line.empty() && line.back() == '\n') line.remove_suffix(1);
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(line.begin(), line.end());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::BadFrame, std::string("frame is not JSON: ") + e.what());
  }
  if (!j.is_object()) throw Error(ErrorCode::BadFrame, "frame must be a JSON object");
  if (!j.contains("kind") || !j["kind"].is_string()) throw Error(ErrorCode::BadFrame, "frame lacks a string 'kind'");
  auto kind = frame_kind_from(j["kind"].get<std::string>());
  if (!kind) throw Error(ErrorCode::BadFrame, "unknown frame kind '" + j["kind"].get<std::string>() + "'");
  Frame f;
  f.kind = *kind;
  if (!j.contains("id") || !j["id"].is_string()) throw Error(ErrorCode::BadFrame, "frame lacks a string 'id'");
  f.id = j["id"].get<std::string>();
  if (j.contains("seq")) {
    if (!j["seq"].is_number_unsigned()) throw Error(ErrorCode::BadFrame, "'seq' must be a non-negative integer");
    f.seq = j["seq"].get<std::uint64_t>();
  }
  if (j.contains("payload")) {
    if (!j["payload"].is_object()) throw Error(ErrorCode::BadFrame, "'payload' must be an object");
    f.payload = j["payload"];
  }
  return f;
}

/// Best-effort correlation id from a line that failed to decode.
inline std::string salvage_id(std::string_view line) {
  try {
    auto j = nlohmann::ordered_json::parse(line.begin(), line.end());
    if (j.is_object() && j.contains("id") && j["id"].is_string()) return j["id"].get<std::string>();
  } catch (const nlohmann::json::exception&) {
  }
  return "";
}

inline Frame ack(const std::string& id, FrameKind request, nlohmann::ordered_json body = nlohmann::ordered_json::object()) {
  Frame f{FrameKind::Ack, id, std::nullopt, nlohmann::ordered_json::object()};
  f.payload["request"] = to_string(request);
  for (auto& [k, v] : body.items()) f.payload[k] = v;
  return f;
}

inline Frame err(const std::string& id, ErrorCode code, const std::string& message) {
  return {FrameKind::Err, id, std::nullopt, {{"code", to_string(code)}, {"message", message}}};
}

// ---------------------------------------------------------------------------

struct SessionConfig {
  SimConfig sim;
  ControlConfig control;
  double exact_resolution_s = 0.25;
};

using ConnectionId = std::uint64_t;

struct Outgoing {
  ConnectionId to;
  std::string line;
};

/// The single authoritative session: layout, simulation, active targets and
/// subscriptions. Not thread-safe; the service calls it from its sim loop
/// only.
class Session {
 public:
  Session(Layout layout, SessionConfig config) : config_(config), sim_(std::move(layout), config.sim) {
    require_valid(sim_.layout());
    require_valid(config_.control);
  }

  const Simulation& simulation() const { return sim_; }
  const TargetAssignment& targets() const { return targets_; }
  const std::set<ActuatorId>& overrides() const { return overrides_; }
  void attach_trace(std::ostream* out) { sim_.attach_trace(out); }

  /// Exactly one Ack or Err for `from`.
  std::vector<Outgoing> handle(ConnectionId from, std::string_view line) {
    Frame request;
    try {
      request = decode_frame(line);
    } catch (const Error& e) {
      return {{from, encode_frame(err(salvage_id(line), e.code(), e.what()))}};
    }
    Frame response;
    try {
      response = dispatch(from, request);
    } catch (const Error& e) {
      response = err(request.id, e.code(), e.what());
    } catch (const nlohmann::json::exception& e) {
      response = err(request.id, ErrorCode::BadFrame, std::string("bad payload: ") + e.what());
    } catch (const std::exception& e) {
      response = err(request.id, ErrorCode::Invalid, e.what());
    }
    return {{from, encode_frame(response)}};
  }

  /// One sim tick: sense, control, publish, step.
  std::vector<Outgoing> tick() {
    std::vector<Outgoing> out;
    if (auto readings = sim_.poll_sensors()) {
      for (const auto& r : *readings) {
        latest_[r.actuator_id] = r;
        tracker_.observe(r);
      }
      TargetAssignment controlled;
      for (const auto& [id, h] : targets_.targets)
        if (!overrides_.count(id)) controlled.targets.emplace(id, h);
      ControlOutput control = control_step(latest_, controlled, config_.control, sim_.now(), drives_);
      drives_ = std::move(control.drives);
      stale_ = std::set<ActuatorId>(control.stale.begin(), control.stale.end());
      for (const auto& [id, d] : drives_)
        if (d != Drive::Hold) tracker_.interrupt(id);
      std::vector<ValveCommand> changed;
      for (const auto& c : control.commands) {
        const ActuatorState& st = sim_.state().states.at(c.actuator_id);
        if (st.supply_valve != c.supply || st.release_valve != c.release) changed.push_back(c);
      }
      if (!changed.empty()) sim_.apply(changed);

      if (!subscriptions_.empty()) {
        // Serialize the body once; only id and seq differ per subscriber.
        const std::string body = snapshot_body().dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
        for (auto& sub : subscriptions_) {
          Frame head{FrameKind::StateSnapshot, sub.request_id, ++sub.seq, nullptr};
          std::string line = encode_frame(head);
          line.replace(line.size() - 5, 4, body);
          out.push_back({sub.connection, std::move(line)});
        }
      }
    }
    sim_.advance();
    return out;
  }

  void disconnect(ConnectionId c) {
    std::erase_if(subscriptions_, [&](const Subscription& s) { return s.connection == c; });
  }

  bool settled() const {
    if (targets_.targets.empty()) return true;
    for (const auto& [id, h] : targets_.targets) {
      if (overrides_.count(id)) continue;
      if (!tracker_.settled(id)) return false;
      auto d = drives_.find(id);
      if (d != drives_.end() && d->second != Drive::Hold) return false;
    }
    return true;
  }

  nlohmann::ordered_json snapshot_body() const {
    nlohmann::ordered_json units = nlohmann::ordered_json::array();
    for (const auto& [id, st] : sim_.state().states) {
      nlohmann::ordered_json u;
      u["id"] = id;
      u["height_cm"] = st.height_cm;
      auto r = latest_.find(id);
      u["measured_cm"] = r == latest_.end() ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(r->second.measured_height_cm);
      auto t = targets_.targets.find(id);
      u["target_cm"] = t == targets_.targets.end() ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(t->second);
      u["supply"] = to_string(st.supply_valve);
      u["release"] = to_string(st.release_valve);
      u["load_kg"] = st.load_kg;
      u["fault"] = to_string(st.fault);
      u["mode"] = overrides_.count(id) ? "override" : (t != targets_.targets.end() ? "control" : "idle");
      u["stale"] = stale_.count(id) != 0;
      units.push_back(std::move(u));
    }
    return {{"t_s", sim_.now()}, {"step", sim_.state().step_index}, {"settled", settled()}, {"actuators", units}};
  }

 private:
  struct Subscription {
    ConnectionId connection;
    std::string request_id;
    std::uint64_t seq = 0;
  };

  static const nlohmann::ordered_json& field(const Frame& f, const char* name) {
    if (!f.payload.contains(name)) throw Error(ErrorCode::BadFrame, std::string("payload lacks '") + name + "'");
    return f.payload.at(name);
  }

  static std::string actuator_field(const Frame& f) {
    const auto& v = field(f, "actuator");
    if (!v.is_string()) throw Error(ErrorCode::BadFrame, "'actuator' must be a string");
    return v.get<std::string>();
  }

  static std::map<ActuatorId, double> heights_field(const nlohmann::ordered_json& v, const char* name) {
    if (!v.is_object()) throw Error(ErrorCode::BadFrame, std::string("'") + name + "' must be an object of id -> cm");
    std::map<ActuatorId, double> out;
    for (const auto& [id, cm] : v.items()) {
      if (!cm.is_number()) throw Error(ErrorCode::BadFrame, std::string("'") + name + "' values must be numbers");
      out[id] = cm.get<double>();
    }
    return out;
  }

  void require_known(const ActuatorId& id) const {
    if (!sim_.layout().contains(id)) throw Error(ErrorCode::BadId, "unknown actuator '" + id + "'");
  }

  void install_targets(const std::map<ActuatorId, double>& update) {
    TargetAssignment checked{update};
    for (const auto& [id, h] : update) require_known(id);
    require_valid(checked, sim_.layout());
    for (const auto& [id, h] : update) {
      targets_.targets[id] = h;
      overrides_.erase(id);
      drives_.erase(id);
    }
    tracker_ = SettleTracker(targets_, config_.control);
  }

  Frame dispatch(ConnectionId from, const Frame& f) {
    switch (f.kind) {
      case FrameKind::SetTarget: {
        auto update = heights_field(field(f, "targets"), "targets");
        install_targets(update);
        return ack(f.id, f.kind, {{"accepted", update.size()}});
      }
      case FrameKind::LoadPreset: {
        const auto& name = field(f, "name");
        if (!name.is_string()) throw Error(ErrorCode::BadFrame, "'name' must be a string");
        PresetOptions opts;
        if (f.payload.contains("height_cm")) opts.flat_height_cm = f.payload.at("height_cm").get<double>();
        Heightmap h = preset(preset_from(name.get<std::string>()), sim_.layout(), opts);
        install_targets(h.entries);
        nlohmann::ordered_json targets = nlohmann::ordered_json::object();
        for (const auto& [id, cm] : h.entries) targets[id] = cm;
        return ack(f.id, f.kind, {{"name", h.name}, {"targets", targets}});
      }
      case FrameKind::LoadLayout: {
        const auto& doc = field(f, "layout");
        Layout layout = layout_from_json(nlohmann::json::parse(doc.dump()));
        require_valid(layout);
        sim_.set_layout(std::move(layout));
        std::erase_if(targets_.targets, [&](const auto& kv) { return !sim_.layout().contains(kv.first); });
        std::erase_if(overrides_, [&](const ActuatorId& id) { return !sim_.layout().contains(id); });
        std::erase_if(latest_, [&](const auto& kv) { return !sim_.layout().contains(kv.first); });
        drives_.clear();
        tracker_ = SettleTracker(targets_, config_.control);
        return ack(f.id, f.kind, {{"actuators", sim_.layout().actuators.size()}});
      }
      case FrameKind::OverrideValve: {
        const ActuatorId id = actuator_field(f);
        require_known(id);
        const Valve supply = valve_from(f.payload.value("supply", std::string("closed")));
        const Valve release = valve_from(f.payload.value("release", std::string("closed")));
        if (sim_.state().states.at(id).fault == Fault::Buckled)
          throw Error(ErrorCode::Invalid, id + " is buckled; clear the fault first");
        overrides_.insert(id);
        drives_.erase(id);
        sim_.apply({{id, supply, release}});
        return ack(f.id, f.kind, {{"actuator", id}});
      }
      case FrameKind::MoveActuator: {
        const ActuatorId id = actuator_field(f);
        require_known(id);
        Pose pose = pose_from_json(nlohmann::json::parse(field(f, "pose").dump()));
        sim_.set_layout(move_actuator(sim_.layout(), id, pose));
        return ack(f.id, f.kind, {{"actuator", id}});
      }
      case FrameKind::SetLoad: {
        const ActuatorId id = actuator_field(f);
        require_known(id);
        const auto& load = field(f, "load_kg");
        if (!load.is_number()) throw Error(ErrorCode::BadFrame, "'load_kg' must be a number");
        sim_.set_load(id, load.get<double>());
        if (f.payload.value("clear_fault", false) && sim_.state().states.at(id).fault != Fault::None) {
          if (overloaded(sim_.state(), sim_.layout(), sim_.config(), id))
            throw Error(ErrorCode::OutOfRange, id + " is still overloaded; fault kept");
          sim_.clear_fault(id);
        }
        return ack(f.id, f.kind, {{"actuator", id}, {"load_kg", sim_.state().states.at(id).load_kg}});
      }
      case FrameKind::GetState:
        return ack(f.id, f.kind, snapshot_body());
      case FrameKind::Plan:
        return plan(f);
      case FrameKind::Subscribe: {
        for (const auto& s : subscriptions_)
          if (s.connection == from && s.request_id == f.id)
            throw Error(ErrorCode::Invalid, "already subscribed under id '" + f.id + "'");
        if (std::count_if(subscriptions_.begin(), subscriptions_.end(),
                          [&](const Subscription& s) { return s.connection == from; }) >= kMaxSubscriptions)
          throw Error(ErrorCode::TooLarge, "at most " + std::to_string(kMaxSubscriptions) + " subscriptions per connection");
        subscriptions_.push_back({from, f.id, 0});
        return ack(f.id, f.kind, {{"subscription", f.id}});
      }
      case FrameKind::StateSnapshot:
      case FrameKind::Ack:
      case FrameKind::Err:
        break;
    }
    throw Error(ErrorCode::BadFrame, std::string(to_string(f.kind)) + " is sent by the service, not accepted by it");
  }

  Frame plan(const Frame& f) {
    const Layout& layout = sim_.layout();
    std::map<ActuatorId, double> current;
    if (f.payload.contains("from")) {
      current = heights_field(f.payload.at("from"), "from");
      for (const auto& [id, h] : current) require_known(id);
    } else {
      for (const auto& [id, a] : layout.actuators) {
        auto r = latest_.find(id);
        if (r == latest_.end() || sim_.now() - r->second.t_s > config_.control.stale_reading_timeout_s + 1e-9)
          throw Error(ErrorCode::Stale, "no fresh height reading for " + id);
        current[id] = r->second.measured_height_cm;
      }
    }
    for (const auto& [id, a] : layout.actuators) {
      if (!current.count(id)) current[id] = sim_.state().states.at(id).height_cm;
    }

    std::map<ActuatorId, double> target = current;
    if (f.payload.contains("preset")) {
      const auto& name = f.payload.at("preset");
      if (!name.is_string()) throw Error(ErrorCode::BadFrame, "'preset' must be a string");
      target = overlay(target, preset(preset_from(name.get<std::string>()), layout));
    }
    if (f.payload.contains("targets")) {
      auto update = heights_field(f.payload.at("targets"), "targets");
      for (const auto& [id, h] : update) require_known(id);
      require_valid(TargetAssignment{update}, layout);
      for (const auto& [id, h] : update) target[id] = h;
    }

    TransitionProblem problem{layout, current, target};
    const bool exact = f.payload.value("exact", false);
    Schedule s = exact ? plan_exact(problem, config_.exact_resolution_s) : plan_greedy(problem);
    return ack(f.id, f.kind,
               {{"planner", exact ? "exact" : "greedy"},
                {"lower_bound_s", lower_bound_makespan(problem)},
                {"schedule", to_json(s)}});
  }

  SessionConfig config_;
  Simulation sim_;
  TargetAssignment targets_;
  std::set<ActuatorId> overrides_;
  DriveMemory drives_;
  std::map<ActuatorId, SensorReading> latest_;
  std::set<ActuatorId> stale_;
  SettleTracker tracker_{{}, {}};
  std::vector<Subscription> subscriptions_;
  static constexpr int kMaxSubscriptions = 16;
};

}  // namespace lifttiles
