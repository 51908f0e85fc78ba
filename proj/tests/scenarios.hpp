#pragma once

// Randomized drivers shared by the unit tests and the acceptance run. Each
// returns an empty string on success and a description of the first failure
// otherwise.

#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "support.hpp"

namespace lifttiles::testing {

// 1-2 lines, 1-3 compressors each, at most three actuators, mixed
// extensions and retractions.
struct Instance {
  Layout layout;
  std::map<ActuatorId, double> current, target;
  TransitionProblem problem() const { return {layout, current, target}; }
};

inline Instance random_instance(std::mt19937_64& rng) {
  Instance in;
  const int lines = 1 + static_cast<int>(rng() % 2);
  const int units = 1 + static_cast<int>(rng() % 3);
  GridOptions o;
  o.lines = lines == 1 ? LinePolicy::Single : LinePolicy::PerColumn;
  o.compressors_per_line = 1 + static_cast<int>(rng() % 3);
  in.layout = grid(units, lines == 1 ? 1 : 2, o);
  while (in.layout.actuators.size() > 3) {
    const ActuatorId victim = in.layout.actuators.rbegin()->first;
    in.layout.actuators.erase(victim);
    for (auto& l : in.layout.supply_lines) std::erase(l.members, victim);
  }
  std::erase_if(in.layout.supply_lines, [](const SupplyLine& l) { return l.members.empty(); });
  std::uniform_real_distribution<double> h(15, 150);
  for (const auto& [id, a] : in.layout.actuators) {
    in.current[id] = rng() % 5 == 0 ? 15.0 : h(rng);
    in.target[id] = rng() % 5 == 0 ? in.current[id] : h(rng);
  }
  return in;
}

// Random valve commands, loads and fault clears on a random 3x3 layout.
inline std::string bounds_fuzz(std::uint64_t seed, int steps) {
  std::mt19937_64 rng(seed);
  GridOptions o;
  const LinePolicy policies[] = {LinePolicy::PerRow, LinePolicy::PerColumn, LinePolicy::Single};
  o.lines = policies[rng() % 3];
  o.compressors_per_line = 1 + static_cast<int>(rng() % 3);
  auto layout = grid(3, 3, o);
  for (auto& [id, a] : layout.actuators) a.spec.valve_max_flow_units = 0.3 + 0.1 * static_cast<double>(rng() % 8);
  SimConfig c;
  c.seed = seed;
  auto s = initial_state(layout, c);
  std::vector<ActuatorId> ids;
  for (const auto& [id, a] : layout.actuators) ids.push_back(id);
  for (int i = 0; i < steps; ++i) {
    std::vector<ValveCommand> batch;
    for (int k = static_cast<int>(rng() % 3); k > 0; --k)
      batch.push_back({ids[rng() % ids.size()], rng() % 2 ? Valve::Open : Valve::Closed,
                       rng() % 5 == 0 ? Valve::Open : Valve::Closed});
    if (rng() % 500 == 0) s.states.at(ids[rng() % ids.size()]).load_kg = static_cast<double>(rng() % 20);
    if (rng() % 300 == 0)
      for (auto& [id, st] : s.states) st.fault = Fault::None;
    s = apply_commands(s, batch, c);
    for (const auto& line : layout.supply_lines) {
      double sum = 0;
      for (const auto& [id, v] : allocate_flow(line, drawing_flow(s, layout, c, line), layout)) sum += v;
      if (sum > layout.line_capacity(line) + 1e-9)
        return "step " + std::to_string(i) + ": " + line.id + " draws " + std::to_string(sum);
    }
    s = step(s, layout, c);
    for (const auto& [id, st] : s.states)
      if (st.height_cm < 15.0 || st.height_cm > 150.0)
        return "step " + std::to_string(i) + ": " + id + " at " + std::to_string(st.height_cm) + " cm";
  }
  return {};
}

struct GatewayFuzzResult {
  std::string failure;
  std::size_t acks = 0;
  std::size_t errs = 0;
};

// Random and mangled frames from four connections against a 3x3 session;
// every request must get exactly one Ack or Err addressed to its sender.
inline GatewayFuzzResult gateway_fuzz(std::uint64_t seed, int frames) {
  using json = nlohmann::ordered_json;
  GatewayFuzzResult result;
  std::mt19937_64 rng(seed);
  SessionConfig cfg;
  cfg.sim.seed = 5;
  Session s(grid(3, 3), cfg);
  const std::vector<std::string> ids = {"r0c0", "r0c1", "r1c1", "r2c2", "zz", ""};
  const std::vector<std::string> kinds = {"SetTarget", "LoadLayout", "LoadPreset", "OverrideValve", "MoveActuator",
                                          "SetLoad",   "GetState",   "Plan",       "Subscribe",     "StateSnapshot",
                                          "Ack",       "Err",        "Bogus"};
  const std::vector<std::string> presets = {"Flat", "Chair", "Table", "Bed", "ArrowWall", "MeetingPartition", "x"};
  const json small_layout = json::parse(serialize_layout(grid(3, 3)));
  std::uniform_real_distribution<double> cm(-20, 200);
  auto pick = [&](const auto& v) -> const auto& { return v[rng() % v.size()]; };

  auto random_payload = [&](const std::string& kind) {
    json p = json::object();
    const std::string id = pick(ids);
    if (kind == "SetTarget" || kind == "Plan") {
      json t = json::object();
      for (int k = static_cast<int>(rng() % 3); k > 0; --k) t[pick(ids)] = cm(rng);
      p["targets"] = t;
      if (kind == "Plan") {
        if (rng() % 3 == 0) p["exact"] = true;
        if (rng() % 3 == 0) p["preset"] = pick(presets);
      }
    } else if (kind == "LoadLayout") {
      p["layout"] = rng() % 4 ? small_layout : json{{"actuators", 3}};
    } else if (kind == "LoadPreset") {
      p["name"] = pick(presets);
    } else if (kind == "OverrideValve") {
      p["actuator"] = id;
      p["supply"] = rng() % 2 ? "open" : "closed";
      p["release"] = rng() % 3 ? "closed" : (rng() % 2 ? "open" : "wide");
    } else if (kind == "MoveActuator") {
      p["actuator"] = id;
      p["pose"] = {{"x_cm", cm(rng) * 3}, {"y_cm", cm(rng) * 3}};
    } else if (kind == "SetLoad") {
      p["actuator"] = id;
      p["load_kg"] = cm(rng) / 4;
      p["clear_fault"] = rng() % 2 == 0;
    }
    return p;
  };

  auto mutate = [&](std::string line) {
    switch (rng() % 5) {
      case 0: return line.substr(0, rng() % (line.size() + 1));
      case 1:
        if (!line.empty()) line[rng() % line.size()] = static_cast<char>(rng() % 256);
        return line;
      case 2: return line + "}";
      case 3: return std::string(rng() % 40, static_cast<char>('!' + rng() % 90));
      default: return line.insert(rng() % (line.size() + 1), ",\"x\":");
    }
  };

  auto fail = [&](int i, const std::string& why, const std::string& line) {
    result.failure = "frame " + std::to_string(i) + ": " + why + ": " + line;
    return result;
  };

  for (int i = 0; i < frames; ++i) {
    const ConnectionId conn = 1 + rng() % 4;
    const std::string kind = pick(kinds);
    const std::string rid = "f" + std::to_string(i);
    std::string line = json{{"kind", kind}, {"id", rid}, {"payload", random_payload(kind)}}.dump();
    const bool mangled = rng() % 4 == 0;
    if (mangled) line = mutate(line);

    std::vector<Outgoing> out;
    Frame f;
    try {
      out = s.handle(conn, line);
      if (out.size() != 1) return fail(i, std::to_string(out.size()) + " responses", line);
      if (out[0].to != conn) return fail(i, "response to another connection", line);
      f = decode_frame(out[0].line);
    } catch (const std::exception& e) {
      return fail(i, std::string("exception ") + e.what(), line);
    }
    if (f.kind != FrameKind::Ack && f.kind != FrameKind::Err) return fail(i, "response is " + std::string(to_string(f.kind)), line);
    if (!mangled && f.id != rid) return fail(i, "response id '" + f.id + "'", line);
    (f.kind == FrameKind::Ack ? result.acks : result.errs)++;

    if (rng() % 8 == 0) {
      const auto ticks = s.tick();
      for (const auto& o : ticks)
        if (!o.line.starts_with(R"({"kind":"StateSnapshot","id":)")) return fail(i, "tick emitted", o.line);
      if (!ticks.empty() && decode_frame(pick(ticks).line).kind != FrameKind::StateSnapshot)
        return fail(i, "undecodable snapshot", line);
    }
    if (rng() % 2000 == 0) s.disconnect(conn);
    for (const auto& [id, st] : s.simulation().state().states) {
      const auto& spec = s.simulation().layout().at(id).spec;
      if (st.height_cm < spec.min_height_cm || st.height_cm > spec.max_height_cm)
        return fail(i, id + " out of bounds", line);
    }
  }
  return result;
}

// Replays a golden session transcript ("N > frame", "tick", "N < frame")
// against a fresh noiseless 2x2 session and compares every emitted line.
inline std::string replay_transcript(const std::vector<std::string>& transcript) {
  SessionConfig cfg;
  cfg.sim = noiseless();
  Session s(grid(2, 2), cfg);
  std::vector<std::string> expected, actual;
  for (const auto& entry : transcript) {
    std::vector<Outgoing> out;
    if (entry == "tick") {
      out = s.tick();
    } else if (auto gt = entry.find(" > "); gt != std::string::npos) {
      out = s.handle(std::stoull(entry.substr(0, gt)), entry.substr(gt + 3));
    } else {
      expected.push_back(entry);
      continue;
    }
    for (const auto& o : out) actual.push_back(std::to_string(o.to) + " < " + o.line);
  }
  if (expected.empty()) return "transcript has no responses";
  for (std::size_t i = 0; i < std::max(expected.size(), actual.size()); ++i) {
    const std::string e = i < expected.size() ? expected[i] : "<none>";
    const std::string a = i < actual.size() ? actual[i] : "<none>";
    if (e != a) return "response " + std::to_string(i) + " differs: expected " + e + ", got " + a;
  }
  return {};
}

inline std::vector<std::string> read_lines(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) out.push_back(line);
  return out;
}

}  // namespace lifttiles::testing
