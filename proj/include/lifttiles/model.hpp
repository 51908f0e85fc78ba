#pragma once

// Domain model shared by every other lifttiles header: actuator parameters,
// poses, the pneumatic topology (compressors and supply lines) and the
// layout that binds them together.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "lifttiles/error.hpp"

namespace lifttiles {

using ActuatorId = std::string;

inline constexpr double kDefaultMinHeightCm = 15.0;
inline constexpr double kDefaultMaxHeightCm = 150.0;
inline constexpr double kFullExtendSeconds = 16.0;
inline constexpr double kFullRetractSeconds = 4.0;
inline constexpr double kStandardGravity = 9.80665;

/// Static parameters of one inflatable module. Rates are calibrated so a
/// full 15 -> 150 cm stroke takes 16 s on a dedicated compressor and 4 s to
/// vent.
struct ActuatorSpec {
  int footprint_cm = 30;
  double min_height_cm = kDefaultMinHeightCm;
  double max_height_cm = kDefaultMaxHeightCm;
  double max_extend_rate_cm_s =
      (kDefaultMaxHeightCm - kDefaultMinHeightCm) / kFullExtendSeconds;
  double retract_rate_cm_s =
      (kDefaultMaxHeightCm - kDefaultMinHeightCm) / kFullRetractSeconds;
  int spring_count = 2;
  double spring_force_kgf = 0.8;
  double rated_load_kg = 10.0;
  double valve_max_flow_units = 1.0;
  double tube_diameter_cm = 20.0;
  // Per-unit extension speed variation; two nominally identical tubes do not
  // extend at quite the same rate.
  double rate_multiplier = 1.0;

  double extend_rate() const { return max_extend_rate_cm_s * rate_multiplier; }
  double stroke_cm() const { return max_height_cm - min_height_cm; }

  friend bool operator==(const ActuatorSpec&, const ActuatorSpec&) = default;
};

enum class Orientation { FloorVertical, WallHorizontal };

struct GridIndex {
  int row = 0;
  int col = 0;
  friend auto operator<=>(const GridIndex&, const GridIndex&) = default;
};

struct Pose {
  double x_cm = 0.0;
  double y_cm = 0.0;
  Orientation orientation = Orientation::FloorVertical;
  std::optional<GridIndex> grid_index;

  friend bool operator==(const Pose&, const Pose&) = default;
};

struct Compressor {
  std::string id;
  double pressure_kpa = 12.0;
  double flow_l_min = 30.0;
  double rate_units = 1.0;

  friend bool operator==(const Compressor&, const Compressor&) = default;
};

struct SupplyLine {
  std::string id;
  std::vector<std::string> compressor_ids;
  // T-fitting chain order.
  std::vector<ActuatorId> members;

  friend bool operator==(const SupplyLine&, const SupplyLine&) = default;
};

struct Actuator {
  ActuatorSpec spec;
  Pose pose;
  friend bool operator==(const Actuator&, const Actuator&) = default;
};

enum class Valve { Closed, Open };
enum class Fault { None, Buckled };

struct ActuatorState {
  double height_cm = kDefaultMinHeightCm;
  Valve supply_valve = Valve::Closed;
  Valve release_valve = Valve::Closed;
  double load_kg = 0.0;
  Fault fault = Fault::None;

  friend bool operator==(const ActuatorState&, const ActuatorState&) = default;
};

/// One valve instruction for one actuator. The controller never emits a
/// command with both valves open; manual overrides may.
struct ValveCommand {
  ActuatorId actuator_id;
  Valve supply = Valve::Closed;
  Valve release = Valve::Closed;

  friend bool operator==(const ValveCommand&, const ValveCommand&) = default;
};

struct Layout {
  std::map<ActuatorId, Actuator> actuators;
  std::vector<SupplyLine> supply_lines;
  std::map<std::string, Compressor> compressors;

  friend bool operator==(const Layout&, const Layout&) = default;

  bool contains(const ActuatorId& id) const { return actuators.count(id) != 0; }

  const Actuator& at(const ActuatorId& id) const {
    auto it = actuators.find(id);
    if (it == actuators.end()) throw Error(ErrorCode::BadId, "unknown actuator '" + id + "'");
    return it->second;
  }

  const SupplyLine* line_of(const ActuatorId& id) const {
    for (const auto& line : supply_lines) {
      if (std::find(line.members.begin(), line.members.end(), id) != line.members.end()) {
        return &line;
      }
    }
    return nullptr;
  }

  /// Sum of the rate units of the line's compressors.
  double line_capacity(const SupplyLine& line) const {
    double capacity = 0.0;
    for (const auto& cid : line.compressor_ids) {
      auto it = compressors.find(cid);
      if (it != compressors.end()) capacity += it->second.rate_units;
    }
    return capacity;
  }

  /// Highest compressor pressure feeding the actuator's line, 0 if orphaned.
  double supply_pressure_kpa(const ActuatorId& id) const {
    const SupplyLine* line = line_of(id);
    if (line == nullptr) return 0.0;
    double pressure = 0.0;
    for (const auto& cid : line->compressor_ids) {
      auto it = compressors.find(cid);
      if (it != compressors.end()) pressure = std::max(pressure, it->second.pressure_kpa);
    }
    return pressure;
  }

  /// (rows, cols) spanned by grid indices; (0, 0) when no unit carries one.
  std::pair<int, int> grid_extent() const {
    int rows = 0;
    int cols = 0;
    for (const auto& [id, a] : actuators) {
      if (a.pose.grid_index) {
        rows = std::max(rows, a.pose.grid_index->row + 1);
        cols = std::max(cols, a.pose.grid_index->col + 1);
      }
    }
    return {rows, cols};
  }

  std::optional<ActuatorId> at_grid(GridIndex index) const {
    for (const auto& [id, a] : actuators) {
      if (a.pose.grid_index && *a.pose.grid_index == index) return id;
    }
    return std::nullopt;
  }
};

// ---------------------------------------------------------------------------
// Validation

struct Violation {
  enum class Kind {
    InvalidSpec,
    InvalidCompressor,
    Overlap,
    Orphan,
    MultipleLines,
    UnknownActuator,
    UnknownCompressor,
    EmptyLine,
    DuplicateGridIndex,
  };
  Kind kind;
  std::vector<std::string> ids;
  std::string detail;

  friend bool operator==(const Violation&, const Violation&) = default;
};

inline std::string_view to_string(Violation::Kind kind) {
  switch (kind) {
    case Violation::Kind::InvalidSpec: return "InvalidSpec";
    case Violation::Kind::InvalidCompressor: return "InvalidCompressor";
    case Violation::Kind::Overlap: return "Overlap";
    case Violation::Kind::Orphan: return "Orphan";
    case Violation::Kind::MultipleLines: return "MultipleLines";
    case Violation::Kind::UnknownActuator: return "UnknownActuator";
    case Violation::Kind::UnknownCompressor: return "UnknownCompressor";
    case Violation::Kind::EmptyLine: return "EmptyLine";
    case Violation::Kind::DuplicateGridIndex: return "DuplicateGridIndex";
  }
  return "Unknown";
}

inline std::optional<std::string> spec_problem(const ActuatorSpec& s) {
  if (s.footprint_cm != 10 && s.footprint_cm != 20 && s.footprint_cm != 30)
    return "footprint must be 10, 20 or 30 cm";
  if (!(s.min_height_cm > 0.0 && s.min_height_cm < s.max_height_cm))
    return "requires 0 < min_height_cm < max_height_cm";
  if (!(s.max_extend_rate_cm_s > 0.0) || !(s.retract_rate_cm_s > 0.0))
    return "rates must be positive";
  if (!(s.rate_multiplier > 0.0)) return "rate_multiplier must be positive";
  if (!(s.valve_max_flow_units > 0.0)) return "valve_max_flow_units must be positive";
  if (s.spring_count < 0 || s.spring_force_kgf < 0.0 || s.rated_load_kg < 0.0)
    return "spring and load parameters must be non-negative";
  return std::nullopt;
}

/// True when the two footprint squares share interior area. Units mounted on
/// different surfaces (floor vs wall) never collide.
inline bool footprints_overlap(const Actuator& a, const Actuator& b) {
  if (a.pose.orientation != b.pose.orientation) return false;
  constexpr double eps = 1e-9;
  const double reach = 0.5 * (a.spec.footprint_cm + b.spec.footprint_cm);
  return std::abs(a.pose.x_cm - b.pose.x_cm) < reach - eps &&
         std::abs(a.pose.y_cm - b.pose.y_cm) < reach - eps;
}

inline std::vector<Violation> validate_layout(const Layout& layout) {
  using K = Violation::Kind;
  std::vector<Violation> out;

  for (const auto& [id, a] : layout.actuators) {
    if (auto why = spec_problem(a.spec)) out.push_back({K::InvalidSpec, {id}, *why});
  }
  for (const auto& [cid, c] : layout.compressors) {
    if (!(c.rate_units > 0.0)) out.push_back({K::InvalidCompressor, {cid}, "rate_units must be positive"});
  }

  for (auto i = layout.actuators.begin(); i != layout.actuators.end(); ++i) {
    for (auto j = std::next(i); j != layout.actuators.end(); ++j) {
      if (footprints_overlap(i->second, j->second)) {
        out.push_back({K::Overlap, {i->first, j->first}, i->first + " overlaps " + j->first});
      }
    }
  }

  std::map<GridIndex, ActuatorId> cells;
  for (const auto& [id, a] : layout.actuators) {
    if (!a.pose.grid_index) continue;
    auto [it, fresh] = cells.emplace(*a.pose.grid_index, id);
    if (!fresh) out.push_back({K::DuplicateGridIndex, {it->second, id}, "grid cell used twice"});
  }

  std::map<ActuatorId, int> membership;
  for (const auto& line : layout.supply_lines) {
    if (line.members.empty()) out.push_back({K::EmptyLine, {line.id}, "supply line has no members"});
    for (const auto& cid : line.compressor_ids) {
      if (!layout.compressors.count(cid))
        out.push_back({K::UnknownCompressor, {line.id, cid}, "line references unknown compressor"});
    }
    for (const auto& m : line.members) {
      if (!layout.contains(m)) {
        out.push_back({K::UnknownActuator, {line.id, m}, "line references unknown actuator"});
      } else {
        ++membership[m];
      }
    }
  }
  for (const auto& [id, a] : layout.actuators) {
    auto it = membership.find(id);
    if (it == membership.end()) {
      out.push_back({K::Orphan, {id}, id + " is on no supply line"});
    } else if (it->second > 1) {
      out.push_back({K::MultipleLines, {id}, id + " is on more than one supply line"});
    }
  }
  return out;
}

inline std::string describe(const std::vector<Violation>& violations) {
  std::ostringstream os;
  for (std::size_t i = 0; i < violations.size(); ++i) {
    if (i) os << "; ";
    os << to_string(violations[i].kind) << ": " << violations[i].detail;
  }
  return os.str();
}

/// Throws with the code of the first violation (Overlap wins over the rest).
inline void require_valid(const Layout& layout) {
  auto violations = validate_layout(layout);
  if (violations.empty()) return;
  bool overlap = std::any_of(violations.begin(), violations.end(),
                             [](const Violation& v) { return v.kind == Violation::Kind::Overlap; });
  throw Error(overlap ? ErrorCode::Overlap : ErrorCode::Invalid, describe(violations));
}

// ---------------------------------------------------------------------------
// Construction

enum class LinePolicy { PerRow, PerColumn, Single };

struct GridOptions {
  LinePolicy lines = LinePolicy::PerRow;
  Orientation orientation = Orientation::FloorVertical;
  int compressors_per_line = 1;
  Compressor compressor_template{};
};

inline ActuatorId grid_id(int row, int col) {
  return "r" + std::to_string(row) + "c" + std::to_string(col);
}

inline Layout build_grid_layout(int rows, int cols, const ActuatorSpec& spec, double pitch_cm,
                                const GridOptions& options = {}) {
  if (rows < 1 || cols < 1) throw Error(ErrorCode::Invalid, "grid needs at least one row and column");
  if (auto why = spec_problem(spec)) throw Error(ErrorCode::Invalid, *why);
  if (options.compressors_per_line < 1) throw Error(ErrorCode::Invalid, "each line needs a compressor");

  Layout layout;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      Pose pose;
      pose.x_cm = c * pitch_cm;
      // Walls are y-up with row 0 at the top.
      pose.y_cm = options.orientation == Orientation::WallHorizontal ? (rows - 1 - r) * pitch_cm
                                                                     : r * pitch_cm;
      pose.orientation = options.orientation;
      pose.grid_index = GridIndex{r, c};
      layout.actuators.emplace(grid_id(r, c), Actuator{spec, pose});
    }
  }

  auto add_line = [&](std::vector<ActuatorId> members) {
    SupplyLine line;
    line.id = "line" + std::to_string(layout.supply_lines.size());
    for (int k = 0; k < options.compressors_per_line; ++k) {
      Compressor comp = options.compressor_template;
      comp.id = line.id + ".comp" + std::to_string(k);
      line.compressor_ids.push_back(comp.id);
      layout.compressors.emplace(comp.id, comp);
    }
    line.members = std::move(members);
    layout.supply_lines.push_back(std::move(line));
  };

  switch (options.lines) {
    case LinePolicy::PerRow:
      for (int r = 0; r < rows; ++r) {
        std::vector<ActuatorId> m;
        for (int c = 0; c < cols; ++c) m.push_back(grid_id(r, c));
        add_line(std::move(m));
      }
      break;
    case LinePolicy::PerColumn:
      for (int c = 0; c < cols; ++c) {
        std::vector<ActuatorId> m;
        for (int r = 0; r < rows; ++r) m.push_back(grid_id(r, c));
        add_line(std::move(m));
      }
      break;
    case LinePolicy::Single: {
      std::vector<ActuatorId> m;
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) m.push_back(grid_id(r, c));
      add_line(std::move(m));
      break;
    }
  }

  if (pitch_cm < spec.footprint_cm) {
    for (const auto& v : validate_layout(layout)) {
      if (v.kind == Violation::Kind::Overlap)
        throw Error(ErrorCode::Overlap, v.detail + " (pitch " + std::to_string(pitch_cm) +
                                            " cm < footprint " + std::to_string(spec.footprint_cm) + " cm)");
    }
  }
  return layout;
}

/// Returns a copy with `id` placed at `pose`. Supply-line membership is
/// untouched. The pose is stored as given, so a pose without a grid index
/// detaches the unit from the grid.
inline Layout move_actuator(const Layout& layout, const ActuatorId& id, const Pose& pose) {
  if (!layout.contains(id)) throw Error(ErrorCode::BadId, "unknown actuator '" + id + "'");
  Layout moved = layout;
  auto& target = moved.actuators.at(id);
  target.pose = pose;
  for (const auto& [other_id, other] : moved.actuators) {
    if (other_id != id && footprints_overlap(target, other))
      throw Error(ErrorCode::Overlap, id + " would overlap " + other_id);
    if (other_id != id && pose.grid_index && other.pose.grid_index == pose.grid_index)
      throw Error(ErrorCode::Overlap, id + " would share grid cell with " + other_id);
  }
  return moved;
}

/// Ids of actuators whose footprints touch `id` edge-on (gap at most
/// `gap_cm`) on the same mounting surface. At most four are reported.
inline std::vector<ActuatorId> edge_neighbors(const Layout& layout, const ActuatorId& id, double gap_cm) {
  const Actuator& self = layout.at(id);
  std::vector<std::pair<double, ActuatorId>> found;
  for (const auto& [other_id, other] : layout.actuators) {
    if (other_id == id || other.pose.orientation != self.pose.orientation) continue;
    const double reach = 0.5 * (self.spec.footprint_cm + other.spec.footprint_cm);
    const double dx = std::abs(self.pose.x_cm - other.pose.x_cm);
    const double dy = std::abs(self.pose.y_cm - other.pose.y_cm);
    const bool side_by_side_x = dx <= reach + gap_cm && dx >= reach - 1e-9 && dy < reach - 1e-9;
    const bool side_by_side_y = dy <= reach + gap_cm && dy >= reach - 1e-9 && dx < reach - 1e-9;
    if (side_by_side_x || side_by_side_y) found.emplace_back(dx + dy, other_id);
  }
  std::sort(found.begin(), found.end());
  std::vector<ActuatorId> out;
  for (std::size_t i = 0; i < found.size() && i < 4; ++i) out.push_back(found[i].second);
  return out;
}

// ---------------------------------------------------------------------------
// JSON encoding. `nlohmann::json` keeps object keys sorted, which gives the
// canonical form for free.

inline std::string_view to_string(Orientation o) {
  return o == Orientation::FloorVertical ? "floor_vertical" : "wall_horizontal";
}
inline std::string_view to_string(Valve v) { return v == Valve::Open ? "open" : "closed"; }
inline std::string_view to_string(Fault f) { return f == Fault::Buckled ? "buckled" : "none"; }

inline Orientation orientation_from(const std::string& s) {
  if (s == "floor_vertical") return Orientation::FloorVertical;
  if (s == "wall_horizontal") return Orientation::WallHorizontal;
  throw Error(ErrorCode::Invalid, "unknown orientation '" + s + "'");
}
inline Valve valve_from(const std::string& s) {
  if (s == "open") return Valve::Open;
  if (s == "closed") return Valve::Closed;
  throw Error(ErrorCode::Invalid, "valve must be 'open' or 'closed', got '" + s + "'");
}
inline Fault fault_from(const std::string& s) {
  if (s == "none") return Fault::None;
  if (s == "buckled") return Fault::Buckled;
  throw Error(ErrorCode::Invalid, "unknown fault '" + s + "'");
}

inline nlohmann::json to_json(const ActuatorSpec& s) {
  return {{"footprint_cm", s.footprint_cm},
          {"min_height_cm", s.min_height_cm},
          {"max_height_cm", s.max_height_cm},
          {"max_extend_rate_cm_s", s.max_extend_rate_cm_s},
          {"retract_rate_cm_s", s.retract_rate_cm_s},
          {"spring_count", s.spring_count},
          {"spring_force_kgf", s.spring_force_kgf},
          {"rated_load_kg", s.rated_load_kg},
          {"valve_max_flow_units", s.valve_max_flow_units},
          {"tube_diameter_cm", s.tube_diameter_cm},
          {"rate_multiplier", s.rate_multiplier}};
}

inline ActuatorSpec spec_from_json(const nlohmann::json& j) {
  ActuatorSpec s;
  s.footprint_cm = j.value("footprint_cm", s.footprint_cm);
  s.min_height_cm = j.value("min_height_cm", s.min_height_cm);
  s.max_height_cm = j.value("max_height_cm", s.max_height_cm);
  s.max_extend_rate_cm_s = j.value("max_extend_rate_cm_s", s.max_extend_rate_cm_s);
  s.retract_rate_cm_s = j.value("retract_rate_cm_s", s.retract_rate_cm_s);
  s.spring_count = j.value("spring_count", s.spring_count);
  s.spring_force_kgf = j.value("spring_force_kgf", s.spring_force_kgf);
  s.rated_load_kg = j.value("rated_load_kg", s.rated_load_kg);
  s.valve_max_flow_units = j.value("valve_max_flow_units", s.valve_max_flow_units);
  s.tube_diameter_cm = j.value("tube_diameter_cm", s.tube_diameter_cm);
  s.rate_multiplier = j.value("rate_multiplier", s.rate_multiplier);
  return s;
}

inline nlohmann::json to_json(const Pose& p) {
  nlohmann::json j = {{"x_cm", p.x_cm}, {"y_cm", p.y_cm}, {"orientation", to_string(p.orientation)}};
  if (p.grid_index) j["grid_index"] = {p.grid_index->row, p.grid_index->col};
  return j;
}

inline Pose pose_from_json(const nlohmann::json& j) {
  Pose p;
  p.x_cm = j.at("x_cm").get<double>();
  p.y_cm = j.at("y_cm").get<double>();
  p.orientation = orientation_from(j.value("orientation", std::string("floor_vertical")));
  if (j.contains("grid_index") && !j.at("grid_index").is_null()) {
    const auto& g = j.at("grid_index");
    if (!g.is_array() || g.size() != 2) throw Error(ErrorCode::Invalid, "grid_index must be [row, col]");
    p.grid_index = GridIndex{g[0].get<int>(), g[1].get<int>()};
  }
  return p;
}

inline nlohmann::json to_json(const Layout& layout) {
  nlohmann::json actuators = nlohmann::json::object();
  for (const auto& [id, a] : layout.actuators)
    actuators[id] = {{"spec", to_json(a.spec)}, {"pose", to_json(a.pose)}};
  nlohmann::json lines = nlohmann::json::array();
  for (const auto& l : layout.supply_lines)
    lines.push_back({{"id", l.id}, {"compressor_ids", l.compressor_ids}, {"members", l.members}});
  nlohmann::json compressors = nlohmann::json::object();
  for (const auto& [id, c] : layout.compressors)
    compressors[id] = {{"pressure_kpa", c.pressure_kpa}, {"flow_l_min", c.flow_l_min}, {"rate_units", c.rate_units}};
  return {{"actuators", actuators}, {"supply_lines", lines}, {"compressors", compressors}};
}

/// Parses without validating; call `validate_layout` / `require_valid` after.
inline Layout layout_from_json(const nlohmann::json& j) {
  try {
    Layout layout;
    for (const auto& [id, a] : j.at("actuators").items()) {
      layout.actuators.emplace(id, Actuator{spec_from_json(a.value("spec", nlohmann::json::object())),
                                            pose_from_json(a.at("pose"))});
    }
    for (const auto& l : j.at("supply_lines")) {
      SupplyLine line;
      line.id = l.at("id").get<std::string>();
      line.compressor_ids = l.value("compressor_ids", std::vector<std::string>{});
      line.members = l.at("members").get<std::vector<std::string>>();
      layout.supply_lines.push_back(std::move(line));
    }
    for (const auto& [id, c] : j.at("compressors").items()) {
      Compressor comp;
      comp.id = id;
      comp.pressure_kpa = c.value("pressure_kpa", comp.pressure_kpa);
      comp.flow_l_min = c.value("flow_l_min", comp.flow_l_min);
      comp.rate_units = c.value("rate_units", comp.rate_units);
      layout.compressors.emplace(id, comp);
    }
    return layout;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Invalid, std::string("malformed layout document: ") + e.what());
  }
}

inline std::string serialize_layout(const Layout& layout) { return to_json(layout).dump(2) + "\n"; }

inline Layout parse_layout(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::Invalid, std::string("layout is not valid JSON: ") + e.what());
  }
  return layout_from_json(j);
}

}  // namespace lifttiles
