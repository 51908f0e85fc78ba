#pragma once

// Target shapes: heightmap documents, the bundled application presets, and
// the data-to-height mapping used for physicalization exhibits.
//
// Every document starts with the line `lifttiles-v1`. Grid documents follow
// it with optional `# key=value` metadata lines and then a comma-separated
// matrix of heights in cm, row-major by grid index, `.` for cells left
// unaddressed. Full documents follow it with a JSON object
// {"name":..., "metadata":{...}, "entries":{id: cm}}.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"
#include "lifttiles/model.hpp"

namespace lifttiles {

inline constexpr std::string_view kFormatHeader = "lifttiles-v1";

struct Heightmap {
  std::string name;
  std::map<ActuatorId, double> entries;
  std::map<std::string, std::string> metadata;

  friend bool operator==(const Heightmap&, const Heightmap&) = default;
};

inline void require_valid(const Heightmap& h, const Layout& layout) {
  for (const auto& [id, cm] : h.entries) {
    if (!layout.contains(id)) throw Error(ErrorCode::BadId, "heightmap addresses unknown actuator '" + id + "'");
    const ActuatorSpec& spec = layout.at(id).spec;
    if (!(cm >= spec.min_height_cm)) {
      throw Error(ErrorCode::OutOfRange, id + ": " + std::to_string(cm) + " cm is below the minimum " +
                                             std::to_string(spec.min_height_cm) + " cm");
    }
    if (!(cm <= spec.max_height_cm)) {
      throw Error(ErrorCode::OutOfRange, id + ": " + std::to_string(cm) + " cm is above the maximum " +
                                             std::to_string(spec.max_height_cm) + " cm");
    }
  }
}

/// Entries of `update` override `base`; everything else keeps its prior
/// target.
inline std::map<ActuatorId, double> overlay(std::map<ActuatorId, double> base, const Heightmap& update) {
  for (const auto& [id, cm] : update.entries) base[id] = cm;
  return base;
}

// ---------------------------------------------------------------------------
// Parsing

namespace detail {

inline std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

inline std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    out.push_back(line);
  }
  return out;
}

inline double parse_cm(const std::string& cell, std::size_t row, std::size_t col) {
  char* end = nullptr;
  const double v = std::strtod(cell.c_str(), &end);
  if (cell.empty() || end != cell.c_str() + cell.size() || !std::isfinite(v)) {
    throw Error(ErrorCode::Invalid, "cell (" + std::to_string(row) + ", " + std::to_string(col) +
                                        ") is not a number: '" + cell + "'");
  }
  return v;
}

}  // namespace detail

struct GridDocument {
  std::map<std::string, std::string> metadata;
  std::vector<std::vector<std::optional<double>>> rows;
};

inline GridDocument parse_grid(const std::string& text) {
  auto lines = detail::lines_of(text);
  std::size_t i = 0;
  while (i < lines.size() && detail::trim(lines[i]).empty()) ++i;
  if (i == lines.size() || detail::trim(lines[i]) != kFormatHeader)
    throw Error(ErrorCode::Invalid, "document must start with '" + std::string(kFormatHeader) + "'");
  ++i;

  GridDocument doc;
  for (; i < lines.size(); ++i) {
    const std::string line = detail::trim(lines[i]);
    if (line.empty()) continue;
    if (line.front() == '#') {
      const std::string body = detail::trim(std::string_view(line).substr(1));
      if (auto eq = body.find('='); eq != std::string::npos)
        doc.metadata[detail::trim(body.substr(0, eq))] = detail::trim(body.substr(eq + 1));
      continue;
    }
    std::vector<std::optional<double>> row;
    std::stringstream cells(line);
    std::string cell;
    while (std::getline(cells, cell, ',')) {
      cell = detail::trim(cell);
      if (cell == ".") {
        row.push_back(std::nullopt);
      } else {
        row.push_back(detail::parse_cm(cell, doc.rows.size(), row.size()));
      }
    }
    if (line.back() == ',') row.push_back(std::nullopt);
    if (!doc.rows.empty() && row.size() != doc.rows.front().size()) {
      throw Error(ErrorCode::Invalid, "ragged matrix: row " + std::to_string(doc.rows.size()) + " has " +
                                          std::to_string(row.size()) + " cells, expected " +
                                          std::to_string(doc.rows.front().size()));
    }
    doc.rows.push_back(std::move(row));
  }
  return doc;
}

/// Parses a grid or full document and validates it against `layout`.
inline Heightmap load_heightmap(const std::string& document, const Layout& layout) {
  auto lines = detail::lines_of(document);
  std::size_t i = 0;
  while (i < lines.size() && detail::trim(lines[i]).empty()) ++i;
  if (i == lines.size() || detail::trim(lines[i]) != kFormatHeader)
    throw Error(ErrorCode::Invalid, "document must start with '" + std::string(kFormatHeader) + "'");
  std::size_t body = i + 1;
  while (body < lines.size() && detail::trim(lines[body]).empty()) ++body;

  Heightmap h;
  if (body < lines.size() && detail::trim(lines[body]).starts_with("{")) {
    std::string json_text;
    for (std::size_t k = body; k < lines.size(); ++k) json_text += lines[k] + "\n";
    try {
      auto j = nlohmann::json::parse(json_text);
      h.name = j.value("name", std::string());
      if (j.contains("metadata"))
        for (const auto& [k, v] : j.at("metadata").items()) h.metadata[k] = v.is_string() ? v.get<std::string>() : v.dump();
      for (const auto& [id, v] : j.at("entries").items()) h.entries[id] = v.get<double>();
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::Invalid, std::string("malformed heightmap document: ") + e.what());
    }
  } else {
    GridDocument doc = parse_grid(document);
    h.metadata = doc.metadata;
    if (auto it = doc.metadata.find("name"); it != doc.metadata.end()) h.name = it->second;
    for (std::size_t r = 0; r < doc.rows.size(); ++r) {
      for (std::size_t c = 0; c < doc.rows[r].size(); ++c) {
        if (!doc.rows[r][c]) continue;
        auto id = layout.at_grid({static_cast<int>(r), static_cast<int>(c)});
        if (!id) {
          throw Error(ErrorCode::BadId,
                      "no actuator at grid cell (" + std::to_string(r) + ", " + std::to_string(c) + ")");
        }
        h.entries[*id] = *doc.rows[r][c];
      }
    }
  }
  require_valid(h, layout);
  return h;
}

inline std::string serialize_heightmap(const Heightmap& h) {
  nlohmann::json j;
  j["name"] = h.name;
  j["metadata"] = h.metadata;
  j["entries"] = h.entries;
  return std::string(kFormatHeader) + "\n" + j.dump(2) + "\n";
}

/// Grid rendering over the layout's grid indices; units without an entry
/// print as `.`.
inline std::string serialize_heightmap_grid(const Heightmap& h, const Layout& layout) {
  auto [rows, cols] = layout.grid_extent();
  if (rows == 0) throw Error(ErrorCode::Invalid, "layout has no grid indices");
  std::ostringstream os;
  os << kFormatHeader << "\n";
  if (!h.name.empty()) os << "# name=" << h.name << "\n";
  for (const auto& [k, v] : h.metadata)
    if (k != "name") os << "# " << k << "=" << v << "\n";
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      if (c) os << ",";
      auto id = layout.at_grid({r, c});
      auto it = id ? h.entries.find(*id) : h.entries.end();
      if (it == h.entries.end()) {
        os << ".";
      } else {
        os << nlohmann::json(it->second).dump();
      }
    }
    os << "\n";
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Presets

enum class PresetName { Flat, Chair, Table, Bed, ArrowWall, MeetingPartition };

inline constexpr PresetName kAllPresets[] = {PresetName::Flat,  PresetName::Chair,     PresetName::Table,
                                             PresetName::Bed,   PresetName::ArrowWall, PresetName::MeetingPartition};

inline std::string_view to_string(PresetName p) {
  switch (p) {
    case PresetName::Flat: return "Flat";
    case PresetName::Chair: return "Chair";
    case PresetName::Table: return "Table";
    case PresetName::Bed: return "Bed";
    case PresetName::ArrowWall: return "ArrowWall";
    case PresetName::MeetingPartition: return "MeetingPartition";
  }
  return "Flat";
}

inline PresetName preset_from(std::string_view name) {
  for (auto p : kAllPresets) {
    const auto s = to_string(p);
    if (s.size() == name.size() &&
        std::equal(s.begin(), s.end(), name.begin(), [](char a, char b) { return std::tolower(a) == std::tolower(b); }))
      return p;
  }
  throw Error(ErrorCode::BadId, "unknown preset '" + std::string(name) + "'");
}

inline std::filesystem::path preset_directory() {
  if (const char* env = std::getenv("LIFTTILES_PRESET_DIR"); env && *env) return env;
#ifdef LIFTTILES_PRESET_DIR
  return LIFTTILES_PRESET_DIR;
#else
  return "presets";
#endif
}

inline std::string preset_file_name(PresetName p) {
  std::string s(to_string(p));
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i && std::isupper(static_cast<unsigned char>(s[i]))) out += '_';
    out += static_cast<char>(std::tolower(static_cast<unsigned char>(s[i])));
  }
  return out + ".csv";
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Invalid, "cannot read " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

struct PresetOptions {
  // Fill height for Flat; unset means the document's `fill` value.
  std::optional<double> flat_height_cm;
  std::optional<std::filesystem::path> directory;
};

/// Lays a bundled preset pattern over the layout's grid. The pattern is
/// centered on the grid; units it does not cover get the document's
/// `background` height.
inline Heightmap preset(PresetName name, const Layout& layout, const PresetOptions& options = {}) {
  const auto dir = options.directory.value_or(preset_directory());
  GridDocument doc = parse_grid(read_text_file(dir / preset_file_name(name)));
  auto meta = [&](const std::string& key, const std::string& fallback) {
    auto it = doc.metadata.find(key);
    return it == doc.metadata.end() ? fallback : it->second;
  };

  Heightmap h;
  h.name = std::string(to_string(name));
  h.metadata["preset"] = h.name;

  if (name == PresetName::Flat) {
    const double fill = options.flat_height_cm.value_or(std::stod(meta("fill", "15")));
    for (const auto& [id, a] : layout.actuators) h.entries[id] = fill;
    h.metadata["fill"] = nlohmann::json(fill).dump();
    require_valid(h, layout);
    return h;
  }

  const int min_rows = std::stoi(meta("min_rows", std::to_string(doc.rows.size())));
  const int min_cols = std::stoi(meta("min_cols", doc.rows.empty() ? "0" : std::to_string(doc.rows.front().size())));
  auto [rows, cols] = layout.grid_extent();
  if (rows < min_rows || cols < min_cols) {
    throw Error(ErrorCode::TooSmall, h.name + " needs a grid of at least " + std::to_string(min_rows) + " x " +
                                         std::to_string(min_cols) + ", layout is " + std::to_string(rows) + " x " +
                                         std::to_string(cols));
  }
  const double background = std::stod(meta("background", "15"));
  const int pattern_rows = static_cast<int>(doc.rows.size());
  const int pattern_cols = pattern_rows ? static_cast<int>(doc.rows.front().size()) : 0;
  const int row_offset = std::max(0, (rows - pattern_rows) / 2);
  const int col_offset = std::max(0, (cols - pattern_cols) / 2);

  for (const auto& [id, a] : layout.actuators) {
    double cm = background;
    if (a.pose.grid_index) {
      const int r = a.pose.grid_index->row - row_offset;
      const int c = a.pose.grid_index->col - col_offset;
      if (r >= 0 && r < pattern_rows && c >= 0 && c < pattern_cols && doc.rows[r][c]) cm = *doc.rows[r][c];
    }
    h.entries[id] = cm;
  }
  for (const auto& [k, v] : doc.metadata)
    if (k != "name") h.metadata[k] = v;
  require_valid(h, layout);
  return h;
}

// ---------------------------------------------------------------------------
// Physicalization

struct PhysicalizationSeries {
  // (position, value), strictly increasing in position.
  std::vector<std::pair<double, double>> samples;
  double v_min = 0.0;
  double v_max = 1.0;
  double h_min = kDefaultMinHeightCm;
  double h_max = kDefaultMaxHeightCm;
};

/// Pass `spec` to also check the height range against an actuator's stroke.
inline void require_valid(const PhysicalizationSeries& s, const ActuatorSpec* spec = nullptr) {
  if (!(s.v_min < s.v_max)) throw Error(ErrorCode::Invalid, "series needs v_min < v_max");
  if (!(s.h_min < s.h_max)) throw Error(ErrorCode::Invalid, "series needs h_min < h_max");
  if (spec && (s.h_min < spec->min_height_cm || s.h_max > spec->max_height_cm))
    throw Error(ErrorCode::OutOfRange, "series height range exceeds the actuator stroke");
  if (s.samples.empty()) throw Error(ErrorCode::Invalid, "series has no samples");
  for (std::size_t i = 1; i < s.samples.size(); ++i) {
    if (!(s.samples[i].first > s.samples[i - 1].first))
      throw Error(ErrorCode::Invalid, "sample positions must strictly increase");
  }
}

/// Height for the data value at `probe_position`, interpolated linearly
/// between the bracketing samples. No extrapolation.
inline double physicalize(const PhysicalizationSeries& series, double probe_position) {
  require_valid(series);
  const auto& s = series.samples;
  if (probe_position < s.front().first || probe_position > s.back().first) {
    throw Error(ErrorCode::OutOfRange, "probe position " + std::to_string(probe_position) + " outside [" +
                                           std::to_string(s.front().first) + ", " + std::to_string(s.back().first) +
                                           "]");
  }
  auto hi = std::lower_bound(s.begin(), s.end(), probe_position,
                             [](const auto& sample, double p) { return sample.first < p; });
  double value = hi->second;
  if (hi->first != probe_position) {
    auto lo = std::prev(hi);
    const double f = (probe_position - lo->first) / (hi->first - lo->first);
    value = lo->second + f * (hi->second - lo->second);
  }
  const double v = std::clamp(value, series.v_min, series.v_max);
  return series.h_min + (v - series.v_min) / (series.v_max - series.v_min) * (series.h_max - series.h_min);
}

inline PhysicalizationSeries parse_series(const std::string& document) {
  auto lines = detail::lines_of(document);
  std::size_t i = 0;
  while (i < lines.size() && detail::trim(lines[i]).empty()) ++i;
  if (i == lines.size() || detail::trim(lines[i]) != kFormatHeader)
    throw Error(ErrorCode::Invalid, "document must start with '" + std::string(kFormatHeader) + "'");
  std::string json_text;
  for (std::size_t k = i + 1; k < lines.size(); ++k) json_text += lines[k] + "\n";
  try {
    auto j = nlohmann::json::parse(json_text);
    PhysicalizationSeries s;
    s.v_min = j.at("v_min").get<double>();
    s.v_max = j.at("v_max").get<double>();
    s.h_min = j.value("h_min", s.h_min);
    s.h_max = j.value("h_max", s.h_max);
    for (const auto& p : j.at("samples")) s.samples.emplace_back(p.at(0).get<double>(), p.at(1).get<double>());
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Invalid, std::string("malformed series document: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Diffs

struct HeightmapDiff {
  std::map<ActuatorId, double> deltas;  // b - a
  double total_extension_cm = 0.0;
  double total_retraction_cm = 0.0;
  double max_abs_delta_cm = 0.0;
};

inline HeightmapDiff diff_heightmaps(const Heightmap& a, const Heightmap& b) {
  if (a.entries.size() != b.entries.size() ||
      !std::equal(a.entries.begin(), a.entries.end(), b.entries.begin(),
                  [](const auto& x, const auto& y) { return x.first == y.first; })) {
    throw Error(ErrorCode::BadId, "heightmaps address different actuators");
  }
  HeightmapDiff d;
  for (const auto& [id, from] : a.entries) {
    const double delta = b.entries.at(id) - from;
    d.deltas[id] = delta;
    if (delta > 0.0) d.total_extension_cm += delta;
    if (delta < 0.0) d.total_retraction_cm -= delta;
    d.max_abs_delta_cm = std::max(d.max_abs_delta_cm, std::abs(delta));
  }
  return d;
}

}  // namespace lifttiles
