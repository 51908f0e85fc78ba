#pragma once

#include <map>
#include <string>

#include "lifttiles/lifttiles.hpp"

namespace lifttiles::testing {

inline Layout grid(int rows, int cols, const GridOptions& options = {}) {
  return build_grid_layout(rows, cols, ActuatorSpec{}, 30.0, options);
}

inline SimConfig noiseless(std::uint64_t seed = 1) {
  SimConfig c;
  c.sensor_noise_sigma_cm = 0.0;
  c.seed = seed;
  return c;
}

inline std::map<ActuatorId, double> uniform(const Layout& layout, double cm) {
  std::map<ActuatorId, double> out;
  for (const auto& [id, a] : layout.actuators) out[id] = cm;
  return out;
}

inline SimState at_heights(const Layout& layout, const SimConfig& config, const std::map<ActuatorId, double>& h) {
  SimState s = initial_state(layout, config);
  for (const auto& [id, cm] : h) s.states.at(id).height_cm = cm;
  return s;
}

}  // namespace lifttiles::testing
