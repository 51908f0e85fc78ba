#pragma once

// Minimum-makespan valve schedules for a shape transition under shared
// supply-line capacity.
//
// Fluid model: while a set S of supply valves is open on a line, each member
// receives the water-filling share of the line capacity (`allocate_flow`) and
// extends at share * extend_rate. Venting is spring-driven and shares
// nothing, so every retraction runs from t = 0 at its own rate.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "lifttiles/controller.hpp"
#include "lifttiles/pneusim.hpp"

namespace lifttiles {

struct TransitionProblem {
  std::reference_wrapper<const Layout> layout;
  std::map<ActuatorId, double> current;
  std::map<ActuatorId, double> target;
};

struct Phase {
  double duration_s = 0.0;
  std::vector<ActuatorId> extending;
  std::vector<ActuatorId> retracting;
  // Predicted flow share of every extending actuator.
  std::map<ActuatorId, double> shares;

  friend bool operator==(const Phase&, const Phase&) = default;
};

struct Schedule {
  std::vector<Phase> phases;
  double predicted_makespan_s = 0.0;

  friend bool operator==(const Schedule&, const Schedule&) = default;
};

inline void require_valid(const TransitionProblem& p) {
  const Layout& layout = p.layout.get();
  auto check = [&](const std::map<ActuatorId, double>& heights, const char* which) {
    for (const auto& [id, h] : heights) {
      const ActuatorSpec& spec = layout.at(id).spec;
      if (!(h >= spec.min_height_cm - 1e-9 && h <= spec.max_height_cm + 1e-9))
        throw Error(ErrorCode::OutOfRange, std::string(which) + " height of " + id + " out of range");
    }
  };
  check(p.current, "current");
  check(p.target, "target");
  for (const auto& [id, h] : p.target) {
    if (!p.current.count(id)) throw Error(ErrorCode::BadId, "no current height for " + id);
  }
}

namespace detail {

struct Deficits {
  // Extension work in capacity-seconds: cm / (cm/s at share 1).
  std::map<ActuatorId, double> work;
  std::map<ActuatorId, double> retract_s;
};

inline Deficits deficits(const TransitionProblem& p) {
  Deficits d;
  for (const auto& [id, target] : p.target) {
    const ActuatorSpec& spec = p.layout.get().at(id).spec;
    const double delta = target - p.current.at(id);
    if (delta > 0.0) d.work[id] = delta / spec.extend_rate();
    if (delta < 0.0) d.retract_s[id] = -delta / spec.retract_rate_cm_s;
  }
  return d;
}

inline std::vector<ActuatorId> line_jobs(const SupplyLine& line, const Deficits& d) {
  std::vector<ActuatorId> out;
  for (const auto& id : line.members)
    if (d.work.count(id)) out.push_back(id);
  return out;
}

// A phase on one line or for one retraction, on a local timeline.
struct Interval {
  double start;
  double end;
  std::set<ActuatorId> extending;
  std::map<ActuatorId, double> shares;
  std::set<ActuatorId> retracting;
};

inline Schedule merge(const std::vector<Interval>& intervals) {
  std::vector<double> cuts{0.0};
  for (const auto& iv : intervals) {
    cuts.push_back(iv.start);
    cuts.push_back(iv.end);
  }
  std::sort(cuts.begin(), cuts.end());
  std::vector<double> uniq;
  for (double c : cuts)
    if (uniq.empty() || c - uniq.back() > 1e-12) uniq.push_back(c);

  Schedule s;
  for (std::size_t k = 0; k + 1 < uniq.size(); ++k) {
    const double a = uniq[k];
    const double b = uniq[k + 1];
    const double mid = 0.5 * (a + b);
    Phase ph;
    ph.duration_s = b - a;
    std::set<ActuatorId> ext;
    std::set<ActuatorId> ret;
    for (const auto& iv : intervals) {
      if (iv.start <= mid && mid < iv.end) {
        ext.insert(iv.extending.begin(), iv.extending.end());
        ret.insert(iv.retracting.begin(), iv.retracting.end());
        for (const auto& [id, sh] : iv.shares) ph.shares[id] = sh;
      }
    }
    ph.extending.assign(ext.begin(), ext.end());
    ph.retracting.assign(ret.begin(), ret.end());
    s.phases.push_back(std::move(ph));
  }
  s.predicted_makespan_s = 0.0;
  for (const auto& ph : s.phases) s.predicted_makespan_s += ph.duration_s;
  return s;
}

inline std::vector<Interval> retraction_intervals(const Deficits& d) {
  std::vector<Interval> out;
  for (const auto& [id, t] : d.retract_s) out.push_back({0.0, t, {}, {}, {id}});
  return out;
}

inline std::map<ActuatorId, double> shares_of(const SupplyLine& line, const std::set<ActuatorId>& open,
                                              const Layout& layout) {
  return allocate_flow(line, open, layout);
}

// Equal-split water-filling: every unfinished job open, re-split at each
// completion.
inline std::vector<Interval> equal_split(const SupplyLine& line, const std::vector<ActuatorId>& jobs,
                                         const Deficits& d, const Layout& layout) {
  std::vector<Interval> out;
  std::map<ActuatorId, double> left;
  for (const auto& id : jobs) left[id] = d.work.at(id);
  double t = 0.0;
  while (!left.empty()) {
    std::set<ActuatorId> open;
    for (const auto& [id, w] : left) open.insert(id);
    auto shares = shares_of(line, open, layout);
    double dt = std::numeric_limits<double>::infinity();
    for (const auto& [id, w] : left) dt = std::min(dt, w / shares.at(id));
    out.push_back({t, t + dt, open, shares, {}});
    t += dt;
    for (auto it = left.begin(); it != left.end();) {
      it->second -= shares.at(it->first) * dt;
      if (it->second <= 1e-12 * (1.0 + d.work.at(it->first))) {
        it = left.erase(it);
      } else {
        ++it;
      }
    }
  }
  return out;
}

// Wrap-around assignment onto `slots` parallel channels of `rate` units each
// (McNaughton). Every open set has at most `slots` members, so each member
// gets exactly `rate` when slots * rate <= capacity and caps are `rate`.
inline std::vector<Interval> wrap_around(const SupplyLine& line, const std::vector<ActuatorId>& jobs,
                                         const Deficits& d, const Layout& layout, int slots, double rate) {
  double total = 0.0;
  double longest = 0.0;
  for (const auto& id : jobs) {
    const double p = d.work.at(id) / rate;
    total += p;
    longest = std::max(longest, p);
  }
  const double horizon = std::max(total / slots, longest);

  struct Piece {
    double start, end;
    ActuatorId id;
  };
  std::vector<Piece> pieces;
  double cursor = 0.0;
  for (const auto& id : jobs) {
    double p = d.work.at(id) / rate;
    if (cursor + p <= horizon + 1e-12) {
      pieces.push_back({cursor, std::min(horizon, cursor + p), id});
      cursor += p;
      if (horizon - cursor <= 1e-12) cursor = 0.0;
    } else {
      const double first = horizon - cursor;
      pieces.push_back({cursor, horizon, id});
      pieces.push_back({0.0, p - first, id});
      cursor = p - first;
    }
  }

  std::vector<double> cuts;
  for (const auto& pc : pieces) {
    cuts.push_back(pc.start);
    cuts.push_back(pc.end);
  }
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end(), [](double a, double b) { return std::abs(a - b) <= 1e-12; }),
             cuts.end());

  std::vector<Interval> out;
  for (std::size_t k = 0; k + 1 < cuts.size(); ++k) {
    const double mid = 0.5 * (cuts[k] + cuts[k + 1]);
    std::set<ActuatorId> open;
    for (const auto& pc : pieces)
      if (pc.start <= mid && mid < pc.end) open.insert(pc.id);
    if (open.empty()) continue;
    out.push_back({cuts[k], cuts[k + 1], open, shares_of(line, open, layout), {}});
  }
  return out;
}

inline double interval_end(const std::vector<Interval>& ivs) {
  double end = 0.0;
  for (const auto& iv : ivs) end = std::max(end, iv.end);
  return end;
}

}  // namespace detail

/// Max of: each line's total extension work over its capacity; each
/// actuator's own deficit at its best single-valve rate; the slowest vent.
inline double lower_bound_makespan(const TransitionProblem& problem) {
  require_valid(problem);
  const Layout& layout = problem.layout.get();
  const detail::Deficits d = detail::deficits(problem);
  double bound = 0.0;
  for (const auto& line : layout.supply_lines) {
    const double capacity = layout.line_capacity(line);
    double sum = 0.0;
    for (const auto& id : detail::line_jobs(line, d)) {
      sum += d.work.at(id);
      const double best = std::min(layout.at(id).spec.valve_max_flow_units, capacity);
      bound = std::max(bound, d.work.at(id) / best);
    }
    if (sum > 0.0) bound = std::max(bound, sum / capacity);
  }
  for (const auto& [id, t] : d.retract_s) bound = std::max(bound, t);
  for (const auto& [id, w] : d.work) {
    if (!layout.line_of(id)) throw Error(ErrorCode::Invalid, id + " has no supply line");
  }
  return bound;
}

/// Greedy planner. Lines whose capacity cannot saturate any single valve use
/// equal-split water-filling, re-split at each completion. Lines with more
/// capacity than one valve passes use wrap-around over capacity / cap
/// parallel channels, so no valve limit binds while the line stays full.
inline Schedule plan_greedy(const TransitionProblem& problem) {
  require_valid(problem);
  const Layout& layout = problem.layout.get();
  const detail::Deficits d = detail::deficits(problem);
  std::vector<detail::Interval> all = detail::retraction_intervals(d);

  for (const auto& line : layout.supply_lines) {
    const auto jobs = detail::line_jobs(line, d);
    if (jobs.empty()) continue;
    const double capacity = layout.line_capacity(line);
    double min_cap = std::numeric_limits<double>::infinity();
    double max_cap = 0.0;
    for (const auto& id : jobs) {
      min_cap = std::min(min_cap, layout.at(id).spec.valve_max_flow_units);
      max_cap = std::max(max_cap, layout.at(id).spec.valve_max_flow_units);
    }
    const bool uniform_caps = max_cap - min_cap <= 1e-12;
    std::vector<detail::Interval> ivs;
    if (capacity <= min_cap + 1e-12 || !uniform_caps) {
      ivs = detail::equal_split(line, jobs, d, layout);
    } else {
      const double channels = capacity / min_cap;
      const double whole = std::round(channels);
      if (std::abs(channels - whole) <= 1e-9) {
        ivs = detail::wrap_around(line, jobs, d, layout, static_cast<int>(whole), min_cap);
      } else {
        // Fractional channel count: no subset schedule keeps both the line
        // and every valve saturated. Take the better of plain water-filling
        // and wrap-around over the whole channels.
        std::vector<std::vector<detail::Interval>> options;
        options.push_back(detail::equal_split(line, jobs, d, layout));
        options.push_back(detail::wrap_around(line, jobs, d, layout, static_cast<int>(std::floor(channels)), min_cap));
        ivs = *std::min_element(options.begin(), options.end(), [](const auto& a, const auto& b) {
          return detail::interval_end(a) < detail::interval_end(b);
        });
      }
    }
    all.insert(all.end(), ivs.begin(), ivs.end());
  }
  return detail::merge(all);
}

// ---------------------------------------------------------------------------
// Exact oracle

inline constexpr std::size_t kExactMaxActuators = 4;

namespace detail {

// Solves A x = b in place by Gaussian elimination with partial pivoting.
inline std::optional<std::vector<double>> solve_square(std::vector<std::vector<double>> a, std::vector<double> b) {
  const std::size_t n = b.size();
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(a[r][col]) > std::abs(a[pivot][col])) pivot = r;
    if (std::abs(a[pivot][col]) < 1e-12) return std::nullopt;
    std::swap(a[pivot], a[col]);
    std::swap(b[pivot], b[col]);
    for (std::size_t r = 0; r < n; ++r) {
      if (r == col) continue;
      const double f = a[r][col] / a[col][col];
      if (f == 0.0) continue;
      for (std::size_t c = col; c < n; ++c) a[r][c] -= f * a[col][c];
      b[r] -= f * b[col];
    }
  }
  for (std::size_t i = 0; i < n; ++i) b[i] /= a[i][i];
  return b;
}

// Minimum total open time over every combination of valve patterns on one
// line: min sum(x_S) s.t. sum_S x_S * share_i(S) >= work_i, x >= 0. The
// optimum sits on a vertex, so enumerating every basis of patterns and
// surplus columns is exhaustive.
inline std::vector<Interval> exact_line(const SupplyLine& line, const std::vector<ActuatorId>& jobs,
                                        const Deficits& d, const Layout& layout) {
  const std::size_t n = jobs.size();
  struct Column {
    std::set<ActuatorId> open;
    std::vector<double> coeff;
    bool pattern;
  };
  std::vector<Column> columns;
  for (unsigned mask = 1; mask < (1u << n); ++mask) {
    std::set<ActuatorId> open;
    for (std::size_t i = 0; i < n; ++i)
      if (mask & (1u << i)) open.insert(jobs[i]);
    auto shares = allocate_flow(line, open, layout);
    std::vector<double> coeff(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      if (shares.count(jobs[i])) coeff[i] = shares.at(jobs[i]);
    columns.push_back({open, coeff, true});
  }
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> coeff(n, 0.0);
    coeff[i] = -1.0;
    columns.push_back({{}, coeff, false});
  }
  std::vector<double> rhs(n);
  for (std::size_t i = 0; i < n; ++i) rhs[i] = d.work.at(jobs[i]);

  double best = std::numeric_limits<double>::infinity();
  std::vector<std::pair<std::size_t, double>> best_basis;
  std::vector<std::size_t> pick(n);
  std::function<void(std::size_t, std::size_t)> choose = [&](std::size_t depth, std::size_t from) {
    if (depth == n) {
      std::vector<std::vector<double>> a(n, std::vector<double>(n));
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < n; ++c) a[r][c] = columns[pick[c]].coeff[r];
      auto x = solve_square(a, rhs);
      if (!x) return;
      double cost = 0.0;
      for (std::size_t c = 0; c < n; ++c) {
        if ((*x)[c] < -1e-9) return;
        if (columns[pick[c]].pattern) cost += std::max(0.0, (*x)[c]);
      }
      if (cost < best - 1e-12) {
        best = cost;
        best_basis.clear();
        for (std::size_t c = 0; c < n; ++c)
          if (columns[pick[c]].pattern && (*x)[c] > 1e-12) best_basis.emplace_back(pick[c], (*x)[c]);
      }
      return;
    }
    for (std::size_t k = from; k < columns.size(); ++k) {
      pick[depth] = k;
      choose(depth + 1, k + 1);
    }
  };
  choose(0, 0);

  // Larger open sets first; any order is feasible in the fluid model.
  std::sort(best_basis.begin(), best_basis.end(), [&](const auto& a, const auto& b) {
    return columns[a.first].open.size() > columns[b.first].open.size();
  });
  std::vector<Interval> out;
  double t = 0.0;
  for (const auto& [col, dur] : best_basis) {
    const auto& open = columns[col].open;
    out.push_back({t, t + dur, open, allocate_flow(line, open, layout), {}});
    t += dur;
  }
  return out;
}

}  // namespace detail

/// Exhaustive oracle for small instances (at most four moving actuators).
/// Each line is solved independently by enumerating every vertex of the
/// pattern-duration program; retractions vent concurrently. The optimum is
/// exact, so `time_resolution_s` only bounds the accuracy callers may rely
/// on and must be positive.
inline Schedule plan_exact(const TransitionProblem& problem, double time_resolution_s = 0.25) {
  require_valid(problem);
  if (!(time_resolution_s > 0.0)) throw Error(ErrorCode::Invalid, "time resolution must be positive");
  const Layout& layout = problem.layout.get();
  const detail::Deficits d = detail::deficits(problem);
  std::set<ActuatorId> moving;
  for (const auto& [id, w] : d.work) moving.insert(id);
  for (const auto& [id, t] : d.retract_s) moving.insert(id);
  if (moving.size() > kExactMaxActuators)
    throw Error(ErrorCode::TooLarge, "exact planning is limited to " + std::to_string(kExactMaxActuators) +
                                         " moving actuators, got " + std::to_string(moving.size()));

  std::vector<detail::Interval> all = detail::retraction_intervals(d);
  for (const auto& line : layout.supply_lines) {
    const auto jobs = detail::line_jobs(line, d);
    if (jobs.empty()) continue;
    auto ivs = detail::exact_line(line, jobs, d, layout);
    all.insert(all.end(), ivs.begin(), ivs.end());
  }
  return detail::merge(all);
}

// ---------------------------------------------------------------------------
// Validation and execution

/// Checks the schedule invariants against a layout: positive durations, no
/// actuator both extending and retracting, stated shares matching what the
/// line would actually deliver and never exceeding capacity.
inline std::vector<std::string> schedule_problems(const Schedule& s, const Layout& layout) {
  std::vector<std::string> out;
  double total = 0.0;
  for (std::size_t k = 0; k < s.phases.size(); ++k) {
    const Phase& ph = s.phases[k];
    const std::string at = "phase " + std::to_string(k) + ": ";
    total += ph.duration_s;
    if (!(ph.duration_s > 0.0)) out.push_back(at + "non-positive duration");
    std::set<ActuatorId> ext(ph.extending.begin(), ph.extending.end());
    for (const auto& id : ph.retracting)
      if (ext.count(id)) out.push_back(at + id + " both extends and retracts");
    bool ids_ok = true;
    for (const auto& id : ph.extending)
      if (!layout.contains(id)) out.push_back(at + "unknown id " + id), ids_ok = false;
    for (const auto& id : ph.retracting)
      if (!layout.contains(id)) out.push_back(at + "unknown id " + id), ids_ok = false;
    if (!ids_ok) continue;
    for (const auto& [id, share] : ph.shares)
      if (!ext.count(id)) out.push_back(at + "share for non-extending " + id);
    for (const auto& line : layout.supply_lines) {
      std::set<ActuatorId> open;
      for (const auto& id : line.members)
        if (ext.count(id)) open.insert(id);
      if (open.empty()) continue;
      const auto real = allocate_flow(line, open, layout);
      double stated_sum = 0.0;
      for (const auto& id : open) {
        auto it = ph.shares.find(id);
        const double stated = it == ph.shares.end() ? real.at(id) : it->second;
        stated_sum += stated;
        if (stated > layout.at(id).spec.valve_max_flow_units + 1e-9)
          out.push_back(at + id + " exceeds its valve limit");
        if (std::abs(stated - real.at(id)) > 1e-9)
          out.push_back(at + id + " share " + std::to_string(stated) + " is not what line " + line.id +
                        " delivers (" + std::to_string(real.at(id)) + ")");
      }
      if (stated_sum > layout.line_capacity(line) + 1e-9)
        out.push_back(at + "line " + line.id + " oversubscribed");
    }
  }
  if (std::abs(total - s.predicted_makespan_s) > 1e-6 * (1.0 + total))
    out.push_back("predicted makespan differs from the sum of phase durations");
  return out;
}

struct ExecutionReport {
  double predicted_makespan_s = 0.0;
  // Time the last moving actuator arrived at its target, sampled at the end
  // of simulation steps.
  double simulated_makespan_s = 0.0;
  double tolerance_s = 0.0;
  bool diverged = false;
  std::vector<double> phase_end_predicted_s;
  std::vector<double> phase_end_simulated_s;
  std::map<ActuatorId, double> final_error_cm;
};

/// Runs the schedule open-loop: each phase opens exactly the scheduled
/// valves for exactly its duration (partial final step where needed).
/// `targets` identifies when each actuator has arrived.
inline ExecutionReport execute_schedule(Simulation& sim, const Schedule& schedule,
                                        const std::map<ActuatorId, double>& targets, double arrival_tol_cm = 1e-6) {
  if (auto problems = schedule_problems(schedule, sim.layout()); !problems.empty())
    throw Error(ErrorCode::Invalid, "schedule rejected: " + problems.front());

  ExecutionReport r;
  r.predicted_makespan_s = schedule.predicted_makespan_s;
  const double dt = sim.config().dt_s;
  r.tolerance_s = dt * static_cast<double>(std::max<std::size_t>(1, schedule.phases.size()));
  const double t0 = sim.now();

  std::map<ActuatorId, double> arrived;
  auto note_arrivals = [&] {
    for (const auto& [id, target] : targets) {
      if (arrived.count(id)) continue;
      if (std::abs(sim.state().states.at(id).height_cm - target) <= arrival_tol_cm) arrived[id] = sim.now() - t0;
    }
  };
  note_arrivals();

  double predicted_end = 0.0;
  for (const auto& ph : schedule.phases) {
    std::vector<ValveCommand> cmds;
    std::set<ActuatorId> ext(ph.extending.begin(), ph.extending.end());
    std::set<ActuatorId> ret(ph.retracting.begin(), ph.retracting.end());
    for (const auto& [id, a] : sim.layout().actuators) {
      cmds.push_back({id, ext.count(id) ? Valve::Open : Valve::Closed, ret.count(id) ? Valve::Open : Valve::Closed});
    }
    sim.apply(cmds);
    predicted_end += ph.duration_s;
    while (sim.now() - t0 < predicted_end - 1e-9) {
      const double remaining = predicted_end - (sim.now() - t0);
      sim.advance(remaining < dt - 1e-12 ? std::optional<double>(remaining) : std::nullopt);
      note_arrivals();
    }
    r.phase_end_predicted_s.push_back(predicted_end);
    r.phase_end_simulated_s.push_back(sim.now() - t0);
  }
  std::vector<ValveCommand> hold;
  for (const auto& [id, a] : sim.layout().actuators) hold.push_back({id, Valve::Closed, Valve::Closed});
  sim.apply(hold);

  r.simulated_makespan_s = 0.0;
  for (const auto& [id, target] : targets) {
    r.final_error_cm[id] = sim.state().states.at(id).height_cm - target;
    auto it = arrived.find(id);
    r.simulated_makespan_s = std::max(r.simulated_makespan_s, it == arrived.end() ? sim.now() - t0 : it->second);
    if (it == arrived.end()) r.diverged = true;
  }
  if (std::abs(r.simulated_makespan_s - r.predicted_makespan_s) > r.tolerance_s + 1e-9) r.diverged = true;
  return r;
}

// ---------------------------------------------------------------------------
// Schedule file

inline nlohmann::ordered_json to_json(const Schedule& s) {
  nlohmann::ordered_json phases = nlohmann::ordered_json::array();
  for (const auto& ph : s.phases) {
    nlohmann::ordered_json shares = nlohmann::ordered_json::object();
    for (const auto& [id, v] : ph.shares) shares[id] = v;
    phases.push_back({{"duration_s", ph.duration_s},
                      {"extending", ph.extending},
                      {"retracting", ph.retracting},
                      {"shares", shares}});
  }
  return {{"predicted_makespan_s", s.predicted_makespan_s}, {"phases", phases}};
}

template <class Json>
Schedule schedule_from_json(const Json& j) {
  try {
    Schedule s;
    for (const auto& p : j.at("phases")) {
      Phase ph;
      ph.duration_s = p.at("duration_s").template get<double>();
      ph.extending = p.value("extending", std::vector<std::string>{});
      ph.retracting = p.value("retracting", std::vector<std::string>{});
      if (p.contains("shares"))
        for (const auto& [id, v] : p.at("shares").items()) ph.shares[id] = v.template get<double>();
      s.phases.push_back(std::move(ph));
    }
    s.predicted_makespan_s = j.at("predicted_makespan_s").template get<double>();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Invalid, std::string("malformed schedule: ") + e.what());
  }
}

inline std::string serialize_schedule(const Schedule& s) { return to_json(s).dump(2) + "\n"; }

inline Schedule parse_schedule(const std::string& text) {
  try {
    return schedule_from_json(nlohmann::ordered_json::parse(text));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::Invalid, std::string("schedule is not valid JSON: ") + e.what());
  }
}

}  // namespace lifttiles
