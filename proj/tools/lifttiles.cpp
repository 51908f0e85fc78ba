// lifttiles: run the control service, plan transitions, drive a running
// service from the command line, and audit simulation traces.
//
// Exit status: 0 success, 1 runtime failure, 2 invalid input, 3 timeout.

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <thread>

#include "CLI11.hpp"
#include "lifttiles/lifttiles.hpp"
#include "lifttiles/server.hpp"

namespace lt = lifttiles;
namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitInvalid = 2;
constexpr int kExitTimeout = 3;

std::atomic<bool> g_interrupted{false};

extern "C" void on_signal(int) { g_interrupted = true; }

struct LayoutArgs {
  std::string grid = "5x5";
  std::string file;
  std::string lines = "row";
  int compressors = 1;
  double pitch_cm = 30.0;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--grid", grid, "Grid size as ROWSxCOLS")->capture_default_str();
    cmd->add_option("--layout", file, "Layout JSON file (overrides --grid)")->check(CLI::ExistingFile);
    cmd->add_option("--lines", lines, "Supply line per row, column or single")
        ->check(CLI::IsMember({"row", "column", "single"}))
        ->capture_default_str();
    cmd->add_option("--compressors", compressors, "Compressors per supply line")->capture_default_str();
    cmd->add_option("--pitch", pitch_cm, "Grid pitch in cm")->capture_default_str();
  }

  lt::Layout build() const {
    if (!file.empty()) return lt::parse_layout(lt::read_text_file(file));
    int rows = 0, cols = 0;
    char x = 0;
    std::istringstream in(grid);
    if (!(in >> rows >> x >> cols) || (x != 'x' && x != 'X') || !in.eof())
      throw lt::Error(lt::ErrorCode::Invalid, "grid must look like 5x5, got '" + grid + "'");
    lt::GridOptions o;
    o.lines = lines == "row" ? lt::LinePolicy::PerRow
              : lines == "column" ? lt::LinePolicy::PerColumn
                                  : lt::LinePolicy::Single;
    o.compressors_per_line = compressors;
    return lt::build_grid_layout(rows, cols, lt::ActuatorSpec{}, pitch_cm, o);
  }
};

struct SimArgs {
  std::uint64_t seed = 1;
  double sigma_cm = lt::SimConfig{}.sensor_noise_sigma_cm;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--seed", seed, "Simulator seed (LIFTTILES_SEED overrides)")->capture_default_str();
    cmd->add_option("--sensor-sigma", sigma_cm, "Sensor noise sigma in cm")->capture_default_str();
  }

  lt::SimConfig build() const {
    lt::SimConfig c;
    c.seed = seed;
    if (const char* env = std::getenv("LIFTTILES_SEED"); env && *env) {
      try {
        c.seed = std::stoull(env);
      } catch (const std::exception&) {
        throw lt::Error(lt::ErrorCode::Invalid, std::string("LIFTTILES_SEED is not a number: ") + env);
      }
    }
    c.sensor_noise_sigma_cm = sigma_cm;
    return c;
  }
};

// A heightmap argument is a file path or a preset name.
lt::Heightmap heightmap_arg(const std::string& arg, const lt::Layout& layout) {
  if (fs::exists(arg) || arg.find_first_of("/.") != std::string::npos)
    return lt::load_heightmap(lt::read_text_file(arg), layout);
  return lt::preset(lt::preset_from(arg), layout);
}

std::map<lt::ActuatorId, double> resting(const lt::Layout& layout) {
  std::map<lt::ActuatorId, double> out;
  for (const auto& [id, a] : layout.actuators) out[id] = a.spec.min_height_cm;
  return out;
}

std::string fixed(double v, int digits = 1) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

void print_schedule(const lt::Schedule& s, const std::string& planner, double lower_bound) {
  double t = 0.0;
  for (std::size_t i = 0; i < s.phases.size(); ++i) {
    const auto& p = s.phases[i];
    std::cout << "phase " << i + 1 << "  " << fixed(t, 2) << " .. " << fixed(t + p.duration_s, 2) << " s";
    if (!p.extending.empty()) {
      std::cout << "  extend";
      for (const auto& id : p.extending) std::cout << ' ' << id << '@' << fixed(p.shares.at(id), 2);
    }
    if (!p.retracting.empty()) {
      std::cout << "  retract";
      for (const auto& id : p.retracting) std::cout << ' ' << id;
    }
    std::cout << '\n';
    t += p.duration_s;
  }
  std::cout << "planner " << planner << "\nlower bound " << fixed(lower_bound) << " s\nmakespan "
            << fixed(s.predicted_makespan_s) << " s\n";
}

// Splits host:port; a bare number is a port on the loopback address.
std::pair<std::string, unsigned short> endpoint_arg(const std::string& arg) {
  const auto colon = arg.rfind(':');
  const std::string host = colon == std::string::npos ? "127.0.0.1" : arg.substr(0, colon);
  const std::string port = colon == std::string::npos ? arg : arg.substr(colon + 1);
  try {
    std::size_t used = 0;
    const unsigned long p = std::stoul(port, &used);
    if (used == port.size() && p <= 65535) return {host, static_cast<unsigned short>(p)};
  } catch (const std::exception&) {
  }
  throw lt::Error(lt::ErrorCode::Invalid, "bad endpoint '" + arg + "'; expected host:port");
}

int run_service(const LayoutArgs& layout_args, const SimArgs& sim_args, const std::string& listen,
                std::optional<unsigned short> ws_port, int tick_ms, const std::string& trace_path) {
  lt::SessionConfig config;
  config.sim = sim_args.build();
  lt::Session session(layout_args.build(), config);
  std::ofstream trace;
  if (!trace_path.empty()) {
    trace.open(trace_path);
    if (!trace) throw std::runtime_error("cannot write " + trace_path);
    session.attach_trace(&trace);
  }

  lt::ServiceOptions options;
  std::tie(options.host, options.port) = endpoint_arg(listen);
  options.ws_port = ws_port;
  options.tick_ms = tick_ms;
  lt::Service service(std::move(session), options);

  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  service.start();
  std::cout << "listening on " << options.host << ':' << service.port();
  if (service.ws_port()) std::cout << " (websocket " << *service.ws_port() << ')';
  std::cout << "\nseed " << config.sim.seed << std::endl;
  while (!g_interrupted) std::this_thread::sleep_for(std::chrono::milliseconds(50));
  service.stop();
  std::cout << "stopped\n";
  return 0;
}

int apply_remote(const std::string& connect, const LayoutArgs& layout_args, const std::string& target,
                 double timeout_s) {
  namespace asio = boost::asio;
  const lt::Layout layout = layout_args.build();
  const lt::Heightmap goal = heightmap_arg(target, layout);
  const auto [host, port] = endpoint_arg(connect);

  asio::io_context io;
  asio::ip::tcp::socket socket(io);
  boost::system::error_code ec;
  socket.connect({asio::ip::make_address(host, ec), port}, ec);
  if (ec) throw std::runtime_error("cannot connect to " + connect + ": " + ec.message());

  auto send = [&](lt::FrameKind kind, const std::string& id, json payload) {
    asio::write(socket, asio::buffer(lt::encode_frame({kind, id, std::nullopt, std::move(payload)}) + "\n"));
  };
  json targets = json::object();
  for (const auto& [id, cm] : goal.entries) targets[id] = cm;
  send(lt::FrameKind::Subscribe, "apply-watch", json::object());
  send(lt::FrameKind::SetTarget, "apply", {{"targets", targets}});

  const auto deadline = std::chrono::steady_clock::now() +
                        std::chrono::duration_cast<std::chrono::steady_clock::duration>(std::chrono::duration<double>(timeout_s));
  asio::streambuf buffer;
  bool acked = false;
  std::optional<json> last;
  while (std::chrono::steady_clock::now() < deadline) {
    std::optional<std::size_t> got;
    asio::async_read_until(socket, buffer, '\n', [&](boost::system::error_code e, std::size_t n) {
      if (e) throw std::runtime_error("connection lost: " + e.message());
      got = n;
    });
    io.restart();
    io.run_until(deadline);
    if (!got) break;
    std::string line(asio::buffers_begin(buffer.data()), asio::buffers_begin(buffer.data()) + *got);
    buffer.consume(*got);
    const lt::Frame f = lt::decode_frame(line);
    if (f.kind == lt::FrameKind::Err) {
      std::cerr << "error: " << f.payload.value("code", "") << ": " << f.payload.value("message", "") << '\n';
      return kExitInvalid;
    }
    if (f.id == "apply") acked = true;
    if (f.kind != lt::FrameKind::StateSnapshot || !acked) continue;
    last = f.payload;
    if (f.payload.value("settled", false)) {
      std::cout << "settled at t=" << fixed(f.payload["t_s"].get<double>(), 2) << " s\n";
      for (const auto& a : f.payload["actuators"])
        std::cout << a["id"].get<std::string>() << "  " << fixed(a["height_cm"].get<double>()) << " cm\n";
      return 0;
    }
  }
  std::cerr << "timed out after " << fixed(timeout_s) << " s";
  if (last) std::cerr << " (t=" << fixed((*last)["t_s"].get<double>(), 2) << " s)";
  std::cerr << '\n';
  return kExitTimeout;
}

int transition(const LayoutArgs& layout_args, const SimArgs& sim_args, const std::string& from,
               const std::string& to, double timeout_s, const std::string& trace_path) {
  const lt::Layout layout = layout_args.build();
  const lt::SimConfig config = sim_args.build();
  auto start = resting(layout);
  if (!from.empty()) start = lt::overlay(start, heightmap_arg(from, layout));
  const auto goal = lt::overlay(start, heightmap_arg(to, layout));

  lt::SimState initial = lt::initial_state(layout, config);
  for (const auto& [id, cm] : start) initial.states.at(id).height_cm = cm;
  lt::Simulation sim(layout, config, initial);
  std::ofstream trace;
  if (!trace_path.empty()) {
    trace.open(trace_path);
    if (!trace) throw std::runtime_error("cannot write " + trace_path);
    sim.attach_trace(&trace);
  }
  const double predicted = lt::plan_greedy({layout, start, goal}).predicted_makespan_s;
  const auto report = lt::run_to_target(sim, {goal}, {}, timeout_s, false);

  double worst = 0.0;
  for (const auto& [id, r] : report.residual_cm) worst = std::max(worst, std::abs(r));
  std::cout << "seed " << config.seed << "\nplanned " << fixed(predicted, 2) << " s\n";
  if (!report.settled) {
    std::cout << "not settled after " << fixed(timeout_s) << " s, worst residual " << fixed(worst, 2) << " cm\n";
    return kExitTimeout;
  }
  std::cout << "settled " << fixed(report.elapsed_s(), 2) << " s\nworst residual " << fixed(worst, 2)
            << " cm\nmax overshoot " << fixed(report.max_overshoot_cm, 2) << " cm\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pneumatic lift-tile array controller and simulator"};
  app.require_subcommand(1);

  LayoutArgs layout_args;
  SimArgs sim_args;

  auto* run = app.add_subcommand("run", "Serve the frame protocol over TCP and WebSocket");
  std::string listen = "127.0.0.1:7070", trace_path;
  std::optional<unsigned short> ws_port;
  int tick_ms = 50;
  layout_args.add_to(run);
  sim_args.add_to(run);
  run->add_option("--listen", listen, "TCP endpoint host:port")->capture_default_str();
  run->add_option("--ws-port", ws_port, "Also accept WebSocket clients on this port");
  run->add_option("--tick-ms", tick_ms, "Wall-clock period of one simulation tick")->capture_default_str();
  run->add_option("--trace", trace_path, "Write a simulation trace");

  auto* plan = app.add_subcommand("plan", "Plan a transition between two heightmaps");
  std::string from, to;
  bool exact = false, as_json = false;
  layout_args.add_to(plan);
  plan->add_option("--from", from, "Start heightmap file or preset (default: all retracted)");
  plan->add_option("--to", to, "Goal heightmap file or preset")->required();
  plan->add_flag("--exact", exact, "Use the exact planner (at most 4 moving units)");
  plan->add_flag("--json", as_json, "Print the schedule as JSON");

  auto* apply = app.add_subcommand("apply", "Send a heightmap to a running service and wait until it settles");
  std::string connect = "127.0.0.1:7070";
  double timeout_s = 120.0;
  layout_args.add_to(apply);
  apply->add_option("--connect", connect, "Service endpoint host:port")->capture_default_str();
  apply->add_option("--to", to, "Goal heightmap file or preset")->required();
  apply->add_option("--timeout", timeout_s, "Seconds to wait for settling")->capture_default_str();

  auto* trans = app.add_subcommand("transition", "Run one closed-loop transition offline");
  layout_args.add_to(trans);
  sim_args.add_to(trans);
  trans->add_option("--from", from, "Start heightmap file or preset (default: all retracted)");
  trans->add_option("--to", to, "Goal heightmap file or preset")->required();
  trans->add_option("--timeout", timeout_s, "Simulated seconds before giving up")->capture_default_str();
  trans->add_option("--trace", trace_path, "Write a simulation trace");

  auto* replay = app.add_subcommand("replay", "Re-run a trace and compare every recorded state");
  std::string replay_path;
  replay->add_option("trace", replay_path, "Trace file")->required()->check(CLI::ExistingFile);

  auto* presets = app.add_subcommand("preset", "Bundled shape presets");
  presets->require_subcommand(1);
  presets->add_subcommand("list", "List preset names");
  auto* show = presets->add_subcommand("show", "Print a preset laid over a layout");
  std::string preset_name;
  std::optional<double> flat_cm;
  show->add_option("name", preset_name, "Preset name")->required();
  show->add_option("--height", flat_cm, "Fill height for Flat, in cm");
  layout_args.add_to(show);

  auto* layout_cmd = app.add_subcommand("layout", "Print a grid layout as JSON");
  layout_args.add_to(layout_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitInvalid;
  }

  try {
    if (*run) return run_service(layout_args, sim_args, listen, ws_port, tick_ms, trace_path);

    if (*plan) {
      const lt::Layout layout = layout_args.build();
      auto start = resting(layout);
      if (!from.empty()) start = lt::overlay(start, heightmap_arg(from, layout));
      const lt::TransitionProblem problem{layout, start, lt::overlay(start, heightmap_arg(to, layout))};
      const auto schedule = exact ? lt::plan_exact(problem) : lt::plan_greedy(problem);
      if (as_json)
        std::cout << lt::serialize_schedule(schedule);
      else
        print_schedule(schedule, exact ? "exact" : "greedy", lt::lower_bound_makespan(problem));
      return 0;
    }

    if (*apply) return apply_remote(connect, layout_args, to, timeout_s);
    if (*trans) return transition(layout_args, sim_args, from, to, timeout_s, trace_path);

    if (*replay) {
      std::ifstream in(replay_path);
      const auto r = lt::replay_trace(in);
      if (r.identical) {
        std::cout << "identical (" << r.states_checked << " states)\n";
        return 0;
      }
      std::cout << "diverged at line " << r.line << ": " << r.detail << '\n';
      return kExitFailure;
    }

    if (*presets) {
      if (*show) {
        const lt::Layout layout = layout_args.build();
        lt::PresetOptions o;
        o.flat_height_cm = flat_cm;
        std::cout << lt::serialize_heightmap_grid(lt::preset(lt::preset_from(preset_name), layout, o), layout);
      } else {
        for (auto p : lt::kAllPresets) std::cout << lt::to_string(p) << '\n';
      }
      return 0;
    }

    if (*layout_cmd) {
      std::cout << lt::serialize_layout(layout_args.build());
      return 0;
    }
  } catch (const lt::Error& e) {
    std::cerr << "error: " << lt::to_string(e.code()) << ": " << e.what() << '\n';
    return e.code() == lt::ErrorCode::Timeout ? kExitTimeout : kExitInvalid;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitFailure;
}
