/*
 * Copyright 2026 The magtrack Authors. All rights reserved.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// magtrack command-line driver.
//
// Exit codes: 0 ok, 1 I/O error, 2 configuration or flag error,
// 3 malformed or inconsistent input data, 4 accuracy assertion failed.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "magtrack/magtrack.hpp"

namespace fs = std::filesystem;
using namespace magtrack;

namespace {

enum Exit { kOk = 0, kIo = 1, kConfig = 2, kData = 3, kAssert = 4 };

struct CliExit {
  int code;
  std::string message;
};

[[noreturn]] void fail(int code, const std::string& message) { throw CliExit{code, message}; }

// Any failure to obtain a configuration is a configuration error.
template <class F>
auto config_step(F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    fail(kConfig, e.what());
  }
}

int data_exit(const Error& e) {
  switch (e.code()) {
    case ErrorCode::Io: return kIo;
    case ErrorCode::Parse:
    case ErrorCode::UnknownSensor: return kData;
    default: return kConfig;
  }
}

struct ConfigSource {
  std::string config_path;    // full run config
  std::string scenario_path;  // scenario object only
};

struct LoadedConfig {
  RunConfig run;
  bool seed_given = false;
};

LoadedConfig load_config(const ConfigSource& src) {
  if (!src.config_path.empty() && !src.scenario_path.empty()) fail(kConfig, "--config and --scenario are exclusive");
  LoadedConfig out;
  if (!src.config_path.empty()) {
    const json j = config_step([&] { return read_json_file(src.config_path); });
    out.run = config_step([&] { return run_config_from_json(j); });
    out.seed_given = j.is_object() && j.contains("scenario") && j["scenario"].is_object() && j["scenario"].contains("seed");
  } else if (!src.scenario_path.empty()) {
    const json j = config_step([&] { return read_json_file(src.scenario_path); });
    out.run = config_step([&] { return run_config_from_json(json{{"scenario", j}}); });
    out.seed_given = j.is_object() && j.contains("seed");
  }
  return out;
}

std::uint64_t resolve_seed(const LoadedConfig& c, const std::optional<std::uint64_t>& flag) {
  if (flag) return *flag;
  if (c.seed_given) return c.run.scenario.seed;
  return config_step([&] { return seed_from_env(c.run.scenario.seed); });
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(kIo, "cannot create directory " + dir + ": " + ec.message());
}

template <class F>
auto io_step(F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    fail(data_exit(e), e.what());
  }
}

struct SimArtifacts {
  SimOutput sim;
  ExportPaths paths;
  std::string layout_path;
};

SimArtifacts run_sim(const RunConfig& cfg, const std::string& out_dir) {
  ensure_dir(out_dir);
  SimArtifacts a{config_step([&] { return simulate(cfg.scenario); }), ExportPaths::in_dir(out_dir),
                 (fs::path(out_dir) / "layout.json").string()};
  io_step([&] {
    export_sim(a.sim.batch, a.sim.truth, a.paths);
    write_file(a.layout_path, layout_to_json(a.sim.layout).dump(2) + "\n");
    write_file((fs::path(out_dir) / "config.json").string(), to_json(cfg).dump(2) + "\n");
    return 0;
  });
  std::cout << "seed " << cfg.scenario.seed << "\n"
            << "vehicles " << a.sim.truth.vehicles.size() << "\n"
            << "events " << a.sim.batch.size() << "\n"
            << "true_detections " << a.sim.truth.labels.size() << "\n"
            << "false_detections " << a.sim.truth.false_detections.size() << "\n";
  return a;
}

struct TrackOptions {
  std::string layout_path;
  std::string events_path;
  std::string out_path = "tracks.jsonl";
  std::string updates_path;
  std::optional<double> window_s;
  std::optional<double> late_tolerance_s;
  std::optional<int> listen_port;
  bool batch = false;
};

void print_stats(const ReplayStats& stats) {
  std::cerr << "lines " << stats.lines << " accepted " << stats.accepted << " windows " << stats.windows << "\n";
  for (const auto& [reason, n] : stats.rejected) std::cerr << "rejected " << reason << " " << n << "\n";
}

// Live ingest: one client, timer driven by event time as in replay.
std::vector<VehicleTrack> listen(const SensorLayout& layout, const RunConfig& cfg, int port,
                                 const std::function<void(const TrajectoryUpdate&)>& on_update) {
  if (port < 0 || port > 65535) fail(kConfig, "--listen port out of range");
  auto listener = io_step([&] { return std::make_unique<LineListener>(static_cast<std::uint16_t>(port)); });
  std::cerr << "listening on 127.0.0.1:" << listener->port() << std::endl;
  StreamTracker tracker(layout, cfg.tracker, cfg.stream);
  const TimeUs window = seconds_to_us(cfg.stream.window_s);
  std::optional<TimeUs> next_fire;
  ReplayStats stats;
  io_step([&] {
    return listener->serve_one([&](std::string_view line) {
      ++stats.lines;
      std::string err;
      const auto d = parse_detection(line, &err);
      if (!d) {
        ++stats.rejected[to_string(RejectReason::Malformed)];
        std::cerr << "line " << stats.lines << " rejected: " << err << "\n";
        return;
      }
      if (!next_fire) next_fire = d->t_us + window;
      if (d->t_us > *next_fire) {
        const TimeUs fire = *next_fire + (d->t_us - *next_fire - 1) / window * window;
        ++stats.windows;
        on_update(tracker.on_timer(fire));
        next_fire = fire + window;
      }
      const IngestResult r = tracker.ingest(*d);
      if (r.accepted) {
        ++stats.accepted;
      } else {
        ++stats.rejected[to_string(r.reason)];
        std::cerr << "line " << stats.lines << " rejected: " << to_string(r.reason) << "\n";
      }
    });
  });
  ++stats.windows;
  on_update(tracker.finish());
  print_stats(stats);
  return tracker.snapshot();
}

std::vector<VehicleTrack> run_track(const RunConfig& base, const TrackOptions& o) {
  RunConfig cfg = base;
  if (o.window_s) cfg.stream.window_s = *o.window_s;
  if (o.late_tolerance_s) cfg.stream.late_tolerance_s = *o.late_tolerance_s;
  config_step([&] { cfg.validate(); return 0; });

  const json layout_json = config_step([&] { return read_json_file(o.layout_path); });
  const SensorLayout layout = config_step([&] {
    return layout_from_json(layout_json, cfg.scenario.layout.min_spacing_m, cfg.scenario.layout.max_spacing_m);
  });

  std::ofstream updates;
  if (!o.updates_path.empty()) {
    updates.open(o.updates_path, std::ios::trunc);
    if (!updates) fail(kIo, "cannot write " + o.updates_path);
  }
  auto on_update = [&](const TrajectoryUpdate& u) {
    if (updates.is_open() && !u.empty()) updates << update_to_json(u).dump() << '\n';
  };

  std::vector<VehicleTrack> tracks;
  if (o.listen_port) {
    tracks = listen(layout, cfg, *o.listen_port, on_update);
  } else {
    std::ifstream in(o.events_path);
    if (!in) fail(kIo, "cannot open " + o.events_path);
    const auto events = io_step([&] { return read_detections(in, &layout); });
    if (o.batch) {
      tracks = track_batch(events, layout, cfg.tracker);
    } else {
      ReplayStats stats;
      tracks = all_tracks(replay(events, layout, cfg.tracker, cfg.stream, on_update, &stats));
      print_stats(stats);
    }
  }
  io_step([&] { write_file(o.out_path, tracks_to_jsonl(tracks)); return 0; });
  std::cout << "tracks " << tracks.size() << "\n";
  return tracks;
}

struct EvalOptions {
  std::string tracks_path;
  std::string truth_path;
  std::string vehicles_path;
  std::string false_path;
  std::string out_path;
  std::string csv_path;
  std::optional<double> assert_accuracy;
};

int run_eval(const EvalOptions& o) {
  ExportPaths paths;
  paths.truth = o.truth_path;
  const fs::path dir = fs::path(o.truth_path).parent_path();
  paths.vehicles = !o.vehicles_path.empty() ? o.vehicles_path : (dir / "vehicles.jsonl").string();
  paths.false_detections = !o.false_path.empty() ? o.false_path : (dir / "false.jsonl").string();
  if (!fs::exists(o.truth_path)) fail(kIo, "cannot open " + o.truth_path);
  const GroundTruth truth = io_step([&] { return import_truth(paths); });

  std::ifstream in(o.tracks_path);
  if (!in) fail(kIo, "cannot open " + o.tracks_path);
  const auto tracks = io_step([&] { return tracks_from_jsonl(in); });

  AccuracyReport report;
  try {
    report = track_accuracy(tracks, truth);
  } catch (const Error& e) {
    fail(kData, e.what());
  }
  const json j = report_to_json(report);
  if (!o.out_path.empty()) io_step([&] { write_file(o.out_path, j.dump(2) + "\n"); return 0; });
  if (!o.csv_path.empty()) io_step([&] { write_file(o.csv_path, report_to_csv(report)); return 0; });
  std::cout << std::setprecision(6) << "track_accuracy " << report.track_accuracy << "\n"
            << "id_swaps " << report.id_swaps << "\n"
            << "truth_vehicles " << report.n_truth_vehicles << "\n"
            << "pred_vehicles " << report.n_pred_vehicles << "\n";
  if (report.mean_abs_speed_error_mps) std::cout << "mean_abs_speed_error_mps " << *report.mean_abs_speed_error_mps << "\n";
  if (o.assert_accuracy && !(report.track_accuracy >= *o.assert_accuracy)) {
    std::cerr << "accuracy " << report.track_accuracy << " below " << *o.assert_accuracy << "\n";
    return kAssert;
  }
  return kOk;
}

struct RiccatiFlags {
  std::string model = "CV";
  std::optional<double> q;
  std::optional<double> r;
  double dt = 1.0;
  int steps = 50;
  double a_max = kDefaultAMax;
  std::string out_path;
};

int run_riccati(const RiccatiFlags& f) {
  MotionModelConfig m;
  const auto trace = config_step([&] {
    m.kind = motion_kind_from_string(f.model);
    m.dt_s = f.dt;
    m.a_max = f.a_max;
    const double q = f.q.value_or(0.25 * f.a_max * f.a_max);
    m.q_cv = q;
    m.q_a = q;
    RiccatiOptions opt;
    if (f.r) {
      if (!(*f.r > 0.0)) throw Error(ErrorCode::InvalidArgument, "--r must be positive");
      opt.r = *f.r;
    }
    return covariance_trace(m, f.steps, opt);
  });
  std::ostringstream csv;
  csv << std::setprecision(17) << "step,velocity_variance\n";
  for (std::size_t i = 0; i < trace.size(); ++i) csv << (i + 1) << "," << trace[i] << "\n";
  if (f.out_path.empty()) {
    std::cout << csv.str();
  } else {
    io_step([&] { write_file(f.out_path, csv.str()); return 0; });
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"magtrack: vehicle trajectories from sparse magnetic sensor detections"};
  app.require_subcommand(1);

  ConfigSource sim_src;
  std::optional<std::uint64_t> sim_seed;
  std::string sim_out = "sim_out";
  auto* sim = app.add_subcommand("sim", "simulate a scenario and export events and ground truth");
  sim->add_option("--scenario", sim_src.scenario_path, "scenario JSON object");
  sim->add_option("--config", sim_src.config_path, "full run configuration JSON");
  sim->add_option("--seed", sim_seed, "seed override (fallback: config, then MAGTRACK_SEED)");
  sim->add_option("--out", sim_out, "output directory");

  ConfigSource track_src;
  TrackOptions track_opt;
  auto* track = app.add_subcommand("track", "reconstruct trajectories from an event log or socket");
  track->add_option("--layout", track_opt.layout_path, "layout.json")->required();
  track->add_option("--events", track_opt.events_path, "events.jsonl");
  track->add_option("--out", track_opt.out_path, "tracks.jsonl output");
  track->add_option("--config", track_src.config_path, "run configuration JSON");
  track->add_option("--window-s", track_opt.window_s, "timer period in seconds of event time (default 30)");
  track->add_option("--late-tolerance-s", track_opt.late_tolerance_s, "late-arrival tolerance in seconds (default 5)");
  track->add_option("--updates", track_opt.updates_path, "per-window trajectory updates (JSONL)");
  track->add_option("--listen", track_opt.listen_port, "read NDJSON events from TCP 127.0.0.1:PORT (0 = any)");
  track->add_flag("--batch", track_opt.batch, "single batch run instead of windowed replay");

  EvalOptions eval_opt;
  auto* eval = app.add_subcommand("eval", "score tracks against ground truth");
  eval->add_option("--tracks", eval_opt.tracks_path, "tracks.jsonl")->required();
  eval->add_option("--truth", eval_opt.truth_path, "truth.jsonl")->required();
  eval->add_option("--vehicles", eval_opt.vehicles_path, "vehicles.jsonl (default: next to truth)");
  eval->add_option("--false", eval_opt.false_path, "false.jsonl (default: next to truth)");
  eval->add_option("--out", eval_opt.out_path, "report.json output");
  eval->add_option("--csv", eval_opt.csv_path, "per-vehicle CSV output");
  eval->add_option("--assert-accuracy", eval_opt.assert_accuracy, "exit 4 when accuracy is below this");

  RiccatiFlags ric;
  auto* riccati = app.add_subcommand("riccati", "velocity variance of the covariance recursion as CSV");
  riccati->add_option("--model", ric.model, "CV or CA");
  riccati->add_option("--q", ric.q, "process noise variance (default (0.5 a_max)^2)");
  riccati->add_option("--r", ric.r, "measurement variance (default from the motion config)");
  riccati->add_option("--dt", ric.dt, "step in seconds");
  riccati->add_option("--steps", ric.steps, "number of steps");
  riccati->add_option("--a-max", ric.a_max, "maximum acceleration (m/s^2)");
  riccati->add_option("--out", ric.out_path, "CSV output (default stdout)");

  ConfigSource e2e_src;
  std::optional<std::uint64_t> e2e_seed;
  std::string e2e_out = "e2e_out";
  std::optional<double> e2e_window;
  std::optional<double> e2e_assert;
  auto* e2e = app.add_subcommand("e2e", "sim, track and eval in one run");
  e2e->add_option("--config", e2e_src.config_path, "run configuration JSON");
  e2e->add_option("--scenario", e2e_src.scenario_path, "scenario JSON object");
  e2e->add_option("--seed", e2e_seed, "seed override");
  e2e->add_option("--out", e2e_out, "output directory");
  e2e->add_option("--window-s", e2e_window, "timer period in seconds");
  e2e->add_option("--assert-accuracy", e2e_assert, "exit 4 when accuracy is below this");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfig;
  }

  try {
    if (*sim) {
      LoadedConfig c = load_config(sim_src);
      c.run.scenario.seed = resolve_seed(c, sim_seed);
      run_sim(c.run, sim_out);
      return kOk;
    }
    if (*track) {
      if (!track_opt.listen_port && track_opt.events_path.empty()) fail(kConfig, "track needs --events or --listen");
      run_track(load_config(track_src).run, track_opt);
      return kOk;
    }
    if (*eval) return run_eval(eval_opt);
    if (*riccati) return run_riccati(ric);
    if (*e2e) {
      LoadedConfig c = load_config(e2e_src);
      c.run.scenario.seed = resolve_seed(c, e2e_seed);
      const SimArtifacts a = run_sim(c.run, e2e_out);
      TrackOptions t;
      t.layout_path = a.layout_path;
      t.events_path = a.paths.events;
      t.out_path = (fs::path(e2e_out) / "tracks.jsonl").string();
      t.updates_path = (fs::path(e2e_out) / "updates.jsonl").string();
      t.window_s = e2e_window;
      run_track(c.run, t);
      EvalOptions ev;
      ev.tracks_path = t.out_path;
      ev.truth_path = a.paths.truth;
      ev.vehicles_path = a.paths.vehicles;
      ev.false_path = a.paths.false_detections;
      ev.out_path = (fs::path(e2e_out) / "report.json").string();
      ev.csv_path = (fs::path(e2e_out) / "per_vehicle.csv").string();
      ev.assert_accuracy = e2e_assert;
      return run_eval(ev);
    }
  } catch (const CliExit& e) {
    std::cerr << "error: " << e.message << "\n";
    return e.code;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return data_exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  }
  return kOk;
}
