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

// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "magtrack/magtrack.hpp"

namespace {

using namespace magtrack;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void report(int n, bool ok, const std::string& detail) {
  std::printf("%s criterion %d: %s\n", ok ? "PASS" : "FAIL", n, detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

// exhaustive permutation search; -inf if no feasible permutation
double brute_force_best(const Eigen::MatrixXd& s) {
  const int n = static_cast<int>(s.rows());
  std::vector<int> p(static_cast<std::size_t>(n));
  std::iota(p.begin(), p.end(), 0);
  double best = -std::numeric_limits<double>::infinity();
  do {
    double sum = 0.0;
    for (int r = 0; r < n && sum != -std::numeric_limits<double>::infinity(); ++r) sum += s(r, p[r]);
    best = std::max(best, sum);
  } while (std::next_permutation(p.begin(), p.end()));
  return best;
}

void criterion1() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::size_t checked = 0, mismatches = 0;
  double worst = 0.0;
  for (int n = 2; n <= 7; ++n) {
    int done = 0;
    while (done < 1000) {
      Eigen::MatrixXd s(n, n);
      for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c)
          s(r, c) = u(rng) < 0.15 ? -std::numeric_limits<double>::infinity() : std::log(1e-4 + u(rng));
      const double best = brute_force_best(s);
      if (!std::isfinite(best)) continue;
      const Assignment a = max_weight_assignment(s);
      double sum = 0.0;
      for (const auto& [r, c] : a.matches) sum += s(r, c);
      const double err = std::max(std::abs(sum - best), std::abs(a.total_log_weight - best));
      worst = std::max(worst, err);
      if (!(err <= 1e-9)) ++mismatches;
      ++done;
      ++checked;
    }
  }
  const double secs = seconds_since(t0);
  report(1, mismatches == 0 && secs < 10.0,
         std::to_string(checked) + " matrices n=2..7, " + std::to_string(mismatches) + " mismatches, max error " +
             fmt("%.3g", worst) + ", " + fmt("%.2f s", secs));
}

double accuracy_of(const Scenario& sc, std::size_t* swaps = nullptr) {
  const SimOutput out = simulate(sc);
  const AccuracyReport r = track_accuracy(track_batch(out.batch.flatten(), out.layout, {}), out.truth);
  if (swaps) *swaps = r.id_swaps;
  return r.track_accuracy;
}

void criterion2() {
  const auto t0 = Clock::now();
  double sum = 0.0, lo = 1.0;
  std::size_t vehicles = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Scenario sc;  // 2 lanes x 1.5 km, 15 m spacing, 1/6 veh/s per lane over 600 s, CV, 8-25 m/s
    sc.seed = seed;
    const SimOutput out = simulate(sc);
    vehicles += out.truth.vehicles.size();
    const double a =
        track_accuracy(track_batch(out.batch.flatten(), out.layout, {}), out.truth).track_accuracy;
    sum += a;
    lo = std::min(lo, a);
  }
  const double mean = sum / 10.0, secs = seconds_since(t0);
  report(2, mean >= 0.95 && secs < 60.0,
         "mean accuracy " + fmt("%.4f", mean) + " (min " + fmt("%.4f", lo) + ") over 10 seeds, " +
             fmt("%.1f", vehicles / 10.0) + " vehicles per seed, " + fmt("%.2f s", secs));
}

void criterion3() {
  int perfect = 0;
  std::size_t swaps_total = 0;
  double lo = 1.0;
  const double sigma_t = AssociationConfig{}.sigma_t_s;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Scenario sc;
    sc.seed = seed;
    sc.p_l = 0.0;
    sc.sigma_dt_s = 0.0;
    sc.p_false = 0.0;
    sc.min_headway_s = std::max(sc.min_headway_s, 5.0 * sigma_t);
    std::size_t swaps = 0;
    const double a = accuracy_of(sc, &swaps);
    lo = std::min(lo, a);
    swaps_total += swaps;
    perfect += (a == 1.0 && swaps == 0);
  }
  report(3, perfect == 10,
         std::to_string(perfect) + "/10 seeds exact, min accuracy " + fmt("%.6f", lo) + ", id swaps " +
             std::to_string(swaps_total));
}

void criterion4() {
  MotionModelConfig base;
  auto run = [&](MotionKind kind, double q) {
    MotionModelConfig m = base;
    m.kind = kind;
    m.q_cv = q;
    m.q_a = q;
    return covariance_trace(m, 2000);
  };
  const double half = std::pow(0.5 * base.a_max, 2), full = std::pow(base.a_max, 2);
  const std::vector<double> cv = run(MotionKind::CV, half);
  const std::vector<double> ca_half = run(MotionKind::CA, half);
  const std::vector<double> ca_full = run(MotionKind::CA, full);
  auto converged = [](const std::vector<double>& v) { return std::abs(v.back() - v[v.size() - 2]) < 1e-9; };
  const bool conv = converged(cv) && converged(ca_half) && converged(ca_full);
  const bool order = cv.back() < ca_half.back() && ca_half.back() < ca_full.back();
  report(4, conv && order,
         "steady velocity variance CV " + fmt("%.4f", cv.back()) + " < CA(0.5 a_max) " + fmt("%.4f", ca_half.back()) +
             " < CA(a_max) " + fmt("%.4f", ca_full.back()) + (conv ? ", all converged" : ", not converged"));
}

void criterion5() {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int identical = 0;
  std::size_t points = 0;
  for (int i = 0; i < 20; ++i) {
    Scenario sc;
    sc.layout.lanes = 1 + static_cast<int>(u(rng) * 3);
    sc.layout.length_m = 300.0 + 900.0 * u(rng);
    sc.layout.spacing_m = 8.0 + 7.0 * u(rng);
    sc.duration_s = 120.0 + 300.0 * u(rng);
    sc.arrival_rate = 0.05 + 0.3 * u(rng);
    sc.motion = u(rng) < 0.5 ? MotionKind::CV : MotionKind::CA;
    sc.p_l = 0.1 * u(rng);
    sc.sigma_dt_s = 0.1 * u(rng);
    sc.p_false = 0.01 * u(rng);
    sc.false_above_fraction = u(rng);
    sc.seed = 100 + static_cast<std::uint64_t>(i);
    const SimOutput out = simulate(sc);
    TrackerConfig cfg;
    cfg.motion.kind = sc.motion;
    const std::vector<Detection> events = out.batch.flatten();
    const std::string batch = tracks_to_jsonl(track_batch(events, out.layout, cfg));
    points += static_cast<std::size_t>(std::count(batch.begin(), batch.end(), '\n'));
    bool same = true;
    for (double w : {5.0, 30.0, 3600.0}) {
      StreamConfig st;
      st.window_s = w;
      same = same && tracks_to_jsonl(all_tracks(replay(events, out.layout, cfg, st))) == batch;
    }
    identical += same;
  }
  report(5, identical == 20,
         std::to_string(identical) + "/20 scenarios byte-identical for windows 5, 30, 3600 s (" +
             std::to_string(points) + " batch track points)");
}

void criterion6() {
  std::size_t hops = 0, mismatches = 0, near_zero = 0;
  struct Case {
    MotionKind kind;
    double a_lo, a_hi;
  };
  const Case cases[] = {{MotionKind::CV, 0.0, 0.0}, {MotionKind::CA, -0.3, 0.3}, {MotionKind::CA, -1e-6, 1e-6}};
  std::uint64_t seed = 1;
  for (const Case& cs : cases) {
    std::size_t case_hops = 0;
    while (case_hops < 4000) {
      Scenario sc;
      sc.duration_s = 300.0;
      sc.motion = cs.kind;
      sc.accel_range = {cs.a_lo, cs.a_hi};
      sc.p_l = 0.0;
      sc.sigma_dt_s = 0.0;
      sc.p_false = 0.0;
      sc.seed = seed++;
      const SimOutput out = simulate(sc);
      std::map<int, const TruthVehicle*> vehicles;
      for (const TruthVehicle& v : out.truth.vehicles) vehicles[v.vehicle_id] = &v;
      // consecutive detections of one vehicle on adjacent sensors
      std::map<int, std::vector<const TruthLabel*>> by_vehicle;
      for (const TruthLabel& l : out.truth.labels) by_vehicle[l.vehicle_id].push_back(&l);
      for (auto& [vid, ls] : by_vehicle) {
        std::sort(ls.begin(), ls.end(), [](auto* a, auto* b) { return a->t_us < b->t_us; });
        const double a = vehicles.at(vid)->accel_mps2;
        for (std::size_t k = 1; k < ls.size(); ++k) {
          const double d = ls[k]->chainage_m - ls[k - 1]->chainage_m;
          const TimeUs expect = cs.kind == MotionKind::CV
                                    ? predict_arrival_cv(ls[k - 1]->t_us, ls[k - 1]->speed_mps, d)
                                    : predict_arrival_ca(ls[k - 1]->t_us, ls[k - 1]->speed_mps, a, d);
          mismatches += expect != ls[k]->t_us;
          near_zero += cs.kind == MotionKind::CA && std::abs(a) <= 1e-6;
          ++case_hops;
        }
      }
    }
    hops += case_hops;
  }
  report(6, mismatches == 0 && hops >= 10000 && near_zero > 0,
         std::to_string(hops) + " passages (" + std::to_string(near_zero) + " with |a| <= 1e-6), " +
             std::to_string(mismatches) + " off by at least 1 us");
}

void criterion7() {
  const SensorLayout layout = build_layout({1, 30.0, 15.0});
  const Lane& lane = layout.lanes().front();
  const AssociationConfig assoc;
  const MotionModelConfig motion;
  std::mt19937_64 rng(7);
  std::normal_distribution<double> jitter(0.0, 0.05);

  auto instance = [&](int n, std::vector<TrackHead>& tracks, std::vector<Detection>& dets) {
    tracks.clear();
    dets.clear();
    // dense: every track gates every detection
    for (int i = 0; i < n; ++i) {
      TrackHead h;
      h.vehicle_id = "V" + std::to_string(i);
      h.last_sensor = lane.sensors[0].sensor_id;
      h.state = initial_state(motion, 1'000'000 + i * 10'000, lane.sensors[0].chainage_m);
      tracks.push_back(h);
      const TimeUs t = 1'000'000 + i * 10'000 + seconds_to_us(15.0 / 16.7 + jitter(rng));
      dets.push_back({lane.sensors[1].sensor_id, t, {1.0, 0.0, 0.0}, 100.0});
    }
  };

  const std::vector<int> sizes{25, 50, 100, 200};
  std::vector<double> times;
  double step200 = 0.0;
  std::vector<TrackHead> tracks;
  std::vector<Detection> dets;
  for (int n : sizes) {
    instance(n, tracks, dets);
    double best = std::numeric_limits<double>::infinity();
    double spent = 0.0;
    int reps = 0;
    while (reps < 3 || (spent < 0.3 && reps < 200)) {
      const auto t0 = Clock::now();
      const SensorDecision dec = associate_sensor(tracks, dets, layout, assoc, motion);
      const double s = seconds_since(t0);
      if (dec.assignment.matches.size() != static_cast<std::size_t>(2 * n)) best = -1.0;
      best = std::min(best, s);
      spent += s;
      ++reps;
      if (n == 200) step200 = std::max(step200, s);
    }
    times.push_back(best);
  }
  // least-squares slope of log t against log n
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    mx += std::log(sizes[i]);
    my += std::log(times[i]);
  }
  mx /= sizes.size();
  my /= sizes.size();
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    sxy += (std::log(sizes[i]) - mx) * (std::log(times[i]) - my);
    sxx += (std::log(sizes[i]) - mx) * (std::log(sizes[i]) - mx);
  }
  const double slope = sxy / sxx;
  std::string detail = "log-log slope " + fmt("%.2f", slope) + ", times";
  for (double t : times) detail += fmt(" %.2e s", t);
  detail += ", slowest 200-detection step " + fmt("%.3f s", step200);
  report(7, slope <= 3.3 && step200 < 1.0 && times.front() > 0.0, detail);
}

void criterion8() {
  const SensorLayout layout = build_layout({2, 300.0, 15.0});
  StreamTracker tracker(layout, {}, {});
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<int> byte(0, 255), len(0, 200), pick(0, 9);
  const std::string valid =
      R"({"sensor_id":"L0-S0001","t_us":1000000,"direction":[0.6,0.8,0.0],"strength_nT":120.5})";
  std::size_t accepted = 0, rejected = 0, unexplained = 0;
  std::map<std::string, std::size_t> reasons;
  for (int i = 0; i < 100000; ++i) {
    std::string line;
    if (pick(rng) < 3) {
      // mutated valid record
      line = valid;
      const int edits = 1 + pick(rng) % 4;
      for (int e = 0; e < edits; ++e) line[static_cast<std::size_t>(byte(rng)) % line.size()] = static_cast<char>(byte(rng));
    } else {
      line.resize(static_cast<std::size_t>(len(rng)));
      for (char& c : line) c = static_cast<char>(byte(rng));
    }
    const IngestResult r = tracker.ingest_line(line);
    if (r.accepted) {
      ++accepted;
    } else {
      ++rejected;
      ++reasons[to_string(r.reason)];
      unexplained += r.message.empty();
    }
  }
  tracker.finish();
  std::string detail = "100000 lines: " + std::to_string(accepted) + " accepted, " + std::to_string(rejected) +
                       " rejected (";
  for (const auto& [k, v] : reasons) detail += k + " " + std::to_string(v) + " ";
  detail.back() = ')';
  detail += ", " + std::to_string(unexplained) + " without a reason";
  report(8, accepted + rejected == 100000 && unexplained == 0, detail);
}

}  // namespace

int main() {
  const std::vector<std::function<void()>> criteria{criterion1, criterion2, criterion3, criterion4,
                                                    criterion5, criterion6, criterion7, criterion8};
  for (const auto& c : criteria) {
    try {
      c();
    } catch (const std::exception& e) {
      report(static_cast<int>(&c - criteria.data()) + 1, false, std::string("exception: ") + e.what());
    }
  }
  return failures == 0 ? 0 : 1;
}
