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

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "magtrack/association.hpp"
#include "magtrack/io.hpp"
#include "magtrack/matching.hpp"
#include "magtrack/sim.hpp"

namespace magtrack {

inline constexpr const char* kAccuracyMetric =
    "detection-level: each truth vehicle is paired one-to-one with the predicted track sharing the most of its "
    "detections; accuracy = detections on their vehicle's paired track / (true detections + false detections "
    "absorbed into tracks)";

struct VehicleAccuracy {
  int vehicle_id = 0;
  std::size_t detections = 0;
  std::size_t correct = 0;
  std::size_t tracks = 0;  // predicted tracks holding at least one of its detections
  std::string matched_track;
};

struct AccuracyReport {
  double track_accuracy = 1.0;
  std::size_t n_truth_vehicles = 0;
  std::size_t n_pred_vehicles = 0;
  std::size_t id_swaps = 0;
  std::size_t true_detections = 0;
  std::size_t correct_detections = 0;
  std::size_t absorbed_false = 0;
  std::optional<double> mean_abs_speed_error_mps;
  std::vector<VehicleAccuracy> per_vehicle;
};

struct SpeedErrorStats {
  double mean = 0.0;
  double max = 0.0;
  std::size_t n = 0;
};

namespace detail {

struct TrackVehicleOverlap {
  std::vector<int> vehicles;                        // truth ids with at least one label
  std::vector<std::map<int, std::size_t>> counts;   // per pred track: truth vehicle -> hits
  std::vector<std::size_t> track_hits;              // per pred track: true detections held
  std::size_t absorbed_false = 0;
  std::map<int, std::size_t> vehicle_detections;
  std::map<int, std::string> paired_track;          // truth vehicle -> pred track id
  std::map<int, std::size_t> paired_overlap;
};

inline TrackVehicleOverlap overlap(const std::vector<VehicleTrack>& pred, const GroundTruth& truth) {
  TrackVehicleOverlap o;
  const auto labels = truth.label_index();
  std::set<std::pair<SensorId, TimeUs>> falses;
  for (const FalseDetection& f : truth.false_detections) falses.emplace(f.sensor_id, f.t_us);
  for (const TruthLabel& l : truth.labels) ++o.vehicle_detections[l.vehicle_id];
  for (const auto& [vid, n] : o.vehicle_detections) o.vehicles.push_back(vid);

  o.counts.resize(pred.size());
  o.track_hits.assign(pred.size(), 0);
  for (std::size_t t = 0; t < pred.size(); ++t) {
    for (const TrackPoint& p : pred[t].points) {
      if (!p.sensor_id) continue;
      auto it = labels.find({*p.sensor_id, p.t_us});
      if (it != labels.end()) {
        ++o.counts[t][it->second];
        ++o.track_hits[t];
      } else if (falses.count({*p.sensor_id, p.t_us})) {
        ++o.absorbed_false;
      } else {
        throw Error(ErrorCode::InvalidArgument, "track " + pred[t].vehicle_id + " holds detection (" +
                                                    *p.sensor_id + ", " + std::to_string(p.t_us) +
                                                    ") that is not in the ground truth");
      }
    }
  }

  // one-to-one pairing maximizing the shared detections
  std::map<int, std::size_t> vcol;
  for (std::size_t k = 0; k < o.vehicles.size(); ++k) vcol[o.vehicles[k]] = k;
  const auto n = static_cast<Eigen::Index>(std::max(pred.size(), o.vehicles.size()));
  Eigen::MatrixXd score = Eigen::MatrixXd::Zero(n, n);
  for (std::size_t t = 0; t < pred.size(); ++t) {
    for (const auto& [vid, c] : o.counts[t]) score(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(vcol[vid])) = static_cast<double>(c);
  }
  const Assignment a = max_weight_assignment(score);
  for (const auto& [r, c] : a.matches) {
    if (static_cast<std::size_t>(r) >= pred.size() || static_cast<std::size_t>(c) >= o.vehicles.size()) continue;
    if (score(r, c) <= 0.0) continue;
    const int vid = o.vehicles[static_cast<std::size_t>(c)];
    o.paired_track[vid] = pred[static_cast<std::size_t>(r)].vehicle_id;
    o.paired_overlap[vid] = static_cast<std::size_t>(score(r, c));
  }
  return o;
}

inline double interpolate_speed(const std::vector<TruthSample>& samples, TimeUs t) {
  if (samples.empty()) return 0.0;
  if (t <= samples.front().t_us) return samples.front().speed_mps;
  if (t >= samples.back().t_us) return samples.back().speed_mps;
  auto hi = std::lower_bound(samples.begin(), samples.end(), t,
                             [](const TruthSample& s, TimeUs v) { return s.t_us < v; });
  auto lo = hi - 1;
  if (hi->t_us == t) return hi->speed_mps;
  const double w = static_cast<double>(t - lo->t_us) / static_cast<double>(hi->t_us - lo->t_us);
  return lo->speed_mps + w * (hi->speed_mps - lo->speed_mps);
}

}  // namespace detail

/// Absolute speed error of paired tracks against the true speed at each
/// point's timestamp, skipping each track's first `skip_points` detections.
inline SpeedErrorStats speed_error(const std::vector<VehicleTrack>& pred, const GroundTruth& truth,
                                   std::size_t skip_points = 0) {
  const detail::TrackVehicleOverlap o = detail::overlap(pred, truth);
  if (o.paired_track.empty()) throw Error(ErrorCode::InvalidArgument, "no predicted track pairs with a truth vehicle");
  std::map<int, const TruthVehicle*> vehicles;
  for (const TruthVehicle& v : truth.vehicles) vehicles[v.vehicle_id] = &v;
  std::map<int, std::vector<TruthSample>> from_labels;
  for (const TruthLabel& l : truth.labels) from_labels[l.vehicle_id].push_back({l.true_t_us, l.chainage_m, l.speed_mps});
  const auto labels = truth.label_index();
  std::map<std::string, const VehicleTrack*> by_id;
  for (const VehicleTrack& t : pred) by_id[t.vehicle_id] = &t;

  SpeedErrorStats st;
  double sum = 0.0;
  for (const auto& [vid, track_id] : o.paired_track) {
    const std::vector<TruthSample>& samples =
        vehicles.count(vid) ? vehicles.at(vid)->samples : from_labels.at(vid);
    std::size_t seen = 0;
    for (const TrackPoint& p : by_id.at(track_id)->points) {
      if (!p.sensor_id) continue;
      if (seen++ < skip_points) continue;
      auto it = labels.find({*p.sensor_id, p.t_us});
      if (it == labels.end() || it->second != vid) continue;
      const double err = std::abs(p.speed_mps - detail::interpolate_speed(samples, p.t_us));
      sum += err;
      st.max = std::max(st.max, err);
      ++st.n;
    }
  }
  st.mean = st.n ? sum / static_cast<double>(st.n) : 0.0;
  return st;
}

inline AccuracyReport track_accuracy(const std::vector<VehicleTrack>& pred, const GroundTruth& truth) {
  const detail::TrackVehicleOverlap o = detail::overlap(pred, truth);
  AccuracyReport rep;
  rep.true_detections = truth.labels.size();
  rep.absorbed_false = o.absorbed_false;
  rep.n_truth_vehicles = o.vehicles.size();
  for (std::size_t t = 0; t < pred.size(); ++t) {
    if (o.track_hits[t] > 0 || std::any_of(pred[t].points.begin(), pred[t].points.end(),
                                           [](const TrackPoint& p) { return p.sensor_id.has_value(); })) {
      ++rep.n_pred_vehicles;
    }
  }
  std::map<int, std::size_t> spread;
  for (const auto& c : o.counts)
    for (const auto& [vid, n] : c) ++spread[vid];
  for (int vid : o.vehicles) {
    VehicleAccuracy va;
    va.vehicle_id = vid;
    va.detections = o.vehicle_detections.at(vid);
    va.tracks = spread.count(vid) ? spread.at(vid) : 0;
    if (auto it = o.paired_track.find(vid); it != o.paired_track.end()) {
      va.matched_track = it->second;
      va.correct = o.paired_overlap.at(vid);
    }
    rep.correct_detections += va.correct;
    if (va.tracks >= 2) ++rep.id_swaps;
    rep.per_vehicle.push_back(std::move(va));
  }
  const std::size_t denom = rep.true_detections + rep.absorbed_false;
  rep.track_accuracy = denom ? static_cast<double>(rep.correct_detections) / static_cast<double>(denom) : 1.0;
  if (!o.paired_track.empty()) {
    const SpeedErrorStats se = speed_error(pred, truth, 2);
    if (se.n) rep.mean_abs_speed_error_mps = se.mean;
  }
  return rep;
}

inline json report_to_json(const AccuracyReport& r) {
  json per = json::array();
  for (const VehicleAccuracy& v : r.per_vehicle) {
    per.push_back({{"vehicle_id", v.vehicle_id}, {"detections", v.detections}, {"correct", v.correct},
                   {"tracks", v.tracks}, {"matched_track", v.matched_track}});
  }
  json j = {{"metric", kAccuracyMetric},
            {"track_accuracy", r.track_accuracy},
            {"n_truth_vehicles", r.n_truth_vehicles},
            {"n_pred_vehicles", r.n_pred_vehicles},
            {"id_swaps", r.id_swaps},
            {"true_detections", r.true_detections},
            {"correct_detections", r.correct_detections},
            {"absorbed_false", r.absorbed_false},
            {"per_vehicle", std::move(per)}};
  j["mean_abs_speed_error_mps"] = r.mean_abs_speed_error_mps ? json(*r.mean_abs_speed_error_mps) : json(nullptr);
  return j;
}

inline std::string report_to_csv(const AccuracyReport& r) {
  std::string out = "vehicle_id,detections,correct,tracks,matched_track\n";
  for (const VehicleAccuracy& v : r.per_vehicle) {
    out += std::to_string(v.vehicle_id) + "," + std::to_string(v.detections) + "," + std::to_string(v.correct) + "," +
           std::to_string(v.tracks) + "," + v.matched_track + "\n";
  }
  return out;
}

}  // namespace magtrack
