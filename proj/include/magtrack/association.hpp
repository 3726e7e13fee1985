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
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "magtrack/domain.hpp"
#include "magtrack/matching.hpp"
#include "magtrack/motion.hpp"

namespace magtrack {

struct AssociationConfig {
  double p_l = 0.05;        // missing-detection probability
  double sigma_t_s = 0.3;   // arrival-time residual scale of the likelihood
  double w_min = 1e-4;      // weights below this are barriers
  int max_hops = 1;
  int miss_limit = 3;
  /// Weight of starting a new vehicle on a detection; negative means p_l.
  double w_new = -1.0;
  /// Widen the residual scale by the track's own predicted position spread.
  bool inflate_sigma = true;

  double new_vehicle_weight() const { return w_new < 0.0 ? p_l : w_new; }

  void validate() const {
    if (!(p_l > 0.0 && p_l < 1.0)) throw Error(ErrorCode::InvalidArgument, "p_l must be in (0,1)");
    if (!(sigma_t_s > 0.0)) throw Error(ErrorCode::InvalidArgument, "sigma_t_s must be positive");
    if (!(w_min >= 0.0 && w_min < 1.0)) throw Error(ErrorCode::InvalidArgument, "w_min must be in [0,1)");
    if (max_hops < 1) throw Error(ErrorCode::InvalidArgument, "max_hops must be positive");
    if (miss_limit < 0) throw Error(ErrorCode::InvalidArgument, "miss_limit must be nonnegative");
    const double wn = new_vehicle_weight();
    if (!(wn > 0.0 && wn <= 1.0)) throw Error(ErrorCode::InvalidArgument, "w_new must be in (0,1]");
    if (p_l < w_min || wn < w_min) throw Error(ErrorCode::InvalidArgument, "p_l and w_new must not be gated by w_min");
  }
};

struct TrackerConfig {
  FilterConfig filter;
  MotionModelConfig motion;
  AssociationConfig association;

  void validate() const {
    motion.validate();
    association.validate();
    if (filter.dedup_window_us < 0) throw Error(ErrorCode::InvalidArgument, "dedup window must be nonnegative");
  }
};

struct TrackPoint {
  TimeUs t_us = 0;
  double chainage_m = 0.0;
  double speed_mps = 0.0;
  std::optional<SensorId> sensor_id;  // empty for a missed passage

  bool operator==(const TrackPoint&) const = default;
};

struct VehicleTrack {
  std::string vehicle_id;
  int lane_id = 0;
  std::vector<TrackPoint> points;

  bool operator==(const VehicleTrack&) const = default;
};

struct TrackHead {
  std::string vehicle_id;
  int lane_id = 0;
  KalmanState state;
  SensorId last_sensor;  // sensor of the latest node, detection or miss
  int consecutive_misses = 0;
};

/// Track head plus its trajectory so far. Missed passages stay tentative
/// until a later detection confirms the vehicle was still on the lane.
struct LiveTrack {
  TrackHead head;
  VehicleTrack track;
  std::vector<TrackPoint> tentative_misses;
};

struct Miss {};
inline constexpr Miss kMiss{};

inline double f_time_likelihood(TimeUs t_obs_us, TimeUs t_pred_us, double sigma_t_s) {
  if (!(sigma_t_s > 0.0)) throw Error(ErrorCode::InvalidArgument, "sigma_t_s must be positive");
  const double r = us_to_seconds(t_obs_us - t_pred_us) / sigma_t_s;
  return std::exp(-0.5 * r * r);
}

/// Where and how sharply a track expects to reach a downstream sensor.
struct ArrivalPrediction {
  TimeUs t_pred_us = 0;
  double sigma_s = 0.0;
  TimeUs gate_us = 0;  // |t_obs - t_pred| beyond this gives a weight below w_min
};

inline constexpr double kMinPredictionSpeed = 0.5;

inline ArrivalPrediction predict_arrival(const TrackHead& track, double target_chainage_m,
                                         const AssociationConfig& assoc, const MotionModelConfig& motion) {
  const KalmanState& s = track.state;
  const double d = std::max(0.0, target_chainage_m - s.position());
  const double v = std::max(s.velocity(), kMinPredictionSpeed);
  ArrivalPrediction out;
  if (motion.kind == MotionKind::CA) {
    try {
      out.t_pred_us = predict_arrival_ca(s.t_us, v, s.acceleration(), d);
    } catch (const Error&) {
      out.t_pred_us = predict_arrival_cv(s.t_us, v, d);
    }
  } else {
    out.t_pred_us = predict_arrival_cv(s.t_us, v, d);
  }
  double var = assoc.sigma_t_s * assoc.sigma_t_s;
  if (assoc.inflate_sigma) {
    const KalmanState ahead = kf_predict(s, out.t_pred_us, motion);
    var += ahead.position_variance() / (v * v);
  }
  out.sigma_s = std::sqrt(var);
  const double radius = assoc.w_min > 0.0 ? out.sigma_s * std::sqrt(2.0 * std::log(1.0 / assoc.w_min))
                                          : std::numeric_limits<double>::infinity();
  out.gate_us = std::isfinite(radius) ? static_cast<TimeUs>(std::floor(radius * 1e6))
                                      : std::numeric_limits<TimeUs>::max() / 4;
  return out;
}

/// Track head to detection: zero unless the detection's sensor is within
/// max_hops downstream of the head and strictly later in time.
inline double link_weight(const TrackHead& track, const Detection& cand, const SensorLayout& layout,
                          const AssociationConfig& assoc, const MotionModelConfig& motion) {
  const SensorRef from = layout.at(track.last_sensor);
  const SensorRef to = layout.at(cand.sensor_id);
  if (from.lane_index != to.lane_index) return 0.0;
  if (to.sensor_index <= from.sensor_index ||
      to.sensor_index - from.sensor_index > static_cast<std::size_t>(assoc.max_hops)) {
    return 0.0;
  }
  if (cand.t_us <= track.state.t_us) return 0.0;
  const ArrivalPrediction pred = predict_arrival(track, layout.node(to).chainage_m, assoc, motion);
  const TimeUs residual = cand.t_us - pred.t_pred_us;
  if (residual > pred.gate_us || residual < -pred.gate_us) return 0.0;
  const double w = f_time_likelihood(cand.t_us, pred.t_pred_us, pred.sigma_s);
  return w < assoc.w_min ? 0.0 : w;
}

inline double link_weight(const TrackHead&, Miss, const AssociationConfig& assoc) { return assoc.p_l; }
inline double link_weight(Miss, const Detection&, const AssociationConfig& assoc) { return assoc.p_l; }
inline double link_weight(Miss, Miss, const AssociationConfig& assoc) { return assoc.p_l * assoc.p_l; }

/// Square association matrix of size |tracks| + |dets|.
///
/// Rows are the tracks followed by one virtual "new vehicle" row per
/// detection; columns are the detections followed by one miss column per
/// track. A track may only take its own miss column. The virtual-row by
/// miss-column block is a neutral filler of weight 1.
struct WeightMatrix {
  std::size_t n_tracks = 0;
  std::size_t n_dets = 0;
  Eigen::MatrixXd w;

  std::size_t size() const { return n_tracks + n_dets; }
  bool is_track_row(std::size_t r) const { return r < n_tracks; }
  bool is_det_col(std::size_t c) const { return c < n_dets; }
};

inline WeightMatrix build_bipartite(const std::vector<TrackHead>& tracks, const std::vector<Detection>& dets,
                                    const SensorLayout& layout, const AssociationConfig& assoc,
                                    const MotionModelConfig& motion) {
  WeightMatrix m;
  m.n_tracks = tracks.size();
  m.n_dets = dets.size();
  const auto n = static_cast<Eigen::Index>(m.size());
  const auto nt = static_cast<Eigen::Index>(m.n_tracks);
  const auto nd = static_cast<Eigen::Index>(m.n_dets);
  m.w = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index r = 0; r < nt; ++r) {
    for (Eigen::Index c = 0; c < nd; ++c) {
      m.w(r, c) = link_weight(tracks[r], dets[c], layout, assoc, motion);
    }
    m.w(r, nd + r) = link_weight(tracks[r], kMiss, assoc);
  }
  const double w_new = assoc.new_vehicle_weight();
  for (Eigen::Index r = nt; r < n; ++r) {
    for (Eigen::Index c = 0; c < nd; ++c) m.w(r, c) = w_new;
    for (Eigen::Index c = nd; c < n; ++c) m.w(r, c) = 1.0;
  }
  for (Eigen::Index r = 0; r < n; ++r) {
    for (Eigen::Index c = 0; c < n; ++c) {
      if (m.w(r, c) < assoc.w_min) m.w(r, c) = 0.0;
    }
  }
  return m;
}

/// Maximizes the joint probability, i.e. the sum of log-weights.
inline Assignment max_weight_matching(const WeightMatrix& W) {
  return max_weight_assignment(W.w.unaryExpr([](double x) {
    return x > 0.0 ? std::log(x) : -std::numeric_limits<double>::infinity();
  }));
}

/// Outcome of matching one sensor's detections against the tracks.
struct SensorDecision {
  std::vector<std::optional<std::size_t>> det_of_track;  // empty: the track missed
  std::vector<std::size_t> new_dets;
  Assignment assignment;
};

inline SensorDecision associate_sensor(const std::vector<TrackHead>& tracks, const std::vector<Detection>& dets,
                                       const SensorLayout& layout, const AssociationConfig& assoc,
                                       const MotionModelConfig& motion) {
  const WeightMatrix W = build_bipartite(tracks, dets, layout, assoc, motion);
  SensorDecision out;
  out.assignment = max_weight_matching(W);
  out.det_of_track.assign(tracks.size(), std::nullopt);
  std::vector<char> taken(dets.size(), 0);
  for (const auto& [r, c] : out.assignment.matches) {
    if (W.is_track_row(r) && W.is_det_col(c)) {
      out.det_of_track[r] = static_cast<std::size_t>(c);
      taken[c] = 1;
    }
  }
  for (std::size_t d = 0; d < dets.size(); ++d) {
    if (!taken[d]) out.new_dets.push_back(d);
  }
  return out;
}

inline std::string make_vehicle_id(int lane_id, TimeUs birth_t_us, std::size_t birth_sensor_index) {
  std::string idx = std::to_string(birth_sensor_index);
  if (idx.size() < 4) idx.insert(0, 4 - idx.size(), '0');
  return "L" + std::to_string(lane_id) + "-" + std::to_string(birth_t_us) + "-" + idx;
}

/// A confirmed trajectory point together with its owner.
struct EmittedPoint {
  std::string vehicle_id;
  int lane_id = 0;
  TrackPoint point;

  bool operator==(const EmittedPoint&) const = default;
};

struct AssociationStep {
  std::vector<EmittedPoint> points;
  std::vector<VehicleTrack> completed;
};

/// Incremental form of the per-sensor association sweep.
///
/// Detections are added in any grouping; `run(horizon)` resolves every
/// decision that no detection later than `horizon` could change and defers
/// the rest. Each sensor's tracks and detections split into connected
/// components of the gated link graph, and a component is solved only when
/// it is closed: no future detection can fall inside any of its tracks'
/// gates, and no future track can reach any of its detections. Because a
/// closed component's optimum is the same whether it is solved alone or
/// inside the full matrix, any windowing yields the one-batch result.
class TrackAssociator {
 public:
  TrackAssociator(SensorLayout layout, TrackerConfig config) : layout_(std::move(layout)), config_(config) {
    config_.validate();
    for (const Lane& lane : layout_.lanes()) {
      pending_.emplace_back(lane.sensors.size());
      heads_.emplace_back(lane.sensors.size());
    }
  }

  const SensorLayout& layout() const noexcept { return layout_; }
  const TrackerConfig& config() const noexcept { return config_; }
  const std::map<std::string, LiveTrack>& live() const noexcept { return live_; }

  std::size_t pending_detections() const {
    std::size_t n = 0;
    for (const auto& lane : pending_)
      for (const auto& list : lane) n += list.size();
    return n;
  }

  /// Adds detections; they must already be preprocessed.
  void add(const DetectionBatch& batch) {
    for (const auto& [id, list] : batch.by_sensor()) {
      const SensorRef ref = layout_.at(id);
      auto& dst = pending_[ref.lane_index][ref.sensor_index];
      for (const Detection& d : list) {
        auto it = std::lower_bound(dst.begin(), dst.end(), d.t_us,
                                   [](const Detection& x, TimeUs t) { return x.t_us < t; });
        if (it != dst.end() && it->t_us == d.t_us) continue;
        dst.insert(it, d);
      }
    }
  }

  /// Seeds a track carried over from an earlier run.
  void adopt(LiveTrack track) {
    const SensorRef ref = layout_.at(track.head.last_sensor);
    const std::string id = track.head.vehicle_id;
    heads_[ref.lane_index][ref.sensor_index].push_back(id);
    live_.emplace(id, std::move(track));
  }

  AssociationStep run(TimeUs horizon) {
    AssociationStep step;
    for (std::size_t li = 0; li < layout_.lanes().size(); ++li) run_lane(li, horizon, step);
    // adopted tracks already sitting on the last sensor
    for (std::size_t li = 0; li < layout_.lanes().size(); ++li) {
      auto& last = heads_[li].back();
      for (const std::string& id : last) complete(id, step);
      last.clear();
    }
    std::sort(step.points.begin(), step.points.end(), [](const EmittedPoint& a, const EmittedPoint& b) {
      return a.vehicle_id != b.vehicle_id ? a.vehicle_id < b.vehicle_id : a.point.t_us < b.point.t_us;
    });
    std::sort(step.completed.begin(), step.completed.end(),
              [](const VehicleTrack& a, const VehicleTrack& b) { return a.vehicle_id < b.vehicle_id; });
    return step;
  }

 private:
  struct Candidate {
    std::string id;
    ArrivalPrediction pred;
  };

  static TimeUs sat_add(TimeUs a, TimeUs b) { return a > kNoHorizon - b ? kNoHorizon : a + b; }

  void run_lane(std::size_t li, TimeUs horizon, AssociationStep& step) {
    const Lane& lane = layout_.lanes()[li];
    // Lower bound on the head time of any track that may still arrive at the
    // previous sensor's head list; nothing arrives upstream of sensor 0.
    TimeUs bound_prev = kNoHorizon;
    for (std::size_t si = 0; si < lane.sensors.size(); ++si) {
      bound_prev = run_sensor(li, si, horizon, bound_prev, step);
    }
  }

  TimeUs run_sensor(std::size_t li, std::size_t si, TimeUs horizon, TimeUs bound_prev, AssociationStep& step) {
    const Lane& lane = layout_.lanes()[li];
    const SensorNode& node = lane.sensors[si];
    auto& dets = pending_[li][si];

    std::vector<Candidate> tracks;
    if (si > 0) {
      for (const std::string& id : heads_[li][si - 1]) {
        tracks.push_back({id, predict_arrival(live_.at(id).head, node.chainage_m, config_.association,
                                              config_.motion)});
      }
      std::sort(tracks.begin(), tracks.end(), [this](const Candidate& a, const Candidate& b) {
        const TimeUs ta = live_.at(a.id).head.state.t_us;
        const TimeUs tb = live_.at(b.id).head.state.t_us;
        return ta != tb ? ta < tb : a.id < b.id;
      });
    }
    const std::size_t nt = tracks.size();
    const std::size_t nd = dets.size();
    if (nt == 0 && nd == 0) return std::min(horizon, bound_prev);

    // union-find over tracks [0, nt) and detections [nt, nt + nd)
    std::vector<std::size_t> parent(nt + nd);
    std::iota(parent.begin(), parent.end(), std::size_t{0});
    auto find = [&](std::size_t x) {
      while (parent[x] != x) x = parent[x] = parent[parent[x]];
      return x;
    };
    for (std::size_t t = 0; t < nt; ++t) {
      const TrackHead& head = live_.at(tracks[t].id).head;
      const ArrivalPrediction& p = tracks[t].pred;
      const TimeUs lo = std::max(p.t_pred_us - p.gate_us, head.state.t_us + 1);
      auto it = std::lower_bound(dets.begin(), dets.end(), lo,
                                 [](const Detection& x, TimeUs v) { return x.t_us < v; });
      for (; it != dets.end() && it->t_us <= p.t_pred_us + p.gate_us; ++it) {
        const std::size_t d = nt + static_cast<std::size_t>(it - dets.begin());
        parent[find(d)] = find(t);
      }
    }

    std::map<std::size_t, std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> components;
    for (std::size_t t = 0; t < nt; ++t) components[find(t)].first.push_back(t);
    for (std::size_t d = 0; d < nd; ++d) components[find(nt + d)].second.push_back(d);

    TimeUs bound = std::min(horizon, bound_prev);
    std::vector<char> track_done(nt, 0), det_done(nd, 0);
    std::vector<std::string> advanced;
    for (auto& [root, members] : components) {
      const auto& [ct, cd] = members;
      bool closed = true;
      for (std::size_t d : cd) closed = closed && dets[d].t_us <= bound_prev;
      for (std::size_t t : ct) closed = closed && sat_add(tracks[t].pred.t_pred_us, tracks[t].pred.gate_us) <= horizon;
      if (!closed) {
        for (std::size_t d : cd) bound = std::min(bound, dets[d].t_us);
        for (std::size_t t : ct) bound = std::min(bound, tracks[t].pred.t_pred_us - tracks[t].pred.gate_us);
        continue;
      }
      std::vector<TrackHead> heads;
      std::vector<Detection> cdets;
      for (std::size_t t : ct) heads.push_back(live_.at(tracks[t].id).head);
      for (std::size_t d : cd) cdets.push_back(dets[d]);
      const SensorDecision decision =
          associate_sensor(heads, cdets, layout_, config_.association, config_.motion);
      for (std::size_t k = 0; k < ct.size(); ++k) {
        const std::string& id = tracks[ct[k]].id;
        if (decision.det_of_track[k]) {
          apply_detection(live_.at(id), cdets[*decision.det_of_track[k]], node, step);
        } else {
          apply_miss(live_.at(id), tracks[ct[k]].pred, node);
        }
        track_done[ct[k]] = 1;
        advanced.push_back(id);
      }
      for (std::size_t k : decision.new_dets) {
        advanced.push_back(birth(li, si, cdets[k], step));
      }
      for (std::size_t d : cd) det_done[d] = 1;
    }

    if (si > 0) {
      std::vector<std::string> remaining;
      for (std::size_t t = 0; t < nt; ++t)
        if (!track_done[t]) remaining.push_back(tracks[t].id);
      heads_[li][si - 1] = std::move(remaining);
    }
    std::vector<Detection> left;
    for (std::size_t d = 0; d < nd; ++d)
      if (!det_done[d]) left.push_back(std::move(dets[d]));
    dets = std::move(left);

    const bool last = si + 1 == lane.sensors.size();
    for (const std::string& id : advanced) {
      const LiveTrack& lt = live_.at(id);
      if (lt.head.consecutive_misses > config_.association.miss_limit || last) {
        complete(id, step);
      } else {
        heads_[li][si].push_back(id);
      }
    }
    return bound;
  }

  void apply_detection(LiveTrack& lt, const Detection& d, const SensorNode& node, AssociationStep& step) {
    KalmanState s = kf_predict(lt.head.state, d.t_us, config_.motion);
    const double r = config_.motion.measurement_variance(s.velocity());
    s = kf_update(s, node.chainage_m, r, d.t_us);
    lt.head.state = std::move(s);
    lt.head.last_sensor = node.sensor_id;
    lt.head.consecutive_misses = 0;
    for (TrackPoint& p : lt.tentative_misses) {
      step.points.push_back({lt.track.vehicle_id, lt.track.lane_id, p});
      lt.track.points.push_back(std::move(p));
    }
    lt.tentative_misses.clear();
    TrackPoint p{d.t_us, node.chainage_m, std::max(0.0, lt.head.state.velocity()), d.sensor_id};
    step.points.push_back({lt.track.vehicle_id, lt.track.lane_id, p});
    lt.track.points.push_back(std::move(p));
  }

  void apply_miss(LiveTrack& lt, const ArrivalPrediction& pred, const SensorNode& node) {
    lt.head.state = kf_predict(lt.head.state, pred.t_pred_us, config_.motion);
    lt.head.last_sensor = node.sensor_id;
    lt.head.consecutive_misses += 1;
    lt.tentative_misses.push_back(
        {pred.t_pred_us, node.chainage_m, std::max(0.0, lt.head.state.velocity()), std::nullopt});
  }

  std::string birth(std::size_t li, std::size_t si, const Detection& d, AssociationStep& step) {
    const Lane& lane = layout_.lanes()[li];
    const SensorNode& node = lane.sensors[si];
    LiveTrack lt;
    lt.head.vehicle_id = make_vehicle_id(lane.lane_id, d.t_us, si);
    lt.head.lane_id = lane.lane_id;
    lt.head.state = initial_state(config_.motion, d.t_us, node.chainage_m);
    lt.head.last_sensor = node.sensor_id;
    lt.track.vehicle_id = lt.head.vehicle_id;
    lt.track.lane_id = lane.lane_id;
    TrackPoint p{d.t_us, node.chainage_m, std::max(0.0, lt.head.state.velocity()), d.sensor_id};
    step.points.push_back({lt.track.vehicle_id, lane.lane_id, p});
    lt.track.points.push_back(std::move(p));
    const std::string id = lt.head.vehicle_id;
    live_.emplace(id, std::move(lt));
    return id;
  }

  void complete(const std::string& id, AssociationStep& step) {
    auto it = live_.find(id);
    step.completed.push_back(std::move(it->second.track));
    live_.erase(it);
  }

  SensorLayout layout_;
  TrackerConfig config_;
  std::vector<std::vector<std::vector<Detection>>> pending_;    // [lane][sensor]
  std::vector<std::vector<std::vector<std::string>>> heads_;    // [lane][sensor] -> vehicle ids
  std::map<std::string, LiveTrack> live_;
};

struct AssociationResult {
  std::vector<LiveTrack> live;
  std::vector<VehicleTrack> completed;
};

/// One-shot association of a preprocessed batch, continuing `tracks`.
inline AssociationResult g_association(const DetectionBatch& batch, const SensorLayout& layout,
                                       const TrackerConfig& config, std::vector<LiveTrack> tracks = {}) {
  TrackAssociator assoc(layout, config);
  for (LiveTrack& t : tracks) assoc.adopt(std::move(t));
  assoc.add(batch);
  AssociationResult out;
  out.completed = assoc.run(kNoHorizon).completed;
  for (const auto& [id, lt] : assoc.live()) out.live.push_back(lt);
  return out;
}

}  // namespace magtrack
