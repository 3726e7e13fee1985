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

#include <algorithm>
#include <functional>
#include <istream>
#include <map>
#include <mutex>
#include <set>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "magtrack/association.hpp"
#include "magtrack/domain.hpp"
#include "magtrack/io.hpp"

namespace magtrack {

struct StreamConfig {
  double window_s = 30.0;
  double late_tolerance_s = 5.0;

  void validate() const {
    if (!(window_s > 0.0)) throw Error(ErrorCode::InvalidArgument, "window_s must be positive");
    if (!(late_tolerance_s >= 0.0)) throw Error(ErrorCode::InvalidArgument, "late_tolerance_s must be nonnegative");
  }
};

enum class RejectReason { Malformed, UnknownSensor, Duplicate, TooLate };

inline const char* to_string(RejectReason r) {
  switch (r) {
    case RejectReason::Malformed: return "malformed";
    case RejectReason::UnknownSensor: return "unknown_sensor";
    case RejectReason::Duplicate: return "duplicate";
    case RejectReason::TooLate: return "too_late";
  }
  return "unknown";
}

struct IngestResult {
  bool accepted = false;
  RejectReason reason = RejectReason::Malformed;
  std::string message;

  static IngestResult ok() { return {true, RejectReason::Malformed, {}}; }
  static IngestResult reject(RejectReason r, std::string msg) { return {false, r, std::move(msg)}; }
};

/// Append-only detection log with a processed high-water mark.
/// Appends may come from many threads.
class DataStore {
 public:
  explicit DataStore(TimeUs late_tolerance_us) : late_tolerance_us_(late_tolerance_us) {}

  IngestResult append(const Detection& d) {
    std::lock_guard lock(mutex_);
    if (high_water_ && d.t_us <= *high_water_) {
      return IngestResult::reject(RejectReason::TooLate, "at or before the processed high-water mark");
    }
    if (latest_seen_ && d.t_us < *latest_seen_ - late_tolerance_us_) {
      return IngestResult::reject(RejectReason::TooLate, "older than the late tolerance");
    }
    if (!keys_.emplace(d.sensor_id, d.t_us).second) {
      return IngestResult::reject(RejectReason::Duplicate, "duplicate (sensor_id, t_us)");
    }
    log_.push_back(d);
    pending_.push_back(d);
    latest_seen_ = latest_seen_ ? std::max(*latest_seen_, d.t_us) : d.t_us;
    return IngestResult::ok();
  }

  /// Removes and returns every pending event with t_us <= horizon, then
  /// raises the high-water mark to `horizon`.
  std::vector<Detection> take_until(TimeUs horizon) {
    std::lock_guard lock(mutex_);
    std::vector<Detection> out, keep;
    for (Detection& d : pending_) (d.t_us <= horizon ? out : keep).push_back(std::move(d));
    pending_ = std::move(keep);
    for (const Detection& d : out) keys_.erase({d.sensor_id, d.t_us});
    if (horizon != kNoHorizon) high_water_ = high_water_ ? std::max(*high_water_, horizon) : horizon;
    return out;
  }

  std::optional<TimeUs> high_water() const {
    std::lock_guard lock(mutex_);
    return high_water_;
  }

  std::optional<TimeUs> latest_seen() const {
    std::lock_guard lock(mutex_);
    return latest_seen_;
  }

  std::size_t size() const {
    std::lock_guard lock(mutex_);
    return log_.size();
  }

  std::size_t pending() const {
    std::lock_guard lock(mutex_);
    return pending_.size();
  }

 private:
  mutable std::mutex mutex_;
  TimeUs late_tolerance_us_;
  std::vector<Detection> log_;
  std::vector<Detection> pending_;
  std::set<std::pair<SensorId, TimeUs>> keys_;  // pending keys only
  std::optional<TimeUs> high_water_;
  std::optional<TimeUs> latest_seen_;
};

struct VehicleStore {
  std::map<std::string, VehicleTrack> live;
  std::vector<VehicleTrack> completed;
};

struct TrajectoryUpdate {
  TimeUs window_end_us = 0;
  std::vector<EmittedPoint> points;

  bool empty() const { return points.empty(); }
};

inline json update_to_json(const TrajectoryUpdate& u) {
  json points = json::array();
  for (const EmittedPoint& p : u.points) points.push_back(track_point_to_json(p.vehicle_id, p.lane_id, p.point));
  return {{"window_end_us", u.window_end_us}, {"points", std::move(points)}};
}

/// Online framework: a data store fed by `ingest`, a vehicle store, and a
/// timer body that runs the association over each closed window.
///
/// `ingest` may run concurrently from many threads. `on_timer` bodies never
/// overlap, and `snapshot` never observes a half-applied timer body.
class StreamTracker {
 public:
  StreamTracker(SensorLayout layout, TrackerConfig config, StreamConfig stream = {})
      : layout_(layout),
        stream_(stream),
        store_(seconds_to_us(stream.late_tolerance_s)),
        assoc_(std::move(layout), config) {
    stream_.validate();
  }

  const SensorLayout& layout() const noexcept { return layout_; }
  const StreamConfig& stream_config() const noexcept { return stream_; }
  const DataStore& data_store() const noexcept { return store_; }

  IngestResult ingest(const Detection& d) {
    if (!valid_detection(d)) return IngestResult::reject(RejectReason::Malformed, "detection violates invariants");
    if (!layout_.find(d.sensor_id)) {
      return IngestResult::reject(RejectReason::UnknownSensor, "unknown sensor id " + d.sensor_id);
    }
    return store_.append(d);
  }

  /// Total: any byte sequence yields accepted or a rejection.
  IngestResult ingest_line(std::string_view line) {
    std::string err;
    auto d = parse_detection(line, &err);
    if (!d) return IngestResult::reject(RejectReason::Malformed, err);
    return ingest(*d);
  }

  /// Processes events in (high-water, now - late_tolerance].
  TrajectoryUpdate on_timer(TimeUs now_us) {
    std::lock_guard timer_lock(timer_mutex_);
    if (last_trigger_ && now_us < *last_trigger_) {
      throw Error(ErrorCode::BackwardsTime, "timer triggered backwards in time");
    }
    last_trigger_ = now_us;
    const TimeUs horizon = now_us - seconds_to_us(stream_.late_tolerance_s);
    return process(horizon, now_us);
  }

  /// End of input: resolves everything still pending.
  TrajectoryUpdate finish() {
    std::lock_guard timer_lock(timer_mutex_);
    TimeUs end = last_trigger_.value_or(0);
    if (auto seen = store_.latest_seen()) end = std::max(end, *seen);
    last_trigger_ = end;
    return process(kNoHorizon, end);
  }

  std::vector<VehicleTrack> snapshot() const {
    std::shared_lock lock(vehicles_mutex_);
    std::vector<VehicleTrack> out;
    for (const auto& [id, t] : vehicles_.live) out.push_back(t);
    out.insert(out.end(), vehicles_.completed.begin(), vehicles_.completed.end());
    return out;
  }

  VehicleStore vehicle_store() const {
    std::shared_lock lock(vehicles_mutex_);
    return vehicles_;
  }

 private:
  TrajectoryUpdate process(TimeUs horizon, TimeUs window_end) {
    DetectionBatch batch;
    for (Detection& d : store_.take_until(horizon)) batch.insert(std::move(d));
    assoc_.add(preprocess(batch, assoc_.config().filter, &last_kept_));
    AssociationStep step = assoc_.run(horizon);

    std::unique_lock lock(vehicles_mutex_);
    for (const EmittedPoint& p : step.points) {
      auto [it, inserted] = vehicles_.live.try_emplace(p.vehicle_id);
      if (inserted) {
        it->second.vehicle_id = p.vehicle_id;
        it->second.lane_id = p.lane_id;
      }
      it->second.points.push_back(p.point);
    }
    for (VehicleTrack& t : step.completed) {
      vehicles_.live.erase(t.vehicle_id);
      vehicles_.completed.push_back(std::move(t));
    }
    lock.unlock();
    return {window_end, std::move(step.points)};
  }

  SensorLayout layout_;
  StreamConfig stream_;
  DataStore store_;
  TrackAssociator assoc_;
  std::map<SensorId, TimeUs> last_kept_;
  std::optional<TimeUs> last_trigger_;
  std::mutex timer_mutex_;
  mutable std::shared_mutex vehicles_mutex_;
  VehicleStore vehicles_;
};

struct ReplayStats {
  std::size_t lines = 0;
  std::size_t accepted = 0;
  std::map<std::string, std::size_t> rejected;
  std::size_t windows = 0;
};

/// Drives the online framework from a recorded log: events in time order,
/// timer fired every `window_s` of event time, then a final flush.
inline VehicleStore replay(const std::vector<Detection>& events, const SensorLayout& layout,
                           const TrackerConfig& config, StreamConfig stream,
                           const std::function<void(const TrajectoryUpdate&)>& on_update = {},
                           ReplayStats* stats = nullptr) {
  std::vector<Detection> sorted = events;
  std::stable_sort(sorted.begin(), sorted.end(), [](const Detection& a, const Detection& b) { return a.t_us < b.t_us; });
  StreamTracker tracker(layout, config, stream);
  const TimeUs window = seconds_to_us(stream.window_s);
  ReplayStats local;
  ReplayStats& st = stats ? *stats : local;
  auto emit = [&](const TrajectoryUpdate& u) {
    ++st.windows;
    if (on_update) on_update(u);
  };
  if (!sorted.empty()) {
    TimeUs next_fire = sorted.front().t_us + window;
    for (const Detection& d : sorted) {
      if (d.t_us > next_fire) {
        // one trigger covers any run of empty windows
        const TimeUs fire = next_fire + (d.t_us - next_fire - 1) / window * window;
        emit(tracker.on_timer(fire));
        next_fire = fire + window;
      }
      ++st.lines;
      const IngestResult r = tracker.ingest(d);
      if (r.accepted) {
        ++st.accepted;
      } else {
        ++st.rejected[to_string(r.reason)];
      }
    }
  }
  emit(tracker.finish());
  return tracker.vehicle_store();
}

inline VehicleStore replay(std::istream& events_file, const SensorLayout& layout, const TrackerConfig& config,
                           StreamConfig stream, const std::function<void(const TrajectoryUpdate&)>& on_update = {},
                           ReplayStats* stats = nullptr) {
  return replay(read_detections(events_file, &layout), layout, config, stream, on_update, stats);
}

/// Tracks of a store, completed and live, as one list.
inline std::vector<VehicleTrack> all_tracks(const VehicleStore& store) {
  std::vector<VehicleTrack> out = store.completed;
  for (const auto& [id, t] : store.live) out.push_back(t);
  return out;
}

/// Single-batch reference run over a whole log.
inline std::vector<VehicleTrack> track_batch(const std::vector<Detection>& events, const SensorLayout& layout,
                                             const TrackerConfig& config) {
  DetectionBatch batch;
  for (const Detection& d : events) batch.insert(d);
  AssociationResult r = g_association(preprocess(batch, config.filter), layout, config);
  std::vector<VehicleTrack> out = std::move(r.completed);
  for (LiveTrack& t : r.live) out.push_back(std::move(t.track));
  return out;
}

}  // namespace magtrack
