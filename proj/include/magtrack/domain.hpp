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
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace magtrack {

/// Microseconds since epoch. Float seconds appear only at API edges.
using TimeUs = std::int64_t;
using SensorId = std::string;

inline constexpr TimeUs kNoHorizon = std::numeric_limits<TimeUs>::max();

inline TimeUs seconds_to_us(double s) { return static_cast<TimeUs>(std::llround(s * 1e6)); }
inline double us_to_seconds(TimeUs t) { return static_cast<double>(t) * 1e-6; }

enum class ErrorCode {
  InvalidArgument,
  UnknownSensor,
  CrossLane,
  NonpositiveSpeed,
  NoArrival,
  BackwardsTime,
  Parse,
  Io,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

struct SensorNode {
  SensorId sensor_id;
  int lane_id = 0;
  double chainage_m = 0.0;

  bool operator==(const SensorNode&) const = default;
};

struct Lane {
  int lane_id = 0;
  std::vector<SensorNode> sensors;  // increasing chainage

  bool operator==(const Lane&) const = default;
};

struct LayoutConfig {
  int lanes = 2;
  double length_m = 1500.0;
  double spacing_m = 15.0;
  double min_spacing_m = 8.0;
  double max_spacing_m = 15.0;
};

/// Position of a sensor inside a layout.
struct SensorRef {
  std::size_t lane_index = 0;
  std::size_t sensor_index = 0;
};

/// Ordered roadside sensors grouped by lane.
///
/// Construction validates the invariants (strictly increasing chainage,
/// spacing within range, globally unique ids), so a SensorLayout value is
/// always well formed.
class SensorLayout {
 public:
  SensorLayout() = default;

  explicit SensorLayout(std::vector<Lane> lanes, double min_spacing_m = 8.0,
                        double max_spacing_m = 15.0)
      : lanes_(std::move(lanes)) {
    for (std::size_t li = 0; li < lanes_.size(); ++li) {
      Lane& lane = lanes_[li];
      for (std::size_t si = 0; si < lane.sensors.size(); ++si) {
        SensorNode& node = lane.sensors[si];
        node.lane_id = lane.lane_id;
        if (!(node.chainage_m >= 0.0)) {
          throw Error(ErrorCode::InvalidArgument, "sensor " + node.sensor_id + " has negative chainage");
        }
        if (si > 0) {
          const double gap = node.chainage_m - lane.sensors[si - 1].chainage_m;
          if (!(gap > 0.0)) {
            throw Error(ErrorCode::InvalidArgument,
                        "chainage not strictly increasing at sensor " + node.sensor_id);
          }
          // 1e-9 slack absorbs the final short gap produced by floating placement
          if (gap < min_spacing_m - 1e-9 || gap > max_spacing_m + 1e-9) {
            throw Error(ErrorCode::InvalidArgument,
                        "spacing " + std::to_string(gap) + " m out of range before sensor " + node.sensor_id);
          }
        }
        if (!index_.emplace(node.sensor_id, SensorRef{li, si}).second) {
          throw Error(ErrorCode::InvalidArgument, "duplicate sensor id " + node.sensor_id);
        }
      }
    }
  }

  const std::vector<Lane>& lanes() const noexcept { return lanes_; }

  std::size_t sensor_count() const noexcept { return index_.size(); }

  std::optional<SensorRef> find(const SensorId& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  SensorRef at(const SensorId& id) const {
    auto ref = find(id);
    if (!ref) throw Error(ErrorCode::UnknownSensor, "unknown sensor id " + id);
    return *ref;
  }

  const SensorNode& node(SensorRef ref) const { return lanes_[ref.lane_index].sensors[ref.sensor_index]; }
  const SensorNode& node(const SensorId& id) const { return node(at(id)); }

  bool operator==(const SensorLayout& other) const { return lanes_ == other.lanes_; }

 private:
  std::vector<Lane> lanes_;
  std::unordered_map<SensorId, SensorRef> index_;
};

inline std::string make_sensor_id(int lane_id, std::size_t index) {
  std::string n = std::to_string(index);
  if (n.size() < 4) n.insert(0, 4 - n.size(), '0');
  return "L" + std::to_string(lane_id) + "-S" + n;
}

/// Uniform placement along each lane, starting at chainage 0.
inline SensorLayout build_layout(const LayoutConfig& config) {
  if (config.lanes <= 0) throw Error(ErrorCode::InvalidArgument, "lane count must be positive");
  if (!(config.spacing_m > 0.0)) throw Error(ErrorCode::InvalidArgument, "spacing must be positive");
  if (!(config.length_m > 0.0)) throw Error(ErrorCode::InvalidArgument, "lane length must be positive");
  if (config.spacing_m < config.min_spacing_m || config.spacing_m > config.max_spacing_m) {
    throw Error(ErrorCode::InvalidArgument, "spacing outside configured range");
  }
  const auto intervals = static_cast<std::size_t>(std::floor(config.length_m / config.spacing_m + 1e-9));
  std::vector<Lane> lanes;
  for (int l = 0; l < config.lanes; ++l) {
    Lane lane{l, {}};
    for (std::size_t i = 0; i <= intervals; ++i) {
      lane.sensors.push_back({make_sensor_id(l, i), l, static_cast<double>(i) * config.spacing_m});
    }
    lanes.push_back(std::move(lane));
  }
  return SensorLayout(std::move(lanes), config.min_spacing_m, config.max_spacing_m);
}

inline double distance(const SensorLayout& layout, const SensorId& i, const SensorId& j) {
  const SensorRef a = layout.at(i);
  const SensorRef b = layout.at(j);
  if (a.lane_index != b.lane_index) {
    throw Error(ErrorCode::CrossLane, "sensors " + i + " and " + j + " are on different lanes");
  }
  return std::abs(layout.node(b).chainage_m - layout.node(a).chainage_m);
}

/// The next `hops` sensors after `i` on its lane; truncated at the lane end.
inline std::vector<SensorId> downstream_adjacent(const SensorLayout& layout, const SensorId& i, int hops) {
  if (hops <= 0) throw Error(ErrorCode::InvalidArgument, "hops must be positive");
  const SensorRef ref = layout.at(i);
  const auto& sensors = layout.lanes()[ref.lane_index].sensors;
  std::vector<SensorId> out;
  for (std::size_t k = ref.sensor_index + 1; k < sensors.size() && out.size() < static_cast<std::size_t>(hops); ++k) {
    out.push_back(sensors[k].sensor_id);
  }
  return out;
}

struct Detection {
  SensorId sensor_id;
  TimeUs t_us = 0;
  std::array<double, 3> direction{1.0, 0.0, 0.0};
  double strength_nT = 0.0;

  bool operator==(const Detection&) const = default;
};

inline bool valid_direction(const std::array<double, 3>& d) {
  const double n = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
  return std::isfinite(n) && std::abs(n - 1.0) <= 1e-6;
}

inline bool valid_detection(const Detection& d) {
  return !d.sensor_id.empty() && std::isfinite(d.strength_nT) && d.strength_nT >= 0.0 &&
         valid_direction(d.direction);
}

/// Per-sensor, strictly time-ordered detection lists.
class DetectionBatch {
 public:
  /// Inserts in time order. Returns false (and leaves the batch unchanged) for
  /// a second detection with the same sensor and timestamp.
  bool insert(Detection d) {
    auto& list = by_sensor_[d.sensor_id];
    auto it = std::lower_bound(list.begin(), list.end(), d.t_us,
                               [](const Detection& x, TimeUs t) { return x.t_us < t; });
    if (it != list.end() && it->t_us == d.t_us) return false;
    list.insert(it, std::move(d));
    return true;
  }

  const std::map<SensorId, std::vector<Detection>>& by_sensor() const noexcept { return by_sensor_; }

  const std::vector<Detection>& at(const SensorId& id) const {
    static const std::vector<Detection> kEmpty;
    auto it = by_sensor_.find(id);
    return it == by_sensor_.end() ? kEmpty : it->second;
  }

  std::size_t size() const {
    std::size_t n = 0;
    for (const auto& [id, list] : by_sensor_) n += list.size();
    return n;
  }

  bool empty() const { return size() == 0; }

  /// All detections ordered by (t_us, sensor_id).
  std::vector<Detection> flatten() const {
    std::vector<Detection> out;
    for (const auto& [id, list] : by_sensor_) out.insert(out.end(), list.begin(), list.end());
    std::sort(out.begin(), out.end(), [](const Detection& a, const Detection& b) {
      return a.t_us != b.t_us ? a.t_us < b.t_us : a.sensor_id < b.sensor_id;
    });
    return out;
  }

  bool operator==(const DetectionBatch& other) const {
    auto nonempty = [](const DetectionBatch& b) {
      std::map<SensorId, std::vector<Detection>> m;
      for (const auto& [id, list] : b.by_sensor_)
        if (!list.empty()) m.emplace(id, list);
      return m;
    };
    return nonempty(*this) == nonempty(other);
  }

 private:
  std::map<SensorId, std::vector<Detection>> by_sensor_;
};

struct FilterConfig {
  double min_strength = 50.0;
  TimeUs dedup_window_us = 200'000;
};

/// Removes weak detections and collapses bursts at one sensor.
///
/// A detection survives dedup when it is at least `dedup_window_us` after the
/// previously kept detection of the same sensor. `last_kept` carries that
/// state between successive calls when detections arrive in windows; it is
/// updated in place.
inline DetectionBatch preprocess(const DetectionBatch& batch, const FilterConfig& config,
                                 std::map<SensorId, TimeUs>* last_kept = nullptr) {
  DetectionBatch out;
  for (const auto& [id, list] : batch.by_sensor()) {
    std::optional<TimeUs> prev;
    if (last_kept) {
      auto it = last_kept->find(id);
      if (it != last_kept->end()) prev = it->second;
    }
    for (const Detection& d : list) {
      if (d.strength_nT < config.min_strength) continue;
      if (prev && d.t_us - *prev < config.dedup_window_us) continue;
      prev = d.t_us;
      out.insert(d);
    }
    if (last_kept && prev) (*last_kept)[id] = *prev;
  }
  return out;
}

}  // namespace magtrack
