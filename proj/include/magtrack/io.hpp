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
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "magtrack/association.hpp"
#include "magtrack/domain.hpp"

namespace magtrack {

using json = nlohmann::json;

// JSON layout: {"lanes":[{"lane_id":0,"sensors":[{"sensor_id":"..","chainage_m":0.0}]}]}

inline json layout_to_json(const SensorLayout& layout) {
  json lanes = json::array();
  for (const Lane& lane : layout.lanes()) {
    json sensors = json::array();
    for (const SensorNode& s : lane.sensors) sensors.push_back({{"sensor_id", s.sensor_id}, {"chainage_m", s.chainage_m}});
    lanes.push_back({{"lane_id", lane.lane_id}, {"sensors", std::move(sensors)}});
  }
  return {{"lanes", std::move(lanes)}};
}

inline SensorLayout layout_from_json(const json& j, double min_spacing_m = 8.0, double max_spacing_m = 15.0) {
  try {
    std::vector<Lane> lanes;
    for (const json& jl : j.at("lanes")) {
      Lane lane;
      lane.lane_id = jl.at("lane_id").get<int>();
      for (const json& js : jl.at("sensors")) {
        lane.sensors.push_back({js.at("sensor_id").get<std::string>(), lane.lane_id, js.at("chainage_m").get<double>()});
      }
      lanes.push_back(std::move(lane));
    }
    return SensorLayout(std::move(lanes), min_spacing_m, max_spacing_m);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Parse, std::string("invalid layout document: ") + e.what());
  }
}

inline json detection_to_json(const Detection& d) {
  return {{"sensor_id", d.sensor_id},
          {"t_us", d.t_us},
          {"direction", {d.direction[0], d.direction[1], d.direction[2]}},
          {"strength_nT", d.strength_nT}};
}

/// Parses one detection record. Never throws; returns an error message
/// instead. Domain invariants are checked too.
inline std::optional<Detection> parse_detection(std::string_view line, std::string* error = nullptr) {
  auto fail = [&](const std::string& msg) -> std::optional<Detection> {
    if (error) *error = msg;
    return std::nullopt;
  };
  const json j = json::parse(line.begin(), line.end(), nullptr, false);
  if (j.is_discarded()) return fail("not valid JSON");
  if (!j.is_object()) return fail("record is not an object");
  static const char* kKeys[] = {"sensor_id", "t_us", "direction", "strength_nT"};
  for (const char* k : kKeys) {
    if (!j.contains(k)) return fail(std::string("missing field ") + k);
  }
  if (j.size() != 4) return fail("unexpected field");
  const json& sid = j["sensor_id"];
  const json& t = j["t_us"];
  const json& dir = j["direction"];
  const json& st = j["strength_nT"];
  if (!sid.is_string()) return fail("sensor_id must be a string");
  if (!t.is_number_integer()) return fail("t_us must be an integer");
  if (!dir.is_array() || dir.size() != 3) return fail("direction must be a 3-vector");
  if (!st.is_number()) return fail("strength_nT must be a number");
  Detection d;
  d.sensor_id = sid.get<std::string>();
  if (t.is_number_unsigned()) {
    const auto u = t.get<std::uint64_t>();
    if (u >= static_cast<std::uint64_t>(kNoHorizon / 2)) return fail("t_us out of range");
    d.t_us = static_cast<TimeUs>(u);
  } else {
    d.t_us = t.get<TimeUs>();
  }
  if (d.t_us < 0 || d.t_us >= kNoHorizon / 2) return fail("t_us out of range");
  for (int k = 0; k < 3; ++k) {
    if (!dir[k].is_number()) return fail("direction entries must be numbers");
    d.direction[k] = dir[k].get<double>();
  }
  d.strength_nT = st.get<double>();
  if (!valid_detection(d)) return fail("detection violates strength or direction invariants");
  return d;
}

/// Reads a detection JSONL stream. Throws Error(Parse) naming the first bad
/// line; unknown sensors are reported the same way.
inline std::vector<Detection> read_detections(std::istream& in, const SensorLayout* layout = nullptr) {
  std::vector<Detection> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    std::string err;
    auto d = parse_detection(line, &err);
    if (!d) throw Error(ErrorCode::Parse, "line " + std::to_string(line_no) + ": " + err);
    if (layout && !layout->find(d->sensor_id)) {
      throw Error(ErrorCode::UnknownSensor,
                  "line " + std::to_string(line_no) + ": unknown sensor id " + d->sensor_id);
    }
    out.push_back(std::move(*d));
  }
  return out;
}

inline json track_point_to_json(const std::string& vehicle_id, int lane_id, const TrackPoint& p) {
  json j = {{"vehicle_id", vehicle_id},
            {"lane_id", lane_id},
            {"t_us", p.t_us},
            {"chainage_m", p.chainage_m},
            {"speed_mps", p.speed_mps}};
  j["sensor_id"] = p.sensor_id ? json(*p.sensor_id) : json(nullptr);
  return j;
}

/// One JSON record per trajectory point, tracks ordered by
/// (lane, first timestamp, id).
inline std::string tracks_to_jsonl(std::vector<VehicleTrack> tracks) {
  std::sort(tracks.begin(), tracks.end(), [](const VehicleTrack& a, const VehicleTrack& b) {
    const TimeUs ta = a.points.empty() ? 0 : a.points.front().t_us;
    const TimeUs tb = b.points.empty() ? 0 : b.points.front().t_us;
    if (a.lane_id != b.lane_id) return a.lane_id < b.lane_id;
    if (ta != tb) return ta < tb;
    return a.vehicle_id < b.vehicle_id;
  });
  std::string out;
  for (const VehicleTrack& t : tracks) {
    for (const TrackPoint& p : t.points) {
      out += track_point_to_json(t.vehicle_id, t.lane_id, p).dump();
      out += '\n';
    }
  }
  return out;
}

inline std::vector<VehicleTrack> tracks_from_jsonl(std::istream& in) {
  std::vector<VehicleTrack> tracks;
  std::map<std::string, std::size_t> index;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      const std::string id = j.at("vehicle_id").get<std::string>();
      auto [it, inserted] = index.emplace(id, tracks.size());
      if (inserted) tracks.push_back({id, j.at("lane_id").get<int>(), {}});
      TrackPoint p;
      p.t_us = j.at("t_us").get<TimeUs>();
      p.chainage_m = j.at("chainage_m").get<double>();
      p.speed_mps = j.at("speed_mps").get<double>();
      if (!j.at("sensor_id").is_null()) p.sensor_id = j.at("sensor_id").get<std::string>();
      tracks[it->second].points.push_back(std::move(p));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::Parse, "line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  for (VehicleTrack& t : tracks) {
    std::sort(t.points.begin(), t.points.end(), [](const TrackPoint& a, const TrackPoint& b) { return a.t_us < b.t_us; });
  }
  return tracks;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path);
  out << content;
  if (!out) throw Error(ErrorCode::Io, "write failed for " + path);
}

inline json read_json_file(const std::string& path) {
  const std::string text = read_file(path);
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) throw Error(ErrorCode::Parse, path + " is not valid JSON");
  return j;
}

}  // namespace magtrack
