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

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "magtrack/domain.hpp"
#include "magtrack/io.hpp"
#include "magtrack/motion.hpp"

namespace magtrack {

enum class VehicleClass { Car, Bus, Truck };

inline std::string to_string(VehicleClass c) {
  switch (c) {
    case VehicleClass::Car: return "car";
    case VehicleClass::Bus: return "bus";
    case VehicleClass::Truck: return "truck";
  }
  return "car";
}

inline VehicleClass vehicle_class_from_string(const std::string& s) {
  if (s == "car") return VehicleClass::Car;
  if (s == "bus") return VehicleClass::Bus;
  if (s == "truck") return VehicleClass::Truck;
  throw Error(ErrorCode::Parse, "unknown vehicle class '" + s + "'");
}

/// Weakest disturbance a real vehicle produces in the simulator, nT.
inline constexpr double kMinVehicleStrength = 100.0;

struct Scenario {
  LayoutConfig layout;
  double duration_s = 600.0;
  double arrival_rate = 1.0 / 6.0;  // vehicles per second per lane
  std::array<double, 2> speed_range{8.0, 25.0};
  MotionKind motion = MotionKind::CV;
  std::array<double, 2> accel_range{-0.3, 0.3};
  double p_l = 0.05;
  double sigma_dt_s = 0.05;
  double p_false = 0.001;               // false detections per sensor per second
  double false_above_fraction = 0.0;    // share of false detections above min_strength
  double min_strength = 50.0;
  double min_headway_s = 2.0;
  std::array<double, 3> class_mix{0.8, 0.1, 0.1};  // car, bus, truck
  std::uint64_t seed = 1;

  void validate() const {
    if (!(p_l >= 0.0 && p_l <= 1.0)) throw Error(ErrorCode::InvalidArgument, "p_l must be in [0,1]");
    if (!(sigma_dt_s >= 0.0)) throw Error(ErrorCode::InvalidArgument, "sigma_dt_s must be nonnegative");
    if (!(speed_range[0] > 0.0) || speed_range[1] < speed_range[0]) {
      throw Error(ErrorCode::InvalidArgument, "speed_range must satisfy 0 < min <= max");
    }
    if (accel_range[1] < accel_range[0]) throw Error(ErrorCode::InvalidArgument, "accel_range must satisfy min <= max");
    if (!(duration_s >= 0.0)) throw Error(ErrorCode::InvalidArgument, "duration_s must be nonnegative");
    if (!(arrival_rate >= 0.0)) throw Error(ErrorCode::InvalidArgument, "arrival_rate must be nonnegative");
    if (!(p_false >= 0.0)) throw Error(ErrorCode::InvalidArgument, "p_false must be nonnegative");
    if (!(false_above_fraction >= 0.0 && false_above_fraction <= 1.0)) {
      throw Error(ErrorCode::InvalidArgument, "false_above_fraction must be in [0,1]");
    }
    if (!(min_headway_s >= 0.0)) throw Error(ErrorCode::InvalidArgument, "min_headway_s must be nonnegative");
    if (!(class_mix[0] >= 0 && class_mix[1] >= 0 && class_mix[2] >= 0) ||
        class_mix[0] + class_mix[1] + class_mix[2] <= 0.0) {
      throw Error(ErrorCode::InvalidArgument, "class_mix must be nonnegative with positive sum");
    }
  }
};

struct TruthLabel {
  SensorId sensor_id;
  TimeUs t_us = 0;       // reported timestamp
  int vehicle_id = 0;
  TimeUs true_t_us = 0;  // actual passage
  double chainage_m = 0.0;
  double speed_mps = 0.0;

  bool operator==(const TruthLabel&) const = default;
};

struct TruthSample {
  TimeUs t_us = 0;
  double chainage_m = 0.0;
  double speed_mps = 0.0;

  bool operator==(const TruthSample&) const = default;
};

struct TruthVehicle {
  int vehicle_id = 0;
  int lane_id = 0;
  VehicleClass vehicle_class = VehicleClass::Car;
  double speed0_mps = 0.0;
  double accel_mps2 = 0.0;
  TimeUs spawn_us = 0;
  std::vector<TruthSample> samples;  // every sensor passage, detected or not

  bool operator==(const TruthVehicle&) const = default;
};

struct FalseDetection {
  SensorId sensor_id;
  TimeUs t_us = 0;

  bool operator==(const FalseDetection&) const = default;
};

struct GroundTruth {
  std::vector<TruthLabel> labels;  // one per true detection
  std::vector<TruthVehicle> vehicles;
  std::vector<FalseDetection> false_detections;

  bool operator==(const GroundTruth&) const = default;

  std::map<std::pair<SensorId, TimeUs>, int> label_index() const {
    std::map<std::pair<SensorId, TimeUs>, int> m;
    for (const TruthLabel& l : labels) m.emplace(std::pair{l.sensor_id, l.t_us}, l.vehicle_id);
    return m;
  }
};

struct Signature {
  std::array<double, 3> direction;
  double strength_nT;
};

/// Class-conditioned magnetic disturbance: log-normal strength around a
/// class mean (car < bus < truck) and a random unit direction.
template <class Rng>
Signature magnetic_signature(VehicleClass cls, Rng& rng) {
  double mean = 300.0;
  if (cls == VehicleClass::Bus) mean = 700.0;
  if (cls == VehicleClass::Truck) mean = 1100.0;
  std::normal_distribution<double> n01(0.0, 1.0);
  Signature s{};
  s.strength_nT = std::max(kMinVehicleStrength, mean * std::exp(0.25 * n01(rng)));
  for (;;) {
    std::array<double, 3> v{n01(rng), n01(rng), n01(rng)};
    const double norm = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    if (norm < 1e-3) continue;
    s.direction = {v[0] / norm, v[1] / norm, v[2] / norm};
    return s;
  }
}

struct Passage {
  TimeUs t_us = 0;
  double speed_mps = 0.0;
};

/// Passages over a lane's sensors for a vehicle crossing the first sensor at
/// `t0_us`, chained hop by hop through the same arrival formulas the tracker
/// predicts with.
inline std::vector<Passage> lane_passages(MotionKind kind, TimeUs t0_us, double speed0, double accel, const Lane& lane) {
  std::vector<Passage> out;
  out.reserve(lane.sensors.size());
  out.push_back({t0_us, speed0});
  for (std::size_t k = 1; k < lane.sensors.size(); ++k) {
    const double d = lane.sensors[k].chainage_m - lane.sensors[k - 1].chainage_m;
    const Passage& p = out.back();
    if (kind == MotionKind::CV) {
      out.push_back({predict_arrival_cv(p.t_us, p.speed_mps, d), p.speed_mps});
    } else {
      const double v2 = p.speed_mps * p.speed_mps + 2.0 * accel * d;
      out.push_back({predict_arrival_ca(p.t_us, p.speed_mps, accel, d), std::sqrt(std::max(v2, 0.0))});
    }
  }
  return out;
}

struct SimOutput {
  SensorLayout layout;
  DetectionBatch batch;
  GroundTruth truth;
};

/// Deterministic two-lane forward model.
///
/// Vehicles arrive at each lane entry as a Poisson process and hold their
/// sampled CV or CA profile. A vehicle that would come closer than
/// min_headway_s to its predecessor at any sensor waits at the entry until
/// it would not, so lanes never see overtaking.
inline SimOutput simulate(const Scenario& sc) {
  sc.validate();
  SimOutput out;
  out.layout = build_layout(sc.layout);
  std::mt19937_64 rng(sc.seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> n01(0.0, 1.0);
  std::exponential_distribution<double> gap(sc.arrival_rate > 0.0 ? sc.arrival_rate : 1.0);
  std::discrete_distribution<int> cls_dist({sc.class_mix[0], sc.class_mix[1], sc.class_mix[2]});
  const TimeUs headway = seconds_to_us(sc.min_headway_s);

  auto emit = [&](Detection d) {
    d.t_us = std::max<TimeUs>(d.t_us, 0);
    while (!out.batch.insert(d)) ++d.t_us;
    return d.t_us;
  };

  int next_vehicle = 0;
  TimeUs end_us = seconds_to_us(sc.duration_s);
  for (const Lane& lane : out.layout.lanes()) {
    const double lane_len = lane.sensors.back().chainage_m;
    std::vector<TimeUs> prev;  // predecessor passages
    double t_arrival = 0.0;
    while (sc.arrival_rate > 0.0) {
      t_arrival += gap(rng);
      if (t_arrival >= sc.duration_s) break;
      TruthVehicle v;
      v.vehicle_id = next_vehicle++;
      v.lane_id = lane.lane_id;
      v.vehicle_class = static_cast<VehicleClass>(cls_dist(rng));
      v.speed0_mps = sc.speed_range[0] + (sc.speed_range[1] - sc.speed_range[0]) * u01(rng);
      if (sc.motion == MotionKind::CA) {
        double a = sc.accel_range[0] + (sc.accel_range[1] - sc.accel_range[0]) * u01(rng);
        // a decelerating vehicle must still clear the lane
        const double floor_a = -0.9 * v.speed0_mps * v.speed0_mps / (2.0 * std::max(lane_len, 1e-9));
        v.accel_mps2 = std::max(a, floor_a);
      }
      const std::vector<Passage> travel = lane_passages(sc.motion, 0, v.speed0_mps, v.accel_mps2, lane);
      TimeUs spawn = seconds_to_us(t_arrival);
      for (std::size_t k = 0; k < prev.size(); ++k) spawn = std::max(spawn, prev[k] + headway - travel[k].t_us);
      v.spawn_us = spawn;
      prev.clear();
      for (std::size_t k = 0; k < lane.sensors.size(); ++k) {
        const SensorNode& s = lane.sensors[k];
        // hops add whole microseconds, so shifting the chain start is exact
        const TimeUs pass = spawn + travel[k].t_us;
        const double speed = travel[k].speed_mps;
        prev.push_back(pass);
        v.samples.push_back({pass, s.chainage_m, speed});
        end_us = std::max(end_us, pass);
        if (u01(rng) < sc.p_l) continue;
        const TimeUs jitter = sc.sigma_dt_s > 0.0 ? seconds_to_us(sc.sigma_dt_s * n01(rng)) : 0;
        const Signature sig = magnetic_signature(v.vehicle_class, rng);
        const TimeUs t = emit({s.sensor_id, pass + jitter, sig.direction, sig.strength_nT});
        out.truth.labels.push_back({s.sensor_id, t, v.vehicle_id, pass, s.chainage_m, speed});
      }
      out.truth.vehicles.push_back(std::move(v));
    }
  }

  if (sc.p_false > 0.0) {
    std::exponential_distribution<double> false_gap(sc.p_false);
    for (const Lane& lane : out.layout.lanes()) {
      for (const SensorNode& s : lane.sensors) {
        double t = 0.0;
        for (;;) {
          t += false_gap(rng);
          if (seconds_to_us(t) > end_us) break;
          const bool above = u01(rng) < sc.false_above_fraction;
          const double strength = above ? sc.min_strength * (1.0 + u01(rng)) : sc.min_strength * u01(rng);
          Signature sig = magnetic_signature(VehicleClass::Car, rng);
          const TimeUs at = emit({s.sensor_id, seconds_to_us(t), sig.direction, strength});
          out.truth.false_detections.push_back({s.sensor_id, at});
        }
      }
    }
  }

  auto by_time = [](const auto& a, const auto& b) {
    return a.t_us != b.t_us ? a.t_us < b.t_us : a.sensor_id < b.sensor_id;
  };
  std::sort(out.truth.labels.begin(), out.truth.labels.end(), by_time);
  std::sort(out.truth.false_detections.begin(), out.truth.false_detections.end(), by_time);
  return out;
}

struct ExportPaths {
  std::string events;
  std::string truth;
  std::string vehicles;
  std::string false_detections;

  static ExportPaths in_dir(const std::string& dir) {
    const std::filesystem::path d(dir);
    return {(d / "events.jsonl").string(), (d / "truth.jsonl").string(), (d / "vehicles.jsonl").string(),
            (d / "false.jsonl").string()};
  }
};

inline std::string events_to_jsonl(const DetectionBatch& batch) {
  std::string out;
  for (const Detection& d : batch.flatten()) {
    out += detection_to_json(d).dump();
    out += '\n';
  }
  return out;
}

inline void export_sim(const DetectionBatch& batch, const GroundTruth& truth, const ExportPaths& paths) {
  write_file(paths.events, events_to_jsonl(batch));
  std::string labels;
  for (const TruthLabel& l : truth.labels) {
    labels += json{{"sensor_id", l.sensor_id},   {"t_us", l.t_us},
                   {"vehicle_id", l.vehicle_id}, {"true_t_us", l.true_t_us},
                   {"chainage_m", l.chainage_m}, {"speed_mps", l.speed_mps}}
                  .dump();
    labels += '\n';
  }
  write_file(paths.truth, labels);
  std::string vehicles;
  for (const TruthVehicle& v : truth.vehicles) {
    json samples = json::array();
    for (const TruthSample& s : v.samples) {
      samples.push_back({{"t_us", s.t_us}, {"chainage_m", s.chainage_m}, {"speed_mps", s.speed_mps}});
    }
    vehicles += json{{"vehicle_id", v.vehicle_id}, {"lane_id", v.lane_id},
                     {"class", to_string(v.vehicle_class)}, {"speed0_mps", v.speed0_mps},
                     {"accel_mps2", v.accel_mps2}, {"spawn_us", v.spawn_us},
                     {"samples", std::move(samples)}}
                    .dump();
    vehicles += '\n';
  }
  write_file(paths.vehicles, vehicles);
  std::string falses;
  for (const FalseDetection& f : truth.false_detections) {
    falses += json{{"sensor_id", f.sensor_id}, {"t_us", f.t_us}}.dump();
    falses += '\n';
  }
  write_file(paths.false_detections, falses);
}

namespace detail {

template <class F>
void for_each_json_line(const std::string& path, F&& f) {
  std::istringstream in(read_file(path));
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      f(json::parse(line));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::Parse, path + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
}

}  // namespace detail

inline DetectionBatch import_events(const std::string& path) {
  std::istringstream in(read_file(path));
  DetectionBatch batch;
  try {
    for (Detection& d : read_detections(in)) batch.insert(std::move(d));
  } catch (const Error& e) {
    throw Error(e.code(), path + ": " + e.what());
  }
  return batch;
}

/// Reads truth files. The vehicles and false-detection files are optional.
inline GroundTruth import_truth(const ExportPaths& paths) {
  GroundTruth truth;
  detail::for_each_json_line(paths.truth, [&](const json& j) {
    truth.labels.push_back({j.at("sensor_id").get<std::string>(), j.at("t_us").get<TimeUs>(),
                            j.at("vehicle_id").get<int>(), j.at("true_t_us").get<TimeUs>(),
                            j.at("chainage_m").get<double>(), j.at("speed_mps").get<double>()});
  });
  if (!paths.vehicles.empty() && std::filesystem::exists(paths.vehicles)) {
    detail::for_each_json_line(paths.vehicles, [&](const json& j) {
      TruthVehicle v;
      v.vehicle_id = j.at("vehicle_id").get<int>();
      v.lane_id = j.at("lane_id").get<int>();
      v.vehicle_class = vehicle_class_from_string(j.at("class").get<std::string>());
      v.speed0_mps = j.at("speed0_mps").get<double>();
      v.accel_mps2 = j.at("accel_mps2").get<double>();
      v.spawn_us = j.at("spawn_us").get<TimeUs>();
      for (const json& s : j.at("samples")) {
        v.samples.push_back({s.at("t_us").get<TimeUs>(), s.at("chainage_m").get<double>(), s.at("speed_mps").get<double>()});
      }
      truth.vehicles.push_back(std::move(v));
    });
  }
  if (!paths.false_detections.empty() && std::filesystem::exists(paths.false_detections)) {
    detail::for_each_json_line(paths.false_detections, [&](const json& j) {
      truth.false_detections.push_back({j.at("sensor_id").get<std::string>(), j.at("t_us").get<TimeUs>()});
    });
  }
  return truth;
}

}  // namespace magtrack
