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

#include <cstdlib>
#include <functional>
#include <map>
#include <string>

#include "magtrack/association.hpp"
#include "magtrack/io.hpp"
#include "magtrack/motion.hpp"
#include "magtrack/sim.hpp"
#include "magtrack/stream.hpp"

namespace magtrack {

// Run configuration: every field optional, unknown keys rejected.
//
// {"scenario": {...}, "filter": {...}, "motion": {...},
//  "association": {...}, "stream": {...}}

struct RunConfig {
  Scenario scenario;
  TrackerConfig tracker;
  StreamConfig stream;

  void validate() const {
    scenario.validate();
    tracker.validate();
    stream.validate();
  }
};

namespace detail {

using FieldSetters = std::map<std::string, std::function<void(const json&)>>;

inline void apply_fields(const json& j, const std::string& where, const FieldSetters& fields) {
  if (!j.is_object()) throw Error(ErrorCode::InvalidArgument, where + " must be an object");
  for (const auto& [key, value] : j.items()) {
    auto it = fields.find(key);
    if (it == fields.end()) throw Error(ErrorCode::InvalidArgument, "unknown key " + where + "." + key);
    try {
      it->second(value);
    } catch (const json::exception& e) {
      throw Error(ErrorCode::InvalidArgument, "bad value for " + where + "." + key + ": " + e.what());
    }
  }
}

template <typename T>
std::function<void(const json&)> set(T& field) {
  return [&field](const json& v) { field = v.get<T>(); };
}

}  // namespace detail

inline json to_json(const LayoutConfig& c) {
  return {{"lanes", c.lanes}, {"length_m", c.length_m}, {"spacing_m", c.spacing_m},
          {"min_spacing_m", c.min_spacing_m}, {"max_spacing_m", c.max_spacing_m}};
}

inline void from_json(const json& j, LayoutConfig& c) {
  detail::apply_fields(j, "scenario.layout",
                       {{"lanes", detail::set(c.lanes)},
                        {"length_m", detail::set(c.length_m)},
                        {"spacing_m", detail::set(c.spacing_m)},
                        {"min_spacing_m", detail::set(c.min_spacing_m)},
                        {"max_spacing_m", detail::set(c.max_spacing_m)}});
}

inline json to_json(const Scenario& s) {
  return {{"layout", to_json(s.layout)},
          {"duration_s", s.duration_s},
          {"arrival_rate", s.arrival_rate},
          {"speed_range", s.speed_range},
          {"motion", to_string(s.motion)},
          {"accel_range", s.accel_range},
          {"p_l", s.p_l},
          {"sigma_dt_s", s.sigma_dt_s},
          {"p_false", s.p_false},
          {"false_above_fraction", s.false_above_fraction},
          {"min_strength", s.min_strength},
          {"min_headway_s", s.min_headway_s},
          {"class_mix", s.class_mix},
          {"seed", s.seed}};
}

inline void from_json(const json& j, Scenario& s) {
  detail::apply_fields(
      j, "scenario",
      {{"layout", [&](const json& v) { from_json(v, s.layout); }},
       {"duration_s", detail::set(s.duration_s)},
       {"arrival_rate", detail::set(s.arrival_rate)},
       {"speed_range", detail::set(s.speed_range)},
       {"motion", [&](const json& v) { s.motion = motion_kind_from_string(v.get<std::string>()); }},
       {"accel_range", detail::set(s.accel_range)},
       {"p_l", detail::set(s.p_l)},
       {"sigma_dt_s", detail::set(s.sigma_dt_s)},
       {"p_false", detail::set(s.p_false)},
       {"false_above_fraction", detail::set(s.false_above_fraction)},
       {"min_strength", detail::set(s.min_strength)},
       {"min_headway_s", detail::set(s.min_headway_s)},
       {"class_mix", detail::set(s.class_mix)},
       {"seed", detail::set(s.seed)}});
}

inline json to_json(const FilterConfig& c) {
  return {{"min_strength", c.min_strength}, {"dedup_window_us", c.dedup_window_us}};
}

inline json to_json(const MotionModelConfig& c) {
  return {{"kind", to_string(c.kind)},   {"dt_s", c.dt_s},
          {"q_cv", c.q_cv},              {"q_a", c.q_a},
          {"a_max", c.a_max},            {"r_pos", c.r_pos},
          {"sigma_p_m", c.sigma_p_m},    {"sigma_dt_s", c.sigma_dt_s},
          {"prior_speed_mps", c.prior_speed_mps}, {"prior_speed_sd_mps", c.prior_speed_sd_mps}};
}

inline json to_json(const AssociationConfig& c) {
  return {{"p_l", c.p_l},         {"sigma_t_s", c.sigma_t_s},   {"w_min", c.w_min},
          {"max_hops", c.max_hops}, {"miss_limit", c.miss_limit}, {"w_new", c.w_new},
          {"inflate_sigma", c.inflate_sigma}};
}

inline json to_json(const StreamConfig& c) {
  return {{"window_s", c.window_s}, {"late_tolerance_s", c.late_tolerance_s}};
}

inline json to_json(const RunConfig& c) {
  return {{"scenario", to_json(c.scenario)},
          {"filter", to_json(c.tracker.filter)},
          {"motion", to_json(c.tracker.motion)},
          {"association", to_json(c.tracker.association)},
          {"stream", to_json(c.stream)}};
}

/// Reads a run configuration over the defaults and validates it.
/// Errors are Error(InvalidArgument).
inline RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  FilterConfig& f = c.tracker.filter;
  MotionModelConfig& m = c.tracker.motion;
  AssociationConfig& a = c.tracker.association;
  StreamConfig& s = c.stream;
  detail::apply_fields(
      j, "config",
      {{"scenario", [&](const json& v) { from_json(v, c.scenario); }},
       {"filter",
        [&](const json& v) {
          detail::apply_fields(v, "filter", {{"min_strength", detail::set(f.min_strength)},
                                             {"dedup_window_us", detail::set(f.dedup_window_us)}});
        }},
       {"motion",
        [&](const json& v) {
          detail::apply_fields(
              v, "motion",
              {{"kind", [&](const json& k) { m.kind = motion_kind_from_string(k.get<std::string>()); }},
               {"dt_s", detail::set(m.dt_s)},
               {"q_cv", detail::set(m.q_cv)},
               {"q_a", detail::set(m.q_a)},
               {"a_max", detail::set(m.a_max)},
               {"r_pos", detail::set(m.r_pos)},
               {"sigma_p_m", detail::set(m.sigma_p_m)},
               {"sigma_dt_s", detail::set(m.sigma_dt_s)},
               {"prior_speed_mps", detail::set(m.prior_speed_mps)},
               {"prior_speed_sd_mps", detail::set(m.prior_speed_sd_mps)}});
        }},
       {"association",
        [&](const json& v) {
          detail::apply_fields(v, "association",
                               {{"p_l", detail::set(a.p_l)},
                                {"sigma_t_s", detail::set(a.sigma_t_s)},
                                {"w_min", detail::set(a.w_min)},
                                {"max_hops", detail::set(a.max_hops)},
                                {"miss_limit", detail::set(a.miss_limit)},
                                {"w_new", detail::set(a.w_new)},
                                {"inflate_sigma", detail::set(a.inflate_sigma)}});
        }},
       {"stream",
        [&](const json& v) {
          detail::apply_fields(v, "stream", {{"window_s", detail::set(s.window_s)},
                                             {"late_tolerance_s", detail::set(s.late_tolerance_s)}});
        }}});
  c.validate();
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  json j;
  try {
    j = read_json_file(path);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::Io) throw;
    throw Error(ErrorCode::InvalidArgument, e.what());
  }
  return run_config_from_json(j);
}

/// Seed from MAGTRACK_SEED when set, otherwise `fallback`.
inline std::uint64_t seed_from_env(std::uint64_t fallback) {
  const char* s = std::getenv("MAGTRACK_SEED");
  if (!s || !*s) return fallback;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(s, &end, 10);
  if (*end != '\0') throw Error(ErrorCode::InvalidArgument, "MAGTRACK_SEED must be an unsigned integer");
  return v;
}

}  // namespace magtrack
