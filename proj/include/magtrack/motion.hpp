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

#include <cmath>
#include <string>
#include <vector>

#include "magtrack/domain.hpp"

namespace magtrack {

enum class MotionKind { CV, CA };

inline std::string to_string(MotionKind k) { return k == MotionKind::CV ? "CV" : "CA"; }

inline MotionKind motion_kind_from_string(const std::string& s) {
  if (s == "CV" || s == "cv") return MotionKind::CV;
  if (s == "CA" || s == "ca") return MotionKind::CA;
  throw Error(ErrorCode::InvalidArgument, "unknown motion model '" + s + "'");
}

/// Fastest 0 -> 100 km/h acceleration of an ordinary car (10 s), m/s^2.
inline constexpr double kDefaultAMax = 100.0 / 3.6 / 10.0;

struct MotionModelConfig {
  MotionKind kind = MotionKind::CV;
  double dt_s = 1.0;
  double q_cv = 0.25 * kDefaultAMax * kDefaultAMax;  // white-acceleration variance, (m/s^2)^2
  double q_a = 0.25 * kDefaultAMax * kDefaultAMax;   // white-jerk variance, (m/s^3)^2
  double a_max = kDefaultAMax;
  double r_pos = 0.25 + (16.7 * 0.05) * (16.7 * 0.05);  // at the prior speed

  // measurement noise model r = sigma_p^2 + (v * sigma_dt)^2
  double sigma_p_m = 0.5;
  double sigma_dt_s = 0.05;

  // new-track prior
  double prior_speed_mps = 16.7;
  double prior_speed_sd_mps = 8.0;

  void validate() const {
    if (!(dt_s > 0.0)) throw Error(ErrorCode::InvalidArgument, "dt_s must be positive");
    if (!(q_cv >= 0.0) || !(q_a >= 0.0) || !(r_pos >= 0.0)) {
      throw Error(ErrorCode::InvalidArgument, "noise variances must be nonnegative");
    }
    if (!(a_max > 0.0)) throw Error(ErrorCode::InvalidArgument, "a_max must be positive");
    if (!(sigma_p_m >= 0.0) || !(sigma_dt_s >= 0.0) || !(prior_speed_sd_mps > 0.0)) {
      throw Error(ErrorCode::InvalidArgument, "noise scales must be nonnegative");
    }
  }

  /// Position measurement variance for a vehicle moving at `speed_mps`.
  double measurement_variance(double speed_mps) const {
    const double v = std::max(speed_mps, 0.0) * sigma_dt_s;
    return sigma_p_m * sigma_p_m + v * v;
  }
};

/// Kinematic state: [position, velocity] (CV) or [position, velocity, acceleration] (CA).
struct KalmanState {
  TimeUs t_us = 0;
  Eigen::VectorXd x;
  Eigen::MatrixXd P;

  double position() const { return x(0); }
  double velocity() const { return x(1); }
  double acceleration() const { return x.size() > 2 ? x(2) : 0.0; }
  double position_variance() const { return P(0, 0); }
  double velocity_variance() const { return P(1, 1); }

  bool operator==(const KalmanState& o) const {
    return t_us == o.t_us && x.size() == o.x.size() && x == o.x && P == o.P;
  }
};

inline TimeUs predict_arrival_cv(TimeUs t_k, double speed_mps, double d_m) {
  if (!(speed_mps > 0.0)) throw Error(ErrorCode::NonpositiveSpeed, "speed must be positive");
  if (!(d_m >= 0.0)) throw Error(ErrorCode::InvalidArgument, "distance must be nonnegative");
  return t_k + static_cast<TimeUs>(std::llround(1e6 * d_m / speed_mps));
}

/// Uniform-acceleration arrival. Uses 2d / (sqrt(s^2 + 2ad) + s), which equals
/// (sqrt(s^2 + 2ad) - s) / a without the cancellation near a = 0.
inline TimeUs predict_arrival_ca(TimeUs t_k, double speed_mps, double accel_mps2, double d_m) {
  if (!(d_m >= 0.0)) throw Error(ErrorCode::InvalidArgument, "distance must be nonnegative");
  if (!(speed_mps >= 0.0)) throw Error(ErrorCode::InvalidArgument, "speed must be nonnegative");
  if (std::abs(accel_mps2) < 1e-6) {
    if (!(speed_mps > 0.0)) throw Error(ErrorCode::NoArrival, "stationary vehicle never arrives");
    return predict_arrival_cv(t_k, speed_mps, d_m);
  }
  if (d_m == 0.0) return t_k;
  const double disc = speed_mps * speed_mps + 2.0 * accel_mps2 * d_m;
  if (!(disc > 0.0)) throw Error(ErrorCode::NoArrival, "vehicle stops before reaching the sensor");
  if (speed_mps <= 0.0 && accel_mps2 <= 0.0) throw Error(ErrorCode::NoArrival, "vehicle never moves forward");
  const double dt = 2.0 * d_m / (std::sqrt(disc) + speed_mps);
  if (!(dt > 0.0) || !std::isfinite(dt)) throw Error(ErrorCode::NoArrival, "no positive arrival time");
  return t_k + static_cast<TimeUs>(std::llround(1e6 * dt));
}

inline int state_dim(MotionKind kind) { return kind == MotionKind::CV ? 2 : 3; }

inline Eigen::MatrixXd transition(MotionKind kind, double dt) {
  const int n = state_dim(kind);
  Eigen::MatrixXd F = Eigen::MatrixXd::Identity(n, n);
  F(0, 1) = dt;
  if (kind == MotionKind::CA) {
    F(0, 2) = 0.5 * dt * dt;
    F(1, 2) = dt;
  }
  return F;
}

/// Piecewise-constant white acceleration (CV) or white jerk (CA) process noise.
inline Eigen::MatrixXd process_noise(const MotionModelConfig& config, double dt) {
  Eigen::VectorXd g;
  double q = 0.0;
  if (config.kind == MotionKind::CV) {
    g.resize(2);
    g << 0.5 * dt * dt, dt;
    q = config.q_cv;
  } else {
    g.resize(3);
    g << dt * dt * dt / 6.0, 0.5 * dt * dt, dt;
    q = config.q_a;
  }
  return q * g * g.transpose();
}

inline void symmetrize(Eigen::MatrixXd& P) { P = 0.5 * (P + P.transpose()).eval(); }

inline KalmanState initial_state(const MotionModelConfig& config, TimeUs t_us, double position_m) {
  const int n = state_dim(config.kind);
  KalmanState s;
  s.t_us = t_us;
  s.x = Eigen::VectorXd::Zero(n);
  s.x(0) = position_m;
  s.x(1) = config.prior_speed_mps;
  s.P = Eigen::MatrixXd::Zero(n, n);
  s.P(0, 0) = config.sigma_p_m * config.sigma_p_m;
  s.P(1, 1) = config.prior_speed_sd_mps * config.prior_speed_sd_mps;
  if (n == 3) s.P(2, 2) = 0.25 * config.a_max * config.a_max;
  return s;
}

inline KalmanState kf_predict(const KalmanState& state, TimeUs to_t_us, const MotionModelConfig& config) {
  if (to_t_us < state.t_us) throw Error(ErrorCode::BackwardsTime, "cannot predict backwards in time");
  if (state.x.size() != state_dim(config.kind)) {
    throw Error(ErrorCode::InvalidArgument, "state dimension does not match motion model");
  }
  if (to_t_us == state.t_us) return state;
  const double dt = us_to_seconds(to_t_us - state.t_us);
  const Eigen::MatrixXd F = transition(config.kind, dt);
  KalmanState out;
  out.t_us = to_t_us;
  out.x = F * state.x;
  out.P = F * state.P * F.transpose() + process_noise(config, dt);
  symmetrize(out.P);
  return out;
}

/// Scalar position measurement update (H selects position).
inline KalmanState kf_update(const KalmanState& state, double z_pos, double r, TimeUs at_t_us) {
  if (!(r > 0.0)) throw Error(ErrorCode::InvalidArgument, "measurement variance must be positive");
  if (at_t_us != state.t_us) throw Error(ErrorCode::InvalidArgument, "update time differs from state time; predict first");
  const Eigen::Index n = state.x.size();
  const double s = state.P(0, 0) + r;
  const Eigen::VectorXd k = state.P.col(0) / s;
  KalmanState out;
  out.t_us = state.t_us;
  out.x = state.x + k * (z_pos - state.x(0));
  // Joseph form keeps P PSD under rounding.
  Eigen::MatrixXd IKH = Eigen::MatrixXd::Identity(n, n);
  IKH.col(0) -= k;
  out.P = IKH * state.P * IKH.transpose() + r * k * k.transpose();
  symmetrize(out.P);
  return out;
}

struct RiccatiOptions {
  /// Initial covariance; empty means the new-track prior.
  Eigen::MatrixXd P0;
  /// Measurement variance; negative means config.r_pos.
  double r = -1.0;
};

/// Velocity variance after each predict+update step of the data-independent
/// covariance recursion with fixed step dt_s.
inline std::vector<double> covariance_trace(const MotionModelConfig& config, int n_steps,
                                            const RiccatiOptions& options = {}) {
  if (n_steps < 1) throw Error(ErrorCode::InvalidArgument, "n_steps must be at least 1");
  config.validate();
  const double r = options.r >= 0.0 ? options.r : config.r_pos;
  if (!(r > 0.0)) throw Error(ErrorCode::InvalidArgument, "measurement variance must be positive");
  KalmanState s = initial_state(config, 0, 0.0);
  if (options.P0.size() > 0) s.P = options.P0;
  const TimeUs step = seconds_to_us(config.dt_s);
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(n_steps));
  for (int i = 0; i < n_steps; ++i) {
    s = kf_predict(s, s.t_us + step, config);
    s = kf_update(s, s.x(0), r, s.t_us);
    out.push_back(s.P(1, 1));
  }
  return out;
}

}  // namespace magtrack
