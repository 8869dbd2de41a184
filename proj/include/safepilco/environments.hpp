// Copyright 2026 The safepilco Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <functional>
#include <random>

#include <json.hpp>

#include "safepilco/gaussian.hpp"

namespace safepilco {

/// Torque-limited pendulum, theta measured from upright (theta = pi hangs
/// down). Latent parameters are mass, length and gravity.
struct PendulumParams {
  double mass = 1.0;
  double length = 1.0;
  double gravity = 9.81;
  double dt = 0.05;
  double u_max = 2.0;
  double max_speed = 8.0;
  double obs_noise_std = 0.0;

  void validate() const;
};

struct PendulumState {
  double theta = 0.0;
  double theta_dot = 0.0;
};

/// Initial state: theta ~ N(theta_mean, theta_std^2), theta_dot ~
/// N(0, velocity_std^2).
struct InitialStateSpec {
  double theta_mean = 3.141592653589793;
  double theta_std = 0.1;
  double velocity_std = 0.1;
};

inline constexpr Eigen::Index kPendulumObsDim = 3;
inline constexpr Eigen::Index kPendulumActionDim = 1;

/// Angular acceleration 3g/(2l) sin(theta) + 3u/(m l^2).
double pendulum_acceleration(const PendulumParams& params, double theta, double u);

/// Semi-implicit Euler step. u is clipped to [-u_max, u_max] and theta_dot
/// to [-max_speed, max_speed].
PendulumState pendulum_step(const PendulumParams& params, const PendulumState& state, double u);

/// (cos theta, sin theta, theta_dot).
VectorXd encode_observation(const PendulumState& state);
/// Wrapped angle in (-pi, pi] recovered from an observation.
double decode_angle(const VectorXd& observation);

/// Exact Gaussian moments of the encoded initial observation.
GaussianState initial_observation_distribution(const InitialStateSpec& init);

struct PerturbationSpec {
  double sigma = 0.0;
  std::uint64_t seed = 0;
};

/// Multiplies mass, length and gravity by (1 + eps), eps ~ N(0, sigma^2)
/// truncated to [-0.9, 0.9], and sets the observation noise to sigma.
PendulumParams perturb(const PendulumParams& params, const PerturbationSpec& spec);

/// Environment instance with a private RNG. Its full state is the engine
/// and the pendulum state; distributions are not cached between calls.
class PendulumEnv {
 public:
  PendulumEnv(PendulumParams params, InitialStateSpec init, std::uint64_t seed);

  /// Samples an initial state and returns its (noisy) observation.
  VectorXd reset();
  /// Applies u (clipped) and returns the (noisy) observation.
  VectorXd step(double u);

  const PendulumState& state() const { return state_; }
  void set_state(const PendulumState& state) { state_ = state; }
  const PendulumParams& params() const { return params_; }
  const InitialStateSpec& initial_spec() const { return init_; }
  std::mt19937_64& rng() { return rng_; }
  const std::mt19937_64& rng() const { return rng_; }

 private:
  VectorXd observe();

  PendulumParams params_;
  InitialStateSpec init_;
  std::mt19937_64 rng_;
  PendulumState state_;
};

/// f(x; phi) = sin(phi x); Lipschitz in phi with constant max|x cos(phi x)| <= 1
/// on [-1, 1].
double synthetic_1d_step(double phi, double x);

/// A system x' = f(x, u; phi) with a sampler over its (x, u) domain.
struct ParametricSystem {
  std::function<VectorXd(const VectorXd& x, const VectorXd& u, const VectorXd& phi)> step;
  std::function<std::pair<VectorXd, VectorXd>(std::mt19937_64&)> sample_input;
  /// Projects (x, u) back onto the sampled domain.
  std::function<void(VectorXd& x, VectorXd& u)> clamp_input;
};

ParametricSystem synthetic_1d_system();
/// f(x; phi) = phi x on x in [0, 1].
ParametricSystem linear_1d_system();
/// Pendulum state map (theta, theta_dot) with phi = (mass, length, gravity).
ParametricSystem pendulum_system(const PendulumParams& base);

struct LipschitzEstimate {
  double k = 0.0;
  long samples = 0;
  VectorXd witness_x;
  VectorXd witness_u;
  VectorXd witness_phi;
  VectorXd witness_delta;
};

/// Max over sampled (x, u, delta1, delta2) of
/// ||f(x,u; phi0+delta1) - f(x,u; phi0+delta2)|| / ||delta1 - delta2|| with
/// delta drawn uniformly from the ball of the given radius. A lower bound on
/// the true constant. With refine, a compass search started at the best
/// sample climbs the same ratio over (x, u, delta1, delta2) inside the domain
/// and the ball; every evaluated point is still a sample, so the result stays
/// a lower bound.
LipschitzEstimate estimate_lipschitz(const ParametricSystem& system, const VectorXd& phi0,
                                     double radius, long n_samples, std::uint64_t seed,
                                     bool refine = false);

nlohmann::json pendulum_params_to_json(const PendulumParams& p);
PendulumParams pendulum_params_from_json(const nlohmann::json& j);

}  // namespace safepilco
