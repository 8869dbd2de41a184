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

#include "safepilco/environments.hpp"

#include <algorithm>
#include <cmath>

#include "safepilco/errors.hpp"

namespace safepilco {

void PendulumParams::validate() const {
  if (!(mass > 0.0) || !(length > 0.0) || !(dt > 0.0) || gravity == 0.0 || !(u_max > 0.0) ||
      !(max_speed > 0.0) || !(obs_noise_std >= 0.0)) {
    throw InvalidArgument("PendulumParams: invalid physical parameters");
  }
}

double pendulum_acceleration(const PendulumParams& params, double theta, double u) {
  return 3.0 * params.gravity / (2.0 * params.length) * std::sin(theta) +
         3.0 * u / (params.mass * params.length * params.length);
}

PendulumState pendulum_step(const PendulumParams& params, const PendulumState& state, double u) {
  const double torque = std::clamp(u, -params.u_max, params.u_max);
  PendulumState next;
  next.theta_dot = state.theta_dot + params.dt * pendulum_acceleration(params, state.theta, torque);
  next.theta_dot = std::clamp(next.theta_dot, -params.max_speed, params.max_speed);
  next.theta = state.theta + params.dt * next.theta_dot;
  return next;
}

VectorXd encode_observation(const PendulumState& state) {
  VectorXd obs(kPendulumObsDim);
  obs << std::cos(state.theta), std::sin(state.theta), state.theta_dot;
  return obs;
}

double decode_angle(const VectorXd& observation) { return std::atan2(observation(1), observation(0)); }

GaussianState initial_observation_distribution(const InitialStateSpec& init) {
  const double mu = init.theta_mean;
  const double v = init.theta_std * init.theta_std;
  const double e1 = std::exp(-0.5 * v);
  const double e2 = std::exp(-2.0 * v);
  VectorXd mean(kPendulumObsDim);
  mean << e1 * std::cos(mu), e1 * std::sin(mu), 0.0;
  MatrixXd cov = MatrixXd::Zero(kPendulumObsDim, kPendulumObsDim);
  cov(0, 0) = 0.5 * (1.0 + e2 * std::cos(2.0 * mu)) - mean(0) * mean(0);
  cov(1, 1) = 0.5 * (1.0 - e2 * std::cos(2.0 * mu)) - mean(1) * mean(1);
  cov(0, 1) = cov(1, 0) = 0.5 * e2 * std::sin(2.0 * mu) - mean(0) * mean(1);
  cov(2, 2) = init.velocity_std * init.velocity_std;
  return GaussianState(mean, cov);
}

PendulumParams perturb(const PendulumParams& params, const PerturbationSpec& spec) {
  if (!(spec.sigma >= 0.0)) throw InvalidArgument("perturb: sigma must be nonnegative");
  PendulumParams out = params;
  out.obs_noise_std = spec.sigma;
  if (spec.sigma == 0.0) return out;
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, spec.sigma);
  auto draw = [&] {
    double eps = normal(rng);
    while (std::abs(eps) > 0.9) eps = normal(rng);
    return eps;
  };
  out.mass *= 1.0 + draw();
  out.length *= 1.0 + draw();
  out.gravity *= 1.0 + draw();
  return out;
}

PendulumEnv::PendulumEnv(PendulumParams params, InitialStateSpec init, std::uint64_t seed)
    : params_(params), init_(init), rng_(seed) {
  params_.validate();
}

VectorXd PendulumEnv::observe() {
  VectorXd obs = encode_observation(state_);
  if (params_.obs_noise_std > 0.0) {
    std::normal_distribution<double> normal(0.0, params_.obs_noise_std);
    for (Eigen::Index i = 0; i < obs.size(); ++i) obs(i) += normal(rng_);
  }
  return obs;
}

VectorXd PendulumEnv::reset() {
  std::normal_distribution<double> normal(0.0, 1.0);
  state_.theta = init_.theta_mean + init_.theta_std * normal(rng_);
  state_.theta_dot = init_.velocity_std * normal(rng_);
  return observe();
}

VectorXd PendulumEnv::step(double u) {
  state_ = pendulum_step(params_, state_, u);
  return observe();
}

double synthetic_1d_step(double phi, double x) { return std::sin(phi * x); }

ParametricSystem synthetic_1d_system() {
  ParametricSystem sys;
  sys.step = [](const VectorXd& x, const VectorXd&, const VectorXd& phi) {
    return VectorXd::Constant(1, synthetic_1d_step(phi(0), x(0)));
  };
  sys.sample_input = [](std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    return std::make_pair(VectorXd::Constant(1, u(rng)), VectorXd(0));
  };
  sys.clamp_input = [](VectorXd& x, VectorXd&) { x(0) = std::clamp(x(0), -1.0, 1.0); };
  return sys;
}

ParametricSystem linear_1d_system() {
  ParametricSystem sys;
  sys.step = [](const VectorXd& x, const VectorXd&, const VectorXd& phi) {
    return VectorXd::Constant(1, phi(0) * x(0));
  };
  sys.sample_input = [](std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    return std::make_pair(VectorXd::Constant(1, u(rng)), VectorXd(0));
  };
  sys.clamp_input = [](VectorXd& x, VectorXd&) { x(0) = std::clamp(x(0), 0.0, 1.0); };
  return sys;
}

ParametricSystem pendulum_system(const PendulumParams& base) {
  ParametricSystem sys;
  sys.step = [base](const VectorXd& x, const VectorXd& u, const VectorXd& phi) {
    PendulumParams p = base;
    p.mass = phi(0);
    p.length = phi(1);
    p.gravity = phi(2);
    const PendulumState next = pendulum_step(p, {x(0), x(1)}, u(0));
    VectorXd out(2);
    out << next.theta, next.theta_dot;
    return out;
  };
  sys.sample_input = [u_max = base.u_max, v_max = base.max_speed](std::mt19937_64& rng) {
    std::uniform_real_distribution<double> angle(-3.141592653589793, 3.141592653589793);
    std::uniform_real_distribution<double> speed(-v_max, v_max);
    std::uniform_real_distribution<double> torque(-u_max, u_max);
    VectorXd x(2);
    x(0) = angle(rng);
    x(1) = speed(rng);
    return std::make_pair(x, VectorXd::Constant(1, torque(rng)));
  };
  sys.clamp_input = [u_max = base.u_max, v_max = base.max_speed](VectorXd& x, VectorXd& u) {
    x(0) = std::clamp(x(0), -3.141592653589793, 3.141592653589793);
    x(1) = std::clamp(x(1), -v_max, v_max);
    u(0) = std::clamp(u(0), -u_max, u_max);
  };
  return sys;
}

namespace {

VectorXd sample_ball(std::mt19937_64& rng, Eigen::Index dim, double radius) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  VectorXd dir(dim);
  for (Eigen::Index i = 0; i < dim; ++i) dir(i) = normal(rng);
  const double norm = dir.norm();
  const double r = radius * std::pow(unif(rng), 1.0 / static_cast<double>(dim));
  return norm > 0.0 ? VectorXd(dir * (r / norm)) : VectorXd(VectorXd::Zero(dim));
}

void project_ball(VectorXd& d, double radius) {
  const double n = d.norm();
  if (n > radius) d *= radius / n;
}

double slope(const ParametricSystem& system, const VectorXd& phi0, const VectorXd& x, const VectorXd& u,
             const VectorXd& d1, const VectorXd& d2) {
  const double dn = (d1 - d2).norm();
  if (dn < 1e-12) return -1.0;
  return (system.step(x, u, phi0 + d1) - system.step(x, u, phi0 + d2)).norm() / dn;
}

void refine_witness(const ParametricSystem& system, const VectorXd& phi0, double radius,
                    LipschitzEstimate& est) {
  const Eigen::Index nx = est.witness_x.size();
  const Eigen::Index nu = est.witness_u.size();
  const Eigen::Index np = phi0.size();
  const bool move_input = static_cast<bool>(system.clamp_input);
  const double gap = 1e-4 * radius;
  // Pair as (centre, direction): delta1 = c, delta2 = c + gap * v / |v|.
  VectorXd z(nx + nu + 2 * np);
  z << est.witness_x, est.witness_u, est.witness_phi - phi0, est.witness_delta;
  VectorXd step(z.size());
  for (Eigen::Index i = 0; i < nx + nu; ++i) step(i) = move_input ? 0.1 * std::max(1.0, std::abs(z(i))) : 0.0;
  step.segment(nx + nu, np).setConstant(0.1 * radius);
  step.tail(np).setConstant(0.1 * z.tail(np).norm());

  auto evaluate = [&](VectorXd& c, VectorXd& d1, VectorXd& d2) {
    VectorXd x = c.head(nx);
    VectorXd u = c.segment(nx, nu);
    if (move_input) system.clamp_input(x, u);
    c.head(nx) = x;
    c.segment(nx, nu) = u;
    const double vn = c.tail(np).norm();
    if (vn == 0.0) return -1.0;
    d1 = c.segment(nx + nu, np);
    project_ball(d1, radius - gap);
    c.segment(nx + nu, np) = d1;
    d2 = d1 + gap * c.tail(np) / vn;
    return slope(system, phi0, x, u, d1, d2);
  };

  VectorXd d1, d2;
  double best = evaluate(z, d1, d2);
  VectorXd best_d1 = d1;
  VectorXd best_d2 = d2;
  const double floor = 1e-10 * std::max(1.0, step.maxCoeff());
  for (int sweep = 0; sweep < 20000 && step.maxCoeff() > floor; ++sweep) {
    bool improved = false;
    for (Eigen::Index i = 0; i < z.size(); ++i) {
      if (step(i) == 0.0) continue;
      for (const double sign : {1.0, -1.0}) {
        VectorXd c = z;
        c(i) += sign * step(i);
        const double v = evaluate(c, d1, d2);
        if (v > best) {
          best = v;
          z = c;
          best_d1 = d1;
          best_d2 = d2;
          improved = true;
          break;
        }
      }
    }
    if (!improved) step *= 0.5;
  }
  if (best > est.k) {
    est.k = best;
    est.witness_x = z.head(nx);
    est.witness_u = z.segment(nx, nu);
    est.witness_phi = phi0 + best_d1;
    est.witness_delta = best_d2 - best_d1;
  }
}

}  // namespace

LipschitzEstimate estimate_lipschitz(const ParametricSystem& system, const VectorXd& phi0,
                                     double radius, long n_samples, std::uint64_t seed, bool refine) {
  if (n_samples < 100) throw InvalidArgument("estimate_lipschitz: need at least 100 samples");
  if (!(radius >= 0.0)) throw InvalidArgument("estimate_lipschitz: radius must be nonnegative");
  std::mt19937_64 rng(seed);
  LipschitzEstimate est;
  est.samples = n_samples;
  bool any = false;
  for (long s = 0; s < n_samples; ++s) {
    const auto [x, u] = system.sample_input(rng);
    const VectorXd d1 = sample_ball(rng, phi0.size(), radius);
    const VectorXd d2 = sample_ball(rng, phi0.size(), radius);
    const double k = slope(system, phi0, x, u, d1, d2);
    if (k < 0.0) continue;
    any = true;
    if (k > est.k || est.witness_x.size() == 0) {
      est.k = k;
      est.witness_x = x;
      est.witness_u = u;
      est.witness_phi = phi0 + d1;
      est.witness_delta = d2 - d1;
    }
  }
  if (!any) throw DegenerateSamples("estimate_lipschitz: every parameter pair coincided");
  if (refine) refine_witness(system, phi0, radius, est);
  return est;
}

nlohmann::json pendulum_params_to_json(const PendulumParams& p) {
  return {{"mass", p.mass},   {"length", p.length},         {"gravity", p.gravity},
          {"dt", p.dt},       {"u_max", p.u_max},           {"max_speed", p.max_speed},
          {"obs_noise_std", p.obs_noise_std}};
}

PendulumParams pendulum_params_from_json(const nlohmann::json& j) {
  PendulumParams p;
  p.mass = j.value("mass", p.mass);
  p.length = j.value("length", p.length);
  p.gravity = j.value("gravity", p.gravity);
  p.dt = j.value("dt", p.dt);
  p.u_max = j.value("u_max", p.u_max);
  p.max_speed = j.value("max_speed", p.max_speed);
  p.obs_noise_std = j.value("obs_noise_std", p.obs_noise_std);
  p.validate();
  return p;
}

}  // namespace safepilco
