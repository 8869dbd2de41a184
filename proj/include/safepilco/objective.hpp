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

#include <vector>

#include <json.hpp>

#include "safepilco/autodiff.hpp"
#include "safepilco/gaussian.hpp"
#include "safepilco/gp.hpp"
#include "safepilco/policy.hpp"

namespace safepilco {

/// Saturating cost 1 - exp(-(x - target)^T W (x - target) / 2).
struct CostModel {
  VectorXd target;
  MatrixXd weight;  // W, symmetric PSD

  void validate(Eigen::Index state_dim) const;
};

inline constexpr double kDefaultCostWidth = 0.25;

/// Upright target (1, 0, 0) with W = diag(1/w^2, 1/w^2, 0): the position
/// encoding is penalized, velocity is not.
CostModel pendulum_cost(double width = kDefaultCostWidth);

/// Hazard interval on one dimension of the state, or on an angle
/// reconstructed from a (cos, sin) pair.
struct HazardRegion {
  enum class Encoding { kDirect, kAngleFromCosSin };

  Encoding encoding = Encoding::kDirect;
  Eigen::Index dimension = 0;  // kDirect
  Eigen::Index cos_dim = 0;    // kAngleFromCosSin
  Eigen::Index sin_dim = 1;
  double lo = 0.7853981633974483;
  double hi = 2.356194490192345;

  void validate(Eigen::Index state_dim) const;
  bool contains(double value) const { return value >= lo && value <= hi; }
};

/// theta in [45deg, 135deg] decoded from the pendulum observation.
HazardRegion pendulum_hazard();

/// Cost and hazard membership at a single (true) state; the angle is decoded
/// with atan2, wrapped to (-pi, pi].
double cost_at(const CostModel& cost, const VectorXd& x);
bool hazard_contains(const HazardRegion& region, const VectorXd& x);

double expected_cost(const CostModel& cost, const GaussianState& state);

/// Gaussian approximation of the hazard coordinate: the marginal for
/// kDirect, first-order atan2 reconstruction for kAngleFromCosSin.
std::pair<double, double> hazard_marginal(const HazardRegion& region, const GaussianState& state);

/// Probability mass of the hazard interval under the marginal Gaussian.
double risk(const HazardRegion& region, const GaussianState& state);

ad::Var expected_cost_ad(const CostModel& cost, const ad::Var& mean, const ad::Var& cov);
ad::Var risk_ad(const HazardRegion& region, const ad::Var& mean, const ad::Var& cov);

struct TrajectorySummary {
  std::vector<GaussianState> states;  // x_1 .. x_T
  std::vector<double> step_costs;
  std::vector<double> step_risks;
  double value = 0.0;  // V = sum of step costs
  double risk = 0.0;   // Q = sum of step risks
};

struct RolloutSetup {
  GaussianState initial_state;
  int horizon = 40;
  CostModel cost;
  HazardRegion region;
};

TrajectorySummary rollout(const GPModel& model, const PolicyParams& policy, const RolloutSetup& setup);

/// L = V + lambda (Q - xi).
double lagrangian(const TrajectorySummary& summary, double lambda, double xi);
double lagrangian(const GPModel& model, const PolicyParams& policy, double lambda, double xi,
                  const RolloutSetup& setup);

struct LagrangianGradient {
  double value = 0.0;  // L
  double cost_to_go = 0.0;
  double risk_to_go = 0.0;
  /// d L / d flatten(policy).
  VectorXd gradient;
  TrajectorySummary trajectory;
};

/// Reverse-mode gradient of the Lagrangian through the full moment-matching
/// rollout.
LagrangianGradient policy_gradient(const GPModel& model, const PolicyParams& policy, double lambda,
                                   double xi, const RolloutSetup& setup);

nlohmann::json trajectory_to_json(const TrajectorySummary& summary);

}  // namespace safepilco
