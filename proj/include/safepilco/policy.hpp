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

#include <json.hpp>

#include "safepilco/autodiff.hpp"
#include "safepilco/gaussian.hpp"

namespace safepilco {

/// RBF network policy u = u_max * sin(sum_i w_i exp(-0.5 ||x - c_i||^2_L)),
/// with L = diag(lengthscales^2) shared by every basis function.
struct PolicyParams {
  MatrixXd centers;       // B x D
  MatrixXd weights;       // B x F
  VectorXd lengthscales;  // D
  VectorXd u_max;         // F

  Eigen::Index basis() const { return centers.rows(); }
  Eigen::Index state_dim() const { return centers.cols(); }
  Eigen::Index action_dim() const { return weights.cols(); }
  void validate() const;
};

inline constexpr int kDefaultBasisFunctions = 50;

/// Centers drawn from the initial-state distribution with its standard
/// deviation doubled, weights ~ N(0, 0.1^2), unit lengthscales.
PolicyParams random_policy(const GaussianState& initial_state, Eigen::Index action_dim,
                           const VectorXd& u_max, Eigen::Index basis, std::uint64_t seed);

VectorXd policy_eval(const PolicyParams& params, const VectorXd& x);

/// Joint moments of (x, u) for x ~ state.
JointMoments policy_moments(const PolicyParams& params, const GaussianState& state);

/// Trainable parameters flattened as [centers (row-major), weights
/// (row-major), log lengthscales]. u_max is fixed.
VectorXd flatten(const PolicyParams& params);
PolicyParams unflatten(const VectorXd& flat, const PolicyParams& shape);
Eigen::Index parameter_count(const PolicyParams& params);

/// Policy parameters recorded on a tape.
struct PolicyAd {
  ad::Var centers;
  ad::Var weights;
  ad::Var log_lengthscales;  // 1 x D
  VectorXd u_max;
};

/// Records the policy on a tape; as variables when trainable is true.
PolicyAd policy_on_tape(const PolicyParams& params, ad::Tape& tape, bool trainable);

/// Gradient with respect to the flattened parameters after Tape::backward.
VectorXd flat_gradient(const PolicyAd& policy, const ad::Tape& tape);

struct JointAd {
  ad::Var mean;  // (D+F) x 1
  ad::Var cov;   // (D+F) x (D+F)
};
JointAd policy_joint_ad(const PolicyAd& policy, const ad::Var& mean, const ad::Var& cov);

nlohmann::json policy_to_json(const PolicyParams& params);
PolicyParams policy_from_json(const nlohmann::json& j);

}  // namespace safepilco
