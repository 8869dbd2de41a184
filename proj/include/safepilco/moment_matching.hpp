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
#include <vector>

#include "safepilco/autodiff.hpp"
#include "safepilco/gaussian.hpp"
#include "safepilco/gp.hpp"

namespace safepilco {

/// A map x -> y_a(x) = sum_i beta(i, a) * s2_a * exp(-0.5 (x - p_i)^T diag(il_a) (x - p_i))
/// over a set of points p_i. Covers both the GP posterior mean (beta =
/// K^-1 y, with an epistemic-variance term) and the RBF policy
/// preactivation (no epistemic term).
struct SeMapAd {
  ad::Var points;                          // N x E
  std::vector<ad::Var> inv_sq_lengthscales;  // per output: 1 x E row of 1/l^2
  std::vector<double> signal_variance;     // per output
  ad::Var beta;                            // N x A
  /// (K + sigma^2 I)^-1 per output; empty for a deterministic map.
  std::vector<MatrixXd> inv_k;
  /// Added to the output variance per output (likelihood noise).
  std::vector<double> noise_variance;
  /// Optional constant N x N weights W_ab = beta_a beta_b^T - [a == b] inv_k_a,
  /// indexed a * A + b, for b >= a. Valid only when beta is constant.
  std::vector<ad::Var> pair_weights;
};

/// Exact moments of y = map(x) for x ~ N(mean, cov).
struct SeMomentsAd {
  ad::Var mean;  // A x 1
  ad::Var cov;   // A x A
  /// Cov[x, y] = cov_in * input_output (E x A).
  ad::Var input_output;
};

SeMomentsAd se_moment_match(const SeMapAd& map, const ad::Var& mean, const ad::Var& cov);

/// GP constants recorded once on a tape and reused across rollout steps.
SeMapAd gp_map_on_tape(const GPModel& model, ad::Tape& tape);

/// Next-state moments from joint (state, action) moments. mean is (D+F) x 1,
/// cov is (D+F) x (D+F).
struct StateAd {
  ad::Var mean;
  ad::Var cov;
};
StateAd next_state_ad(const SeMapAd& gp, Eigen::Index state_dim, const ad::Var& joint_mean,
                      const ad::Var& joint_cov);

struct Propagation {
  /// Distribution of the GP output (state difference).
  GaussianState output;
  /// Cov[input, output], (D+F) x D.
  MatrixXd cross_cov;
};

/// Moment matching of the GP posterior against a Gaussian input over
/// (state, action).
Propagation propagate_gp(const GPModel& model, const GaussianState& input);

/// Successor-state distribution: state mean + difference mean, state cov +
/// difference cov + Cov[x, diff] + Cov[x, diff]^T.
GaussianState next_state_distribution(const GPModel& model, const JointMoments& state_action);

/// Monte-Carlo estimate of the GP output moments (law of total variance over
/// exact pointwise predictions). Deterministic given seed.
GaussianState mc_propagate_oracle(const GPModel& model, const GaussianState& input, int n_samples,
                                  std::uint64_t seed);

/// Symmetric square root of a PSD matrix (for sampling).
MatrixXd psd_sqrt(const MatrixXd& cov);

}  // namespace safepilco
