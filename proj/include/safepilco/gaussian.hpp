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

#include <Eigen/Dense>

namespace safepilco {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Eigenvalues in (-kPsdTolerance, 0) are clipped to zero; anything lower is
/// reported as a non-PSD covariance.
inline constexpr double kPsdTolerance = 1e-9;

/// A Gaussian distribution over a state (or state-action) vector.
class GaussianState {
 public:
  GaussianState() = default;
  /// Re-symmetrizes cov; throws DimensionMismatch or NonPSD.
  GaussianState(VectorXd mean, MatrixXd cov);

  static GaussianState point(VectorXd mean);

  const VectorXd& mean() const { return mean_; }
  const MatrixXd& cov() const { return cov_; }
  Eigen::Index dim() const { return mean_.size(); }

 private:
  VectorXd mean_;
  MatrixXd cov_;
};

/// Joint moments of an input Gaussian and a mapped output: mean and
/// covariance of the stacked (input, output) vector, plus the input-output
/// covariance block.
struct JointMoments {
  VectorXd mean;
  MatrixXd cov;
  MatrixXd cross_cov;
};

/// Cholesky factor of a symmetric matrix with jitter escalation
/// 1e-8 * tr(A)/n, x10 per retry, up to 1e-4 * tr(A)/n.
struct RegularizedCholesky {
  Eigen::LLT<MatrixXd> llt;
  double jitter = 0.0;
};

RegularizedCholesky cholesky_with_jitter(const MatrixXd& a);

/// Symmetrizes and clips eigenvalues in (-kPsdTolerance, 0) to zero.
/// Throws NonPSD for larger violations.
MatrixXd psd_repair(const MatrixXd& cov);

bool all_finite(const MatrixXd& m);

}  // namespace safepilco
