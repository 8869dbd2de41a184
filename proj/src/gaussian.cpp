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

#include "safepilco/gaussian.hpp"

#include <sstream>

#include "safepilco/errors.hpp"

namespace safepilco {

GaussianState::GaussianState(VectorXd mean, MatrixXd cov) : mean_(std::move(mean)) {
  if (cov.rows() != mean_.size() || cov.cols() != mean_.size()) {
    throw DimensionMismatch("GaussianState: covariance shape does not match mean");
  }
  if (!mean_.allFinite() || !cov.allFinite()) throw NonFinite("GaussianState: non-finite moments");
  cov_ = psd_repair(cov);
}

GaussianState GaussianState::point(VectorXd mean) {
  const auto n = mean.size();
  return GaussianState(std::move(mean), MatrixXd::Zero(n, n));
}

RegularizedCholesky cholesky_with_jitter(const MatrixXd& a) {
  RegularizedCholesky out;
  out.llt.compute(a);
  if (out.llt.info() == Eigen::Success) return out;
  const double n = static_cast<double>(a.rows());
  const double base = std::max(a.trace() / n, 1e-300);
  for (double factor = 1e-8; factor <= 1e-4 * (1.0 + 1e-9); factor *= 10.0) {
    out.jitter = factor * base;
    MatrixXd reg = a;
    reg.diagonal().array() += out.jitter;
    out.llt.compute(reg);
    if (out.llt.info() == Eigen::Success) return out;
  }
  throw CholeskyFailure("Cholesky failed after jitter escalation to 1e-4 * tr(K)/N");
}

MatrixXd psd_repair(const MatrixXd& cov) {
  MatrixXd sym = 0.5 * (cov + cov.transpose());
  if (sym.size() == 0) return sym;
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(sym);
  const double min_eig = eig.eigenvalues().minCoeff();
  if (min_eig >= 0.0) return sym;
  if (min_eig < -kPsdTolerance) {
    std::ostringstream msg;
    msg << "covariance is not PSD (min eigenvalue " << min_eig << ")";
    throw NonPSD(msg.str());
  }
  VectorXd clipped = eig.eigenvalues().cwiseMax(0.0);
  MatrixXd repaired = eig.eigenvectors() * clipped.asDiagonal() * eig.eigenvectors().transpose();
  return 0.5 * (repaired + repaired.transpose());
}

bool all_finite(const MatrixXd& m) { return m.allFinite(); }

}  // namespace safepilco
