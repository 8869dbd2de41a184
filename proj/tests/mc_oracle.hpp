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

#include <cmath>
#include <random>
#include <vector>

#include "oracles.hpp"
#include "safepilco/gp.hpp"

namespace safepilco::testing {

/// Per-output statistics of the GP output under a Gaussian input: the mean
/// and the total variance (law of total variance), each with a standard
/// error.
struct OutputStats {
  VectorXd mean, mean_se, var, var_se;
};

inline OutputStats sample_output(const GPModel& model, const GaussianState& input, int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(input.cov());
  const MatrixXd root =
      eig.eigenvectors() * eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
  const Eigen::Index d = model.state_dim();
  std::vector<std::vector<double>> mu(static_cast<std::size_t>(d)), var(static_cast<std::size_t>(d));
  VectorXd z(input.dim());
  for (int s = 0; s < n; ++s) {
    for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = normal(rng);
    const VectorXd x = input.mean() + root * z;
    for (Eigen::Index a = 0; a < d; ++a) {
      const auto [m, v] = model.predict_dimension(a, x);
      mu[static_cast<std::size_t>(a)].push_back(m);
      var[static_cast<std::size_t>(a)].push_back(v);
    }
  }
  OutputStats out{VectorXd(d), VectorXd(d), VectorXd(d), VectorXd(d)};
  for (Eigen::Index a = 0; a < d; ++a) {
    Moments m;
    for (double v : mu[static_cast<std::size_t>(a)]) m.add(v);
    Moments g;
    for (std::size_t s = 0; s < mu[static_cast<std::size_t>(a)].size(); ++s) {
      const double c = mu[static_cast<std::size_t>(a)][s] - m.mean;
      g.add(c * c + var[static_cast<std::size_t>(a)][s]);
    }
    out.mean(a) = m.mean;
    out.mean_se(a) = m.mean_se();
    out.var(a) = g.mean;
    out.var_se(a) = g.mean_se();
  }
  return out;
}

/// A GP with D state dimensions and F action dimensions on smooth random
/// data.
inline GPModel random_model(std::mt19937_64& rng, Eigen::Index d, Eigen::Index f, int n, double bound = 0.01) {
  const Eigen::Index e = d + f;
  const MatrixXd x = random_matrix(rng, n, e, 1.0);
  const MatrixXd w = random_matrix(rng, e, d, 1.0);
  MatrixXd y = (x * w).array().sin().matrix();
  y += random_matrix(rng, n, d, 0.05);
  std::uniform_real_distribution<double> u(0.5, 1.5);
  std::vector<KernelHyperparams> hyper;
  for (Eigen::Index a = 0; a < d; ++a) {
    KernelHyperparams h;
    h.lengthscales = VectorXd(e);
    for (Eigen::Index i = 0; i < e; ++i) h.lengthscales(i) = u(rng);
    h.signal_variance = u(rng);
    h.raw_noise = softplus_inverse(0.05);
    h.noise_bound = bound;
    hyper.push_back(h);
  }
  return GPModel(x, y, hyper, d);
}

}  // namespace safepilco::testing
