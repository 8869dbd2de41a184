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

// Independent reference computations used by the test suites. Nothing here
// calls into the moment-matching or autodiff code paths it is used to check.

#include <cmath>
#include <functional>
#include <numbers>
#include <random>

#include <Eigen/Dense>

namespace safepilco::testing {

using Eigen::MatrixXd;
using Eigen::VectorXd;

inline double se(const VectorXd& a, const VectorXd& b, const VectorXd& ls, double s2) {
  return s2 * std::exp(-0.5 * ((a - b).array() / ls.array()).square().sum());
}

/// Dense GP posterior via an explicit inverse.
struct DenseGp {
  MatrixXd x;
  VectorXd y;
  VectorXd ls;
  double s2 = 1.0;
  double noise_var = 0.01;

  MatrixXd gram() const {
    MatrixXd k(x.rows(), x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      for (Eigen::Index j = 0; j < x.rows(); ++j) k(i, j) = se(x.row(i), x.row(j), ls, s2);
    }
    k.diagonal().array() += noise_var;
    return k;
  }

  double nll() const {
    const MatrixXd k = gram();
    const MatrixXd inv = k.inverse();
    const double n = static_cast<double>(x.rows());
    return 0.5 * y.dot(inv * y) + 0.5 * std::log(k.determinant()) + 0.5 * n * std::log(2.0 * std::numbers::pi);
  }

  /// (mean, latent variance without noise)
  std::pair<double, double> predict(const VectorXd& q) const {
    const MatrixXd inv = gram().inverse();
    VectorXd ks(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) ks(i) = se(x.row(i), q, ls, s2);
    return {ks.dot(inv * y), s2 - ks.dot(inv * ks)};
  }
};

/// Central differences of a scalar function.
inline VectorXd central_difference(const std::function<double(const VectorXd&)>& f, const VectorXd& x,
                                   double h) {
  VectorXd g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    VectorXd xp = x;
    VectorXd xm = x;
    xp(i) += h;
    xm(i) -= h;
    g(i) = (f(xp) - f(xm)) / (2.0 * h);
  }
  return g;
}

inline MatrixXd random_matrix(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

inline MatrixXd random_spd(std::mt19937_64& rng, Eigen::Index n, double scale) {
  const MatrixXd a = random_matrix(rng, n, n, 1.0);
  MatrixXd s = a * a.transpose() / static_cast<double>(n);
  s.diagonal().array() += 0.1;
  return scale * s;
}

/// Streaming mean/variance accumulator with standard errors.
struct Moments {
  double n = 0.0;
  double mean = 0.0;
  double m2 = 0.0;

  void add(double v) {
    n += 1.0;
    const double d = v - mean;
    mean += d / n;
    m2 += d * (v - mean);
  }
  double variance() const { return m2 / (n - 1.0); }
  double mean_se() const { return std::sqrt(variance() / n); }
};

}  // namespace safepilco::testing
