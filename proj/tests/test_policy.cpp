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

#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "oracles.hpp"
#include "safepilco/autodiff.hpp"
#include "safepilco/errors.hpp"
#include "safepilco/policy.hpp"

using namespace safepilco;
using safepilco::testing::Moments;
using safepilco::testing::random_matrix;
using safepilco::testing::random_spd;

namespace {

PolicyParams random_params(std::mt19937_64& rng, Eigen::Index b, Eigen::Index d, Eigen::Index f, double wscale) {
  PolicyParams p;
  p.centers = random_matrix(rng, b, d, 1.0);
  p.weights = random_matrix(rng, b, f, wscale);
  std::uniform_real_distribution<double> u(0.5, 1.5);
  p.lengthscales = VectorXd(d);
  for (Eigen::Index i = 0; i < d; ++i) p.lengthscales(i) = u(rng);
  p.u_max = VectorXd::Constant(f, 2.0);
  return p;
}

/// Oracle: u = u_max * sin(sum_i w_i exp(-0.5 ||x - c_i||^2 / l^2)).
VectorXd direct_eval(const PolicyParams& p, const VectorXd& x) {
  VectorXd r = VectorXd::Zero(p.action_dim());
  for (Eigen::Index i = 0; i < p.basis(); ++i) {
    const double q = ((x - p.centers.row(i).transpose()).array() / p.lengthscales.array()).square().sum();
    r += p.weights.row(i).transpose() * std::exp(-0.5 * q);
  }
  return p.u_max.cwiseProduct(r.array().sin().matrix());
}

}  // namespace

TEST_CASE("policy_eval") {
  std::mt19937_64 rng(1);

  SUBCASE("zero weights give zero torque") {
    PolicyParams p = random_params(rng, 10, 3, 1, 1.0);
    p.weights.setZero();
    for (int i = 0; i < 20; ++i) CHECK(policy_eval(p, random_matrix(rng, 3, 1, 2.0)).norm() == 0.0);
  }

  SUBCASE("a quarter-turn preactivation saturates") {
    PolicyParams p;
    p.centers = MatrixXd::Constant(1, 1, 0.4);
    p.weights = MatrixXd::Constant(1, 1, std::numbers::pi / 2.0);
    p.lengthscales = VectorXd::Ones(1);
    p.u_max = VectorXd::Constant(1, 2.0);
    CHECK(policy_eval(p, VectorXd::Constant(1, 0.4))(0) == doctest::Approx(2.0).epsilon(1e-15));
  }

  SUBCASE("matches the direct formula and stays within the torque limit") {
    for (int i = 0; i < 100; ++i) {
      const PolicyParams p = random_params(rng, 7, 3, 2, 3.0);
      const VectorXd x = random_matrix(rng, 3, 1, 1.5);
      const VectorXd u = policy_eval(p, x);
      CHECK((u - direct_eval(p, x)).cwiseAbs().maxCoeff() < 1e-12);
      CHECK((u.cwiseAbs().array() <= p.u_max.array()).all());
    }
  }

  SUBCASE("rejects a wrong state dimension") {
    const PolicyParams p = random_params(rng, 3, 3, 1, 1.0);
    CHECK_THROWS_AS(policy_eval(p, VectorXd::Zero(2)), DimensionMismatch);
  }
}

TEST_CASE("policy_moments") {
  std::mt19937_64 rng(2);

  SUBCASE("zero state variance collapses to the pointwise policy") {
    const PolicyParams p = random_params(rng, 8, 3, 1, 2.0);
    const VectorXd m = random_matrix(rng, 3, 1, 1.0);
    const JointMoments jm = policy_moments(p, GaussianState(m, MatrixXd::Zero(3, 3)));
    CHECK(jm.mean.size() == 4);
    CHECK((jm.mean.head(3) - m).norm() == 0.0);
    CHECK(std::abs(jm.mean(3) - policy_eval(p, m)(0)) < 1e-12);
    CHECK(jm.cov.cwiseAbs().maxCoeff() < 1e-12);
  }

  SUBCASE("tiny state variance converges to the pointwise policy") {
    for (int i = 0; i < 10; ++i) {
      const PolicyParams p = random_params(rng, 8, 3, 2, 2.0);
      const VectorXd m = random_matrix(rng, 3, 1, 1.0);
      const JointMoments jm = policy_moments(p, GaussianState(m, 1e-12 * MatrixXd::Identity(3, 3)));
      CHECK((jm.mean.tail(2) - policy_eval(p, m)).cwiseAbs().maxCoeff() < 1e-5);
    }
  }

  SUBCASE("agrees with a Monte-Carlo oracle at initialization scale") {
    for (int trial = 0; trial < 5; ++trial) {
      const PolicyParams p = random_params(rng, 10, 3, 1, 0.1);
      const GaussianState s(random_matrix(rng, 3, 1, 0.5), random_spd(rng, 3, 0.3));
      const JointMoments jm = policy_moments(p, s);
      std::mt19937_64 srng(100 + static_cast<std::uint64_t>(trial));
      std::normal_distribution<double> normal(0.0, 1.0);
      const MatrixXd root = s.cov().llt().matrixL();
      std::vector<double> us;
      std::vector<VectorXd> xs;
      const int n = 100000;
      VectorXd z(3);
      for (int k = 0; k < n; ++k) {
        for (int i = 0; i < 3; ++i) z(i) = normal(srng);
        xs.push_back(s.mean() + root * z);
        us.push_back(direct_eval(p, xs.back())(0));
      }
      Moments mu;
      for (double u : us) mu.add(u);
      Moments var;
      std::vector<Moments> cross(3);
      for (int k = 0; k < n; ++k) {
        const double c = us[static_cast<std::size_t>(k)] - mu.mean;
        var.add(c * c);
        for (int i = 0; i < 3; ++i) {
          cross[static_cast<std::size_t>(i)].add((xs[static_cast<std::size_t>(k)](i) - s.mean()(i)) * c);
        }
      }
      CHECK(std::abs(jm.mean(3) - mu.mean) < 4.0 * mu.mean_se());
      CHECK(std::abs(jm.cov(3, 3) - var.mean) < 4.0 * var.mean_se());
      for (int i = 0; i < 3; ++i) {
        CHECK(std::abs(jm.cov(i, 3) - cross[static_cast<std::size_t>(i)].mean) < 4.0 * cross[static_cast<std::size_t>(i)].mean_se());
        CHECK(jm.cov(i, 3) == jm.cov(3, i));
      }
      CHECK((jm.cross_cov - jm.cov.block(0, 3, 3, 1)).norm() == 0.0);
    }
  }

  SUBCASE("squashing is exact for a Gaussian preactivation") {
    // Large weights: the preactivation is far from Gaussian, so compare
    // against sampling (x, r) from the Gaussian with the preactivation's
    // exact first two moments, estimated here by a large sample.
    for (int trial = 0; trial < 3; ++trial) {
      PolicyParams p = random_params(rng, 10, 2, 1, 1.5);
      p.u_max(0) = 1.0;
      const GaussianState s(random_matrix(rng, 2, 1, 0.5), random_spd(rng, 2, 0.3));
      std::mt19937_64 srng(200 + static_cast<std::uint64_t>(trial));
      std::normal_distribution<double> normal(0.0, 1.0);
      const MatrixXd root = s.cov().llt().matrixL();
      // Joint moments of (x, r(x)).
      const int n = 400000;
      VectorXd mean = VectorXd::Zero(3);
      MatrixXd second = MatrixXd::Zero(3, 3);
      VectorXd v(3);
      VectorXd z(2);
      for (int k = 0; k < n; ++k) {
        for (int i = 0; i < 2; ++i) z(i) = normal(srng);
        v.head(2) = s.mean() + root * z;
        v(2) = 0.0;
        for (Eigen::Index b = 0; b < p.basis(); ++b) {
          const double q = ((v.head(2) - p.centers.row(b).transpose()).array() / p.lengthscales.array()).square().sum();
          v(2) += p.weights(b, 0) * std::exp(-0.5 * q);
        }
        mean += v;
        second += v * v.transpose();
      }
      mean /= n;
      const MatrixXd cov = second / n - mean * mean.transpose();
      // Closed-form sine moments of a Gaussian preactivation.
      const double mr = mean(2);
      const double vr = cov(2, 2);
      const double e_sin = std::exp(-0.5 * vr) * std::sin(mr);
      const double e_sin2 = 0.5 * (1.0 - std::exp(-2.0 * vr) * std::cos(2.0 * mr));
      const JointMoments jm = policy_moments(p, s);
      CHECK(jm.mean(2) == doctest::Approx(e_sin).epsilon(0.02));
      CHECK(jm.cov(2, 2) == doctest::Approx(e_sin2 - e_sin * e_sin).epsilon(0.02));
      for (int i = 0; i < 2; ++i) {
        const double stein = cov(i, 2) * std::exp(-0.5 * vr) * std::cos(mr);
        CHECK(jm.cov(i, 2) == doctest::Approx(stein).epsilon(0.02).scale(0.01));
      }
    }
  }

  SUBCASE("an odd policy on a centred state has zero mean action") {
    PolicyParams p = random_params(rng, 6, 2, 1, 1.0);
    for (int i = 0; i < 3; ++i) {
      p.centers.row(3 + i) = -p.centers.row(i);
      p.weights.row(3 + i) = -p.weights.row(i);
    }
    const JointMoments jm = policy_moments(p, GaussianState(VectorXd::Zero(2), random_spd(rng, 2, 0.5)));
    CHECK(std::abs(jm.mean(2)) < 1e-8);
  }

  SUBCASE("mean action stays within the torque limit") {
    for (int i = 0; i < 50; ++i) {
      const PolicyParams p = random_params(rng, 5, 2, 1, 5.0);
      const JointMoments jm = policy_moments(p, GaussianState(random_matrix(rng, 2, 1, 1.0), random_spd(rng, 2, 1.0)));
      CHECK(std::abs(jm.mean(2)) <= 2.0);
      CHECK(jm.cov(2, 2) >= 0.0);
      CHECK(jm.cov(2, 2) <= 4.0);
    }
  }
}

TEST_CASE("policy output gradients match central differences") {
  std::mt19937_64 rng(3);
  const PolicyParams p = random_params(rng, 4, 2, 1, 1.0);
  const GaussianState s(random_matrix(rng, 2, 1, 0.5), random_spd(rng, 2, 0.2));
  const MatrixXd a = random_matrix(rng, 3, 1, 1.0);
  const MatrixXd b = random_matrix(rng, 3, 3, 1.0);
  // Scalar probe of every output of policy_moments.
  auto probe = [&](const PolicyParams& q) {
    const JointMoments jm = policy_moments(q, s);
    return a.col(0).dot(jm.mean) + (b.array() * jm.cov.array()).sum();
  };

  ad::Tape tape(true);
  const PolicyAd pad = policy_on_tape(p, tape, true);
  const JointAd j = policy_joint_ad(pad, tape.constant(s.mean()), tape.constant(s.cov()));
  const ad::Var out = ad::sum(ad::cmul(j.mean, tape.constant(a))) + ad::sum(ad::cmul(j.cov, tape.constant(b)));
  CHECK(out.scalar() == doctest::Approx(probe(p)).epsilon(1e-12));
  tape.backward(out);
  const VectorXd g = flat_gradient(pad, tape);

  const VectorXd theta = flatten(p);
  const VectorXd fd = safepilco::testing::central_difference(
      [&](const VectorXd& t) { return probe(unflatten(t, p)); }, theta, 1e-5);
  REQUIRE(g.size() == parameter_count(p));
  for (Eigen::Index i = 0; i < g.size(); ++i) {
    CHECK(g(i) == doctest::Approx(fd(i)).epsilon(1e-4).scale(1e-6));
  }
}

TEST_CASE("random policy initialization") {
  const GaussianState init(VectorXd::Constant(2, 1.0), MatrixXd::Identity(2, 2) * 0.25);
  const PolicyParams a = random_policy(init, 1, VectorXd::Constant(1, 2.0), 4000, 5);
  const PolicyParams b = random_policy(init, 1, VectorXd::Constant(1, 2.0), 4000, 5);
  CHECK((a.centers - b.centers).norm() == 0.0);
  CHECK((a.weights - b.weights).norm() == 0.0);
  CHECK(a.basis() == 4000);
  CHECK(a.lengthscales.isOnes());
  Moments c, w;
  for (Eigen::Index i = 0; i < a.basis(); ++i) {
    c.add(a.centers(i, 0));
    w.add(a.weights(i, 0));
  }
  CHECK(c.mean == doctest::Approx(1.0).epsilon(0.05));
  CHECK(std::sqrt(c.variance()) == doctest::Approx(1.0).epsilon(0.05));
  CHECK(std::sqrt(w.variance()) == doctest::Approx(0.1).epsilon(0.05));
  CHECK(random_policy(init, 1, VectorXd::Constant(1, 2.0), kDefaultBasisFunctions, 1).basis() == 50);
}

TEST_CASE("flatten and serialization round trips") {
  std::mt19937_64 rng(4);
  const PolicyParams p = random_params(rng, 5, 3, 2, 1.0);
  const VectorXd flat = flatten(p);
  CHECK(flat.size() == 5 * 3 + 5 * 2 + 3);
  CHECK(flat.size() == parameter_count(p));
  const PolicyParams q = unflatten(flat, p);
  CHECK((q.centers - p.centers).norm() == 0.0);
  CHECK((q.weights - p.weights).norm() == 0.0);
  CHECK((q.lengthscales - p.lengthscales).cwiseAbs().maxCoeff() < 1e-15);
  const PolicyParams r = policy_from_json(nlohmann::json::parse(policy_to_json(p).dump()));
  CHECK((r.centers - p.centers).norm() == 0.0);
  CHECK((r.weights - p.weights).norm() == 0.0);
  CHECK((r.lengthscales - p.lengthscales).norm() == 0.0);
  CHECK((r.u_max - p.u_max).norm() == 0.0);
  CHECK_THROWS_AS(unflatten(VectorXd::Zero(3), p), DimensionMismatch);
}

TEST_CASE("policy validation") {
  std::mt19937_64 rng(5);
  PolicyParams p = random_params(rng, 3, 2, 1, 1.0);
  p.lengthscales(0) = 0.0;
  CHECK_THROWS_AS(p.validate(), InvalidArgument);
  p.lengthscales(0) = 1.0;
  p.u_max(0) = -1.0;
  CHECK_THROWS_AS(p.validate(), InvalidArgument);
  p.u_max(0) = 1.0;
  p.weights(0, 0) = std::nan("");
  CHECK_THROWS(p.validate());
}
