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

#include <random>

#include "oracles.hpp"
#include "safepilco/autodiff.hpp"

namespace {

using safepilco::ad::Tape;
using safepilco::ad::Var;
using Eigen::MatrixXd;
using Eigen::VectorXd;
namespace ad = safepilco::ad;

using Op = std::function<Var(Tape&, const std::vector<Var>&)>;

// Contracts op's output with a fixed random matrix and compares the
// reverse-mode gradient of every input against central differences.
void check_gradient(const Op& op, const std::vector<MatrixXd>& inputs, double tol = 1e-6) {
  std::mt19937_64 rng(99);
  MatrixXd weights;
  auto eval = [&](const std::vector<MatrixXd>& xs) {
    Tape tape(false);
    std::vector<Var> vars;
    for (const auto& x : xs) vars.push_back(tape.constant(x));
    const MatrixXd out = op(tape, vars).value();
    if (weights.size() == 0) weights = safepilco::testing::random_matrix(rng, out.rows(), out.cols());
    return out.cwiseProduct(weights).sum();
  };
  eval(inputs);

  Tape tape(true);
  std::vector<Var> vars;
  for (const auto& x : inputs) vars.push_back(tape.variable(x));
  const Var out = op(tape, vars);
  const Var loss = ad::sum(ad::cmul(out, tape.constant(weights)));
  tape.backward(loss);

  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const MatrixXd analytic = tape.grad(vars[k]);
    for (Eigen::Index i = 0; i < inputs[k].size(); ++i) {
      auto plus = inputs;
      auto minus = inputs;
      const double h = 1e-6;
      plus[k].data()[i] += h;
      minus[k].data()[i] -= h;
      const double fd = (eval(plus) - eval(minus)) / (2.0 * h);
      CHECK(analytic.data()[i] == doctest::Approx(fd).epsilon(tol).scale(1.0));
    }
  }
}

MatrixXd rnd(Eigen::Index r, Eigen::Index c, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  return safepilco::testing::random_matrix(rng, r, c, scale);
}

}  // namespace

TEST_CASE("broadcasting elementwise ops") {
  check_gradient([](Tape&, const std::vector<Var>& v) { return v[0] + v[1]; }, {rnd(3, 4, 1), rnd(1, 4, 2)});
  check_gradient([](Tape&, const std::vector<Var>& v) { return v[0] - v[1]; }, {rnd(3, 4, 1), rnd(3, 1, 2)});
  check_gradient([](Tape&, const std::vector<Var>& v) { return ad::cmul(v[0], v[1]); }, {rnd(3, 4, 3), rnd(1, 1, 4)});
  MatrixXd denom = rnd(3, 4, 5).array().abs() + 0.5;
  check_gradient([](Tape&, const std::vector<Var>& v) { return ad::cdiv(v[0], v[1]); }, {rnd(3, 4, 6), denom});
}

TEST_CASE("unary ops") {
  const MatrixXd x = rnd(3, 2, 7);
  const MatrixXd pos = x.array().abs() + 0.3;
  check_gradient([](Tape&, const std::vector<Var>& v) { return ad::exp(v[0]); }, {x});
  check_gradient([](Tape&, const std::vector<Var>& v) { return ad::log(v[0]); }, {pos});
  check_gradient([](Tape&, const std::vector<Var>& v) { return ad::sin(v[0]); }, {x});
  check_gradient([](Tape&, const std::vector<Var>& v) { return ad::cos(v[0]); }, {x});
  check_gradient([](Tape&, const std::vector<Var>& v) { return ad::sqrt(v[0]); }, {pos});
  check_gradient([](Tape&, const std::vector<Var>& v) { return ad::square(v[0]); }, {x});
  check_gradient([](Tape&, const std::vector<Var>& v) { return ad::normal_cdf(v[0]); }, {x});
  check_gradient([](Tape&, const std::vector<Var>& v) { return ad::atan2(v[0], v[1]); }, {x, rnd(3, 2, 8)});
  check_gradient([](Tape&, const std::vector<Var>& v) { return ad::scale(-v[0], 3.0); }, {x});
}

TEST_CASE("reductions and structure") {
  const MatrixXd x = rnd(4, 3, 9);
  check_gradient([](Tape&, const std::vector<Var>& v) { return ad::sum(v[0]); }, {x});
  check_gradient([](Tape&, const std::vector<Var>& v) { return ad::rowsum(v[0]); }, {x});
  check_gradient([](Tape&, const std::vector<Var>& v) { return ad::colsum(v[0]); }, {x});
  check_gradient([](Tape&, const std::vector<Var>& v) { return ad::transpose(v[0]); }, {x});
  check_gradient([](Tape&, const std::vector<Var>& v) { return ad::block(v[0], 1, 1, 2, 2); }, {x});
  check_gradient([](Tape&, const std::vector<Var>& v) { return ad::vstack(v[0], v[1]); }, {x, rnd(2, 3, 10)});
  check_gradient([](Tape&, const std::vector<Var>& v) { return ad::hstack(v[0], v[1]); }, {x, rnd(4, 1, 11)});
  check_gradient([](Tape&, const std::vector<Var>& v) { return ad::diag(v[0]); }, {rnd(3, 1, 12)});
  check_gradient([](Tape&, const std::vector<Var>& v) { return ad::diagonal(v[0]); }, {rnd(3, 3, 13)});
  check_gradient([](Tape&, const std::vector<Var>& v) { return ad::symmetrize(v[0]); }, {rnd(3, 3, 14)});
}

TEST_CASE("linear algebra ops") {
  MatrixXd a = rnd(3, 3, 15);
  a.diagonal().array() += 4.0;
  check_gradient([](Tape&, const std::vector<Var>& v) { return ad::matmul(v[0], v[1]); }, {rnd(2, 3, 16), rnd(3, 4, 17)});
  check_gradient([](Tape&, const std::vector<Var>& v) { return ad::inverse(v[0]); }, {a});
  check_gradient([](Tape&, const std::vector<Var>& v) { return ad::logdet(v[0]); }, {a});
}

TEST_CASE("se_pair matches its defining expression") {
  const MatrixXd a = rnd(4, 2, 18, 0.5);
  const MatrixXd b = rnd(3, 2, 19, 0.5);
  MatrixXd t = rnd(2, 2, 20, 0.3);
  t = 0.5 * (t + t.transpose()).eval();
  const MatrixXd la = rnd(4, 1, 21);
  const MatrixXd lb = rnd(3, 1, 22);
  const MatrixXd c = rnd(1, 1, 23);
  Tape tape(false);
  const Var q = ad::se_pair(tape.constant(a), tape.constant(b), tape.constant(t), tape.constant(la),
                            tape.constant(lb), tape.constant(c));
  for (Eigen::Index i = 0; i < 4; ++i) {
    for (Eigen::Index j = 0; j < 3; ++j) {
      const VectorXd z = (a.row(i) + b.row(j)).transpose();
      const double expected = std::exp(la(i) + lb(j) + c(0, 0) + 0.5 * z.dot(t * z));
      CHECK(q.value()(i, j) == doctest::Approx(expected).epsilon(1e-13));
    }
  }
  // T only enters through a symmetric quadratic form; symmetrize the probe.
  check_gradient(
      [](Tape&, const std::vector<Var>& v) {
        return ad::se_pair(v[0], v[1], ad::symmetrize(v[2]), v[3], v[4], v[5]);
      },
      {a, b, t, la, lb, c});
}

TEST_CASE("constants do not record closures") {
  Tape tape(true);
  const Var a = tape.constant(MatrixXd::Ones(2, 2));
  const Var b = ad::exp(a);
  CHECK_FALSE(b.needs_grad());
  const Var x = tape.variable(MatrixXd::Ones(2, 2));
  const Var y = ad::sum(ad::cmul(b, x));
  CHECK(y.needs_grad());
  tape.backward(y);
  CHECK(tape.grad(x).isApprox(b.value()));
  CHECK(tape.grad(a).isZero());
}
