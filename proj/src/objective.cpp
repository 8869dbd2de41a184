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

#include "safepilco/objective.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "safepilco/errors.hpp"
#include "safepilco/moment_matching.hpp"

namespace safepilco {

using ad::Var;

namespace {

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

// Angle variance below this is treated as a point mass.
constexpr double kPointMassVariance = 1e-24;

}  // namespace

void CostModel::validate(Eigen::Index state_dim) const {
  if (target.size() != state_dim || weight.rows() != state_dim || weight.cols() != state_dim) {
    throw DimensionMismatch("CostModel: target/weight dimension");
  }
  if ((weight - weight.transpose()).cwiseAbs().maxCoeff() > 1e-12) {
    throw InvalidArgument("CostModel: weight must be symmetric");
  }
}

double cost_at(const CostModel& cost, const VectorXd& x) {
  const VectorXd d = x - cost.target;
  return 1.0 - std::exp(-0.5 * d.dot(cost.weight * d));
}

bool hazard_contains(const HazardRegion& region, const VectorXd& x) {
  if (region.encoding == HazardRegion::Encoding::kDirect) return region.contains(x(region.dimension));
  return region.contains(std::atan2(x(region.sin_dim), x(region.cos_dim)));
}

CostModel pendulum_cost(double width) {
  if (!(width > 0.0)) throw InvalidArgument("pendulum_cost: width must be positive");
  CostModel c;
  c.target = VectorXd::Zero(3);
  c.target(0) = 1.0;
  c.weight = MatrixXd::Zero(3, 3);
  c.weight(0, 0) = c.weight(1, 1) = 1.0 / (width * width);
  return c;
}

void HazardRegion::validate(Eigen::Index state_dim) const {
  if (!(lo < hi)) throw InvalidArgument("HazardRegion: lo must be below hi");
  if (encoding == Encoding::kDirect) {
    if (dimension < 0 || dimension >= state_dim) throw DimensionMismatch("HazardRegion: dimension out of range");
  } else if (cos_dim < 0 || cos_dim >= state_dim || sin_dim < 0 || sin_dim >= state_dim) {
    throw DimensionMismatch("HazardRegion: angle encoding out of range");
  }
}

HazardRegion pendulum_hazard() {
  HazardRegion h;
  h.encoding = HazardRegion::Encoding::kAngleFromCosSin;
  h.cos_dim = 0;
  h.sin_dim = 1;
  h.lo = std::numbers::pi / 4.0;
  h.hi = 3.0 * std::numbers::pi / 4.0;
  return h;
}

Var expected_cost_ad(const CostModel& cost, const Var& mean, const Var& cov) {
  ad::Tape& tape = *mean.tape();
  const Eigen::Index d = cost.target.size();
  const Var w = tape.constant(cost.weight);
  const Var a = tape.constant(MatrixXd::Identity(d, d)) + ad::matmul(cov, w);
  const Var diff = mean - tape.constant(cost.target);
  const Var quad = ad::matmul(ad::transpose(diff), ad::matmul(w, ad::matmul(ad::inverse(a), diff)));
  const Var log_e = ad::scale(ad::logdet(a) + quad, -0.5);
  return ad::add_scalar(-ad::exp(log_e), 1.0);
}

double expected_cost(const CostModel& cost, const GaussianState& state) {
  cost.validate(state.dim());
  ad::Tape tape(false);
  return expected_cost_ad(cost, tape.constant(state.mean()), tape.constant(state.cov())).scalar();
}

namespace {

std::pair<Var, Var> hazard_marginal_ad(const HazardRegion& region, const Var& mean, const Var& cov) {
  if (region.encoding == HazardRegion::Encoding::kDirect) {
    return {ad::block(mean, region.dimension, 0, 1, 1),
            ad::block(cov, region.dimension, region.dimension, 1, 1)};
  }
  ad::Tape& tape = *mean.tape();
  const Var c = ad::block(mean, region.cos_dim, 0, 1, 1);
  const Var s = ad::block(mean, region.sin_dim, 0, 1, 1);
  const Var angle = ad::atan2(s, c);
  // d atan2(s, c) = (c ds - s dc) / (c^2 + s^2)
  const Var r2 = ad::square(c) + ad::square(s);
  MatrixXd pick = MatrixXd::Zero(2, mean.rows());
  pick(0, region.cos_dim) = 1.0;
  pick(1, region.sin_dim) = 1.0;
  const Var sel = tape.constant(pick);
  const Var g = ad::cdiv(ad::vstack(-s, c), r2);  // 2 x 1
  const Var sub = ad::matmul(sel, ad::matmul(cov, ad::transpose(sel)));
  const Var var = ad::matmul(ad::transpose(g), ad::matmul(sub, g));
  return {angle, var};
}

}  // namespace

Var risk_ad(const HazardRegion& region, const Var& mean, const Var& cov) {
  ad::Tape& tape = *mean.tape();
  const auto [m, var] = hazard_marginal_ad(region, mean, cov);
  if (var.scalar() <= kPointMassVariance) {
    return tape.constant(MatrixXd::Constant(1, 1, region.contains(m.scalar()) ? 1.0 : 0.0));
  }
  const Var sd = ad::sqrt(var);
  const Var upper = ad::normal_cdf(ad::cdiv(-ad::add_scalar(m, -region.hi), sd));
  const Var lower = ad::normal_cdf(ad::cdiv(-ad::add_scalar(m, -region.lo), sd));
  return upper - lower;
}

std::pair<double, double> hazard_marginal(const HazardRegion& region, const GaussianState& state) {
  region.validate(state.dim());
  ad::Tape tape(false);
  const auto [m, v] = hazard_marginal_ad(region, tape.constant(state.mean()), tape.constant(state.cov()));
  return {m.scalar(), v.scalar()};
}

double risk(const HazardRegion& region, const GaussianState& state) {
  const auto [m, v] = hazard_marginal(region, state);
  if (v <= kPointMassVariance) return region.contains(m) ? 1.0 : 0.0;
  const double sd = std::sqrt(v);
  return normal_cdf((region.hi - m) / sd) - normal_cdf((region.lo - m) / sd);
}

namespace {

struct RolloutTrace {
  TrajectorySummary summary;
  Var total_cost;
  Var total_risk;
};

RolloutTrace trace_rollout(ad::Tape& tape, const GPModel& model, const PolicyAd& policy,
                           const RolloutSetup& setup) {
  const Eigen::Index d = model.state_dim();
  if (setup.horizon < 1) throw InvalidArgument("rollout: horizon must be at least 1");
  if (setup.initial_state.dim() != d || policy.centers.cols() != d ||
      policy.weights.cols() != model.action_dim()) {
    throw DimensionMismatch("rollout: model, policy and initial state dimensions differ");
  }
  setup.cost.validate(d);
  setup.region.validate(d);
  const SeMapAd gp = gp_map_on_tape(model, tape);
  Var mean = tape.constant(setup.initial_state.mean());
  Var cov = tape.constant(setup.initial_state.cov());
  RolloutTrace out;
  out.total_cost = tape.constant(MatrixXd::Zero(1, 1));
  out.total_risk = tape.constant(MatrixXd::Zero(1, 1));
  for (int t = 0; t < setup.horizon; ++t) {
    try {
      const JointAd joint = policy_joint_ad(policy, mean, cov);
      StateAd next = next_state_ad(gp, d, joint.mean, joint.cov);
      const MatrixXd repaired = psd_repair(next.cov.value());
      const MatrixXd correction = repaired - next.cov.value();
      if (correction.cwiseAbs().maxCoeff() > 0.0) next.cov = next.cov + tape.constant(correction);
      if (!next.mean.value().allFinite() || !next.cov.value().allFinite()) {
        throw NonFinite("non-finite predicted moments");
      }
      mean = next.mean;
      cov = next.cov;
      const Var c = expected_cost_ad(setup.cost, mean, cov);
      const Var g = risk_ad(setup.region, mean, cov);
      out.total_cost = out.total_cost + c;
      out.total_risk = out.total_risk + g;
      out.summary.states.emplace_back(mean.value().col(0), cov.value());
      out.summary.step_costs.push_back(c.scalar());
      out.summary.step_risks.push_back(g.scalar());
    } catch (const Error& e) {
      rethrow_with_context(e, "rollout step " + std::to_string(t));
    }
  }
  out.summary.value = out.total_cost.scalar();
  out.summary.risk = out.total_risk.scalar();
  return out;
}

}  // namespace

TrajectorySummary rollout(const GPModel& model, const PolicyParams& policy, const RolloutSetup& setup) {
  ad::Tape tape(false);
  const PolicyAd p = policy_on_tape(policy, tape, false);
  return trace_rollout(tape, model, p, setup).summary;
}

double lagrangian(const TrajectorySummary& summary, double lambda, double xi) {
  if (!(lambda >= 0.0)) throw InvalidArgument("lagrangian: lambda must be nonnegative");
  return summary.value + lambda * (summary.risk - xi);
}

double lagrangian(const GPModel& model, const PolicyParams& policy, double lambda, double xi,
                  const RolloutSetup& setup) {
  return lagrangian(rollout(model, policy, setup), lambda, xi);
}

LagrangianGradient policy_gradient(const GPModel& model, const PolicyParams& policy, double lambda,
                                   double xi, const RolloutSetup& setup) {
  if (!(lambda >= 0.0)) throw InvalidArgument("policy_gradient: lambda must be nonnegative");
  ad::Tape tape(true);
  const PolicyAd p = policy_on_tape(policy, tape, true);
  RolloutTrace trace = trace_rollout(tape, model, p, setup);
  const Var l = trace.total_cost + ad::scale(ad::add_scalar(trace.total_risk, -xi), lambda);
  tape.backward(l);
  LagrangianGradient out;
  out.value = lagrangian(trace.summary, lambda, xi);
  out.cost_to_go = trace.summary.value;
  out.risk_to_go = trace.summary.risk;
  out.gradient = flat_gradient(p, tape);
  out.trajectory = std::move(trace.summary);
  return out;
}

nlohmann::json trajectory_to_json(const TrajectorySummary& summary) {
  nlohmann::json states = nlohmann::json::array();
  for (const auto& s : summary.states) {
    std::vector<double> cov(static_cast<std::size_t>(s.cov().size()));
    for (Eigen::Index r = 0; r < s.cov().rows(); ++r) {
      for (Eigen::Index c = 0; c < s.cov().cols(); ++c) {
        cov[static_cast<std::size_t>(r * s.cov().cols() + c)] = s.cov()(r, c);
      }
    }
    states.push_back({{"mean", std::vector<double>(s.mean().data(), s.mean().data() + s.mean().size())},
                      {"cov", cov}});
  }
  return {{"states", states},
          {"step_costs", summary.step_costs},
          {"step_risks", summary.step_risks},
          {"value", summary.value},
          {"risk", summary.risk}};
}

}  // namespace safepilco
