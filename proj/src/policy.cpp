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

#include "safepilco/policy.hpp"

#include <cmath>
#include <random>

#include "safepilco/errors.hpp"
#include "safepilco/moment_matching.hpp"

namespace safepilco {

using ad::Var;

void PolicyParams::validate() const {
  if (weights.rows() != centers.rows() || lengthscales.size() != centers.cols() ||
      u_max.size() != weights.cols()) {
    throw DimensionMismatch("PolicyParams: inconsistent shapes");
  }
  if (!centers.allFinite() || !weights.allFinite() || !lengthscales.allFinite() || !u_max.allFinite()) {
    throw NonFinite("PolicyParams: non-finite entries");
  }
  if (!(lengthscales.array() > 0.0).all() || !(u_max.array() > 0.0).all()) {
    throw InvalidArgument("PolicyParams: lengthscales and u_max must be positive");
  }
}

PolicyParams random_policy(const GaussianState& initial_state, Eigen::Index action_dim,
                           const VectorXd& u_max, Eigen::Index basis, std::uint64_t seed) {
  if (u_max.size() != action_dim) throw DimensionMismatch("random_policy: u_max size");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const Eigen::Index d = initial_state.dim();
  const MatrixXd root = 2.0 * psd_sqrt(initial_state.cov());
  PolicyParams p;
  p.centers.resize(basis, d);
  VectorXd z(d);
  for (Eigen::Index i = 0; i < basis; ++i) {
    for (Eigen::Index k = 0; k < d; ++k) z(k) = normal(rng);
    p.centers.row(i) = (initial_state.mean() + root * z).transpose();
  }
  p.weights.resize(basis, action_dim);
  for (Eigen::Index i = 0; i < basis; ++i) {
    for (Eigen::Index k = 0; k < action_dim; ++k) p.weights(i, k) = 0.1 * normal(rng);
  }
  p.lengthscales = VectorXd::Ones(d);
  p.u_max = u_max;
  return p;
}

VectorXd policy_eval(const PolicyParams& params, const VectorXd& x) {
  if (x.size() != params.state_dim()) throw DimensionMismatch("policy_eval: state dimension");
  const VectorXd il = params.lengthscales.array().square().inverse();
  VectorXd phi(params.basis());
  for (Eigen::Index i = 0; i < params.basis(); ++i) {
    const VectorXd diff = x - params.centers.row(i).transpose();
    phi(i) = std::exp(-0.5 * diff.cwiseAbs2().dot(il));
  }
  const VectorXd r = params.weights.transpose() * phi;
  return params.u_max.cwiseProduct(r.array().sin().matrix());
}

PolicyAd policy_on_tape(const PolicyParams& params, ad::Tape& tape, bool trainable) {
  params.validate();
  auto make = [&](MatrixXd m) { return trainable ? tape.variable(std::move(m)) : tape.constant(std::move(m)); };
  PolicyAd out;
  out.centers = make(params.centers);
  out.weights = make(params.weights);
  out.log_lengthscales = make(params.lengthscales.array().log().matrix().transpose());
  out.u_max = params.u_max;
  return out;
}

JointAd policy_joint_ad(const PolicyAd& policy, const Var& mean, const Var& cov) {
  ad::Tape& tape = *mean.tape();
  const Eigen::Index f = policy.weights.cols();
  SeMapAd map;
  map.points = policy.centers;
  const Var il = ad::exp(ad::scale(policy.log_lengthscales, -2.0));
  for (Eigen::Index a = 0; a < f; ++a) {
    map.inv_sq_lengthscales.push_back(il);
    map.signal_variance.push_back(1.0);
  }
  map.beta = policy.weights;
  const SeMomentsAd pre = se_moment_match(map, mean, cov);

  // Sine squashing of z ~ N(mu, sigma) with Cov[x, z] = S * input_output.
  const Var mu = pre.mean;
  const Var sigma = pre.cov;
  const Var umax_col = tape.constant(policy.u_max);
  const Var dvec = ad::diagonal(sigma);
  const Var half_decay = ad::exp(ad::scale(dvec, -0.5));
  const Var u_mean = ad::cmul(umax_col, ad::cmul(half_decay, ad::sin(mu)));

  const Var pair_sum = dvec + ad::transpose(dvec);
  const Var mu_t = ad::transpose(mu);
  const Var e1 = ad::cmul(ad::exp(ad::scale(pair_sum - ad::scale(sigma, 2.0), -0.5)), ad::cos(mu - mu_t));
  const Var e2 = ad::cmul(ad::exp(ad::scale(pair_sum + ad::scale(sigma, 2.0), -0.5)), ad::cos(mu + mu_t));
  const Var es = ad::cmul(half_decay, ad::sin(mu));
  const Var sin_cov = ad::scale(e1 - e2, 0.5) - ad::matmul(es, ad::transpose(es));
  const Var umax_outer = tape.constant(policy.u_max * policy.u_max.transpose());
  const Var u_cov = ad::symmetrize(ad::cmul(sin_cov, umax_outer));

  // Stein: Cov[x, g(z)] = Cov[x, z] E[g'(z)].
  const Var slope = ad::cmul(umax_col, ad::cmul(half_decay, ad::cos(mu)));  // F x 1
  const Var cov_xz = ad::matmul(cov, pre.input_output);                    // D x F
  const Var cov_xu = ad::cmul(cov_xz, ad::transpose(slope));

  const Var joint_mean = ad::vstack(mean, u_mean);
  const Var joint_cov = ad::vstack(ad::hstack(cov, cov_xu), ad::hstack(ad::transpose(cov_xu), u_cov));
  return {joint_mean, joint_cov};
}

JointMoments policy_moments(const PolicyParams& params, const GaussianState& state) {
  if (state.dim() != params.state_dim()) throw DimensionMismatch("policy_moments: state dimension");
  ad::Tape tape(false);
  const PolicyAd policy = policy_on_tape(params, tape, false);
  const JointAd joint = policy_joint_ad(policy, tape.constant(state.mean()), tape.constant(state.cov()));
  JointMoments out;
  out.mean = joint.mean.value().col(0);
  out.cov = psd_repair(joint.cov.value());
  out.cross_cov = out.cov.topRightCorner(params.state_dim(), params.action_dim());
  return out;
}

Eigen::Index parameter_count(const PolicyParams& params) {
  return params.centers.size() + params.weights.size() + params.lengthscales.size();
}

VectorXd flatten(const PolicyParams& params) {
  VectorXd flat(parameter_count(params));
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < params.centers.rows(); ++i) {
    for (Eigen::Index j = 0; j < params.centers.cols(); ++j) flat(k++) = params.centers(i, j);
  }
  for (Eigen::Index i = 0; i < params.weights.rows(); ++i) {
    for (Eigen::Index j = 0; j < params.weights.cols(); ++j) flat(k++) = params.weights(i, j);
  }
  for (Eigen::Index j = 0; j < params.lengthscales.size(); ++j) flat(k++) = std::log(params.lengthscales(j));
  return flat;
}

PolicyParams unflatten(const VectorXd& flat, const PolicyParams& shape) {
  if (flat.size() != parameter_count(shape)) throw DimensionMismatch("unflatten: parameter count");
  PolicyParams p = shape;
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < p.centers.rows(); ++i) {
    for (Eigen::Index j = 0; j < p.centers.cols(); ++j) p.centers(i, j) = flat(k++);
  }
  for (Eigen::Index i = 0; i < p.weights.rows(); ++i) {
    for (Eigen::Index j = 0; j < p.weights.cols(); ++j) p.weights(i, j) = flat(k++);
  }
  for (Eigen::Index j = 0; j < p.lengthscales.size(); ++j) p.lengthscales(j) = std::exp(flat(k++));
  return p;
}

VectorXd flat_gradient(const PolicyAd& policy, const ad::Tape& tape) {
  const MatrixXd gc = tape.grad(policy.centers);
  const MatrixXd gw = tape.grad(policy.weights);
  const MatrixXd gl = tape.grad(policy.log_lengthscales);
  VectorXd flat(gc.size() + gw.size() + gl.size());
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < gc.rows(); ++i) {
    for (Eigen::Index j = 0; j < gc.cols(); ++j) flat(k++) = gc(i, j);
  }
  for (Eigen::Index i = 0; i < gw.rows(); ++i) {
    for (Eigen::Index j = 0; j < gw.cols(); ++j) flat(k++) = gw(i, j);
  }
  for (Eigen::Index j = 0; j < gl.size(); ++j) flat(k++) = gl(0, j);
  return flat;
}

namespace {

nlohmann::json matrix_json(const MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    std::vector<double> row(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index c = 0; c < m.cols(); ++c) row[static_cast<std::size_t>(c)] = m(r, c);
    rows.push_back(row);
  }
  return rows;
}

MatrixXd json_matrix(const nlohmann::json& j, Eigen::Index cols) {
  MatrixXd m(static_cast<Eigen::Index>(j.size()), cols);
  for (std::size_t r = 0; r < j.size(); ++r) {
    const auto row = j[r].get<std::vector<double>>();
    if (static_cast<Eigen::Index>(row.size()) != cols) throw FormatError("policy: ragged matrix row");
    for (Eigen::Index c = 0; c < cols; ++c) m(static_cast<Eigen::Index>(r), c) = row[static_cast<std::size_t>(c)];
  }
  return m;
}

VectorXd json_vector(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

nlohmann::json policy_to_json(const PolicyParams& params) {
  return {{"centers", matrix_json(params.centers)},
          {"weights", matrix_json(params.weights)},
          {"lengthscales", std::vector<double>(params.lengthscales.data(), params.lengthscales.data() + params.lengthscales.size())},
          {"u_max", std::vector<double>(params.u_max.data(), params.u_max.data() + params.u_max.size())}};
}

PolicyParams policy_from_json(const nlohmann::json& j) {
  try {
    PolicyParams p;
    p.lengthscales = json_vector(j.at("lengthscales"));
    p.u_max = json_vector(j.at("u_max"));
    p.centers = json_matrix(j.at("centers"), p.lengthscales.size());
    p.weights = json_matrix(j.at("weights"), p.u_max.size());
    p.validate();
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("policy: ") + e.what());
  } catch (const DimensionMismatch& e) {
    throw FormatError(std::string("policy: ") + e.what());
  }
}

}  // namespace safepilco
