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

#include "safepilco/moment_matching.hpp"

#include <cmath>
#include <random>

#include "safepilco/errors.hpp"

namespace safepilco {

using ad::Var;

namespace {

Var assemble_symmetric(const std::vector<std::vector<Var>>& entries) {
  const std::size_t n = entries.size();
  Var out;
  for (std::size_t a = 0; a < n; ++a) {
    Var row = entries[a][0];
    for (std::size_t b = 1; b < n; ++b) row = ad::hstack(row, entries[a][b]);
    out = a == 0 ? row : ad::vstack(out, row);
  }
  return out;
}

}  // namespace

SeMomentsAd se_moment_match(const SeMapAd& map, const Var& mean, const Var& cov) {
  ad::Tape& tape = *mean.tape();
  const Eigen::Index e = mean.rows();
  const Eigen::Index n = map.points.rows();
  const std::size_t outputs = map.inv_sq_lengthscales.size();
  if (map.points.cols() != e || cov.rows() != e || cov.cols() != e || map.beta.rows() != n ||
      map.beta.cols() != static_cast<Eigen::Index>(outputs) || map.signal_variance.size() != outputs) {
    throw DimensionMismatch("se_moment_match: inconsistent shapes");
  }
  const Var identity = tape.constant(MatrixXd::Identity(e, e));
  const Var nu = map.points - ad::transpose(mean);  // N x E

  std::vector<Var> means(outputs);
  std::vector<Var> betas(outputs);
  std::vector<Var> log_k(outputs);
  std::vector<Var> scaled(outputs);
  Var input_output;
  for (std::size_t a = 0; a < outputs; ++a) {
    const Var& il = map.inv_sq_lengthscales[a];
    const Var isl = ad::sqrt(il);  // 1 / l
    betas[a] = ad::block(map.beta, 0, static_cast<Eigen::Index>(a), n, 1);
    // B = diag(1/l) S diag(1/l) + I; (S + L)^-1 = diag(1/l) B^-1 diag(1/l).
    const Var b = ad::cmul(cov, ad::matmul(ad::transpose(isl), isl)) + identity;
    const Var nu_s = ad::cmul(nu, isl);
    const Var t = ad::matmul(nu_s, ad::inverse(b));
    const Var logc = ad::scale(ad::logdet(b), -0.5);
    const Var lq = ad::scale(ad::rowsum(ad::cmul(nu_s, t)), -0.5) + logc;
    const Var q = ad::scale(ad::exp(lq), map.signal_variance[a]);
    means[a] = ad::matmul(ad::transpose(betas[a]), q);
    const Var bq = ad::cmul(betas[a], q);
    const Var v = ad::matmul(ad::transpose(ad::cmul(t, isl)), bq);  // E x 1
    input_output = a == 0 ? v : ad::hstack(input_output, v);
    log_k[a] = ad::add_scalar(ad::scale(ad::rowsum(ad::cmul(ad::square(nu), il)), -0.5),
                              std::log(map.signal_variance[a]));
    scaled[a] = ad::cmul(nu, il);
  }

  std::vector<std::vector<Var>> second(outputs, std::vector<Var>(outputs));
  for (std::size_t a = 0; a < outputs; ++a) {
    for (std::size_t b = a; b < outputs; ++b) {
      const Var p = map.inv_sq_lengthscales[a] + map.inv_sq_lengthscales[b];  // 1 x E
      const Var r = ad::cmul(cov, p) + identity;                              // S diag(p) + I
      const Var t = ad::symmetrize(ad::matmul(ad::inverse(r), cov));
      const Var c = ad::scale(ad::logdet(r), -0.5);
      const Var q = ad::se_pair(scaled[a], scaled[b], t, log_k[a], log_k[b], c);
      const bool fused = !map.pair_weights.empty();
      Var m2 = fused ? ad::sum(ad::cmul(map.pair_weights[a * outputs + b], q))
                     : ad::matmul(ad::transpose(betas[a]), ad::matmul(q, betas[b]));
      m2 = m2 - ad::matmul(means[a], means[b]);
      if (a == b) {
        double extra = map.noise_variance.empty() ? 0.0 : map.noise_variance[a];
        if (!map.inv_k.empty()) {
          extra += map.signal_variance[a];
          if (!fused) m2 = m2 - ad::sum(ad::cmul(tape.constant(map.inv_k[a]), q));
        }
        if (extra != 0.0) m2 = ad::add_scalar(m2, extra);
      }
      second[a][b] = m2;
      second[b][a] = m2;
    }
  }

  Var mean_out = means[0];
  for (std::size_t a = 1; a < outputs; ++a) mean_out = ad::vstack(mean_out, means[a]);
  return {mean_out, assemble_symmetric(second), input_output};
}

SeMapAd gp_map_on_tape(const GPModel& model, ad::Tape& tape) {
  SeMapAd map;
  map.points = tape.constant(model.inputs());
  MatrixXd beta(model.size(), model.state_dim());
  for (Eigen::Index a = 0; a < model.state_dim(); ++a) {
    const auto& h = model.hyper()[static_cast<std::size_t>(a)];
    map.inv_sq_lengthscales.push_back(
        tape.constant(h.lengthscales.array().square().inverse().matrix().transpose()));
    map.signal_variance.push_back(h.signal_variance);
    map.noise_variance.push_back(model.noise_in_prediction() ? h.noise_variance() : 0.0);
    map.inv_k.push_back(model.inv_k(a));
    beta.col(a) = model.beta(a);
  }
  const auto outputs = static_cast<std::size_t>(model.state_dim());
  map.pair_weights.resize(outputs * outputs);
  for (std::size_t a = 0; a < outputs; ++a) {
    for (std::size_t b = a; b < outputs; ++b) {
      MatrixXd w = beta.col(static_cast<Eigen::Index>(a)) * beta.col(static_cast<Eigen::Index>(b)).transpose();
      if (a == b) w -= map.inv_k[a];
      map.pair_weights[a * outputs + b] = tape.constant(std::move(w));
    }
  }
  map.beta = tape.constant(std::move(beta));
  return map;
}

StateAd next_state_ad(const SeMapAd& gp, Eigen::Index state_dim, const Var& joint_mean,
                      const Var& joint_cov) {
  const SeMomentsAd diff = se_moment_match(gp, joint_mean, joint_cov);
  const Var cross = ad::block(ad::matmul(joint_cov, diff.input_output), 0, 0, state_dim, state_dim);
  const Var mean = ad::block(joint_mean, 0, 0, state_dim, 1) + diff.mean;
  const Var cov = ad::block(joint_cov, 0, 0, state_dim, state_dim) + diff.cov + cross +
                  ad::transpose(cross);
  return {mean, ad::symmetrize(cov)};
}

Propagation propagate_gp(const GPModel& model, const GaussianState& input) {
  if (input.dim() != model.input_dim()) throw DimensionMismatch("propagate_gp: input dimension");
  ad::Tape tape(false);
  const SeMapAd map = gp_map_on_tape(model, tape);
  const Var mean = tape.constant(input.mean());
  const Var cov = tape.constant(input.cov());
  const SeMomentsAd out = se_moment_match(map, mean, cov);
  MatrixXd cross = input.cov() * out.input_output.value();
  return {GaussianState(out.mean.value().col(0), out.cov.value()), std::move(cross)};
}

GaussianState next_state_distribution(const GPModel& model, const JointMoments& state_action) {
  if (state_action.mean.size() != model.input_dim() || state_action.cov.rows() != model.input_dim() ||
      state_action.cov.cols() != model.input_dim()) {
    throw DimensionMismatch("next_state_distribution: joint moments have the wrong dimension");
  }
  ad::Tape tape(false);
  const SeMapAd map = gp_map_on_tape(model, tape);
  const StateAd next = next_state_ad(map, model.state_dim(), tape.constant(state_action.mean),
                                     tape.constant(psd_repair(state_action.cov)));
  return GaussianState(next.mean.value().col(0), next.cov.value());
}

MatrixXd psd_sqrt(const MatrixXd& cov) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(0.5 * (cov + cov.transpose()));
  const VectorXd root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * root.asDiagonal() * eig.eigenvectors().transpose();
}

GaussianState mc_propagate_oracle(const GPModel& model, const GaussianState& input, int n_samples,
                                  std::uint64_t seed) {
  if (n_samples < 1000) throw InvalidArgument("mc_propagate_oracle: need at least 1000 samples");
  if (input.dim() != model.input_dim()) throw DimensionMismatch("mc_propagate_oracle: input dimension");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const MatrixXd root = psd_sqrt(input.cov());
  const Eigen::Index d = model.state_dim();
  VectorXd sum_mean = VectorXd::Zero(d);
  MatrixXd sum_outer = MatrixXd::Zero(d, d);
  VectorXd sum_var = VectorXd::Zero(d);
  VectorXd z(input.dim());
  VectorXd mu(d);
  for (int s = 0; s < n_samples; ++s) {
    for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = normal(rng);
    const VectorXd x = input.mean() + root * z;
    for (Eigen::Index a = 0; a < d; ++a) {
      const auto [m, v] = model.predict_dimension(a, x);
      mu(a) = m;
      sum_var(a) += v;
    }
    sum_mean += mu;
    sum_outer += mu * mu.transpose();
  }
  const double n = static_cast<double>(n_samples);
  const VectorXd mean = sum_mean / n;
  MatrixXd cov = sum_outer / n - mean * mean.transpose();
  cov.diagonal() += sum_var / n;
  return GaussianState(mean, cov);
}

}  // namespace safepilco
