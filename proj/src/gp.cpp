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

#include "safepilco/gp.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <limits>
#include <numeric>
#include <sstream>

#include "safepilco/adam.hpp"
#include "safepilco/errors.hpp"

namespace safepilco {

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double softplus_inverse(double y) {
  if (!(y > 0.0)) throw InvalidArgument("softplus_inverse: argument must be positive");
  // ln(e^y - 1) = y + ln(1 - e^-y)
  return y + std::log(-std::expm1(-y));
}

double effective_noise(double raw, double bound) {
  const double noise = softplus(raw) + bound;
  // SoftPlus(raw) can fall below half an ulp of bound; keep the result
  // strictly above bound anyway.
  return noise > bound ? noise : std::nextafter(bound, std::numeric_limits<double>::infinity());
}

TransitionDataset::TransitionDataset(Eigen::Index state_dim, Eigen::Index action_dim)
    : state_dim_(state_dim),
      action_dim_(action_dim),
      inputs_(0, state_dim + action_dim),
      targets_(0, state_dim) {}

TransitionDataset::TransitionDataset(MatrixXd inputs, MatrixXd targets, Eigen::Index state_dim)
    : state_dim_(state_dim),
      action_dim_(inputs.cols() - state_dim),
      inputs_(std::move(inputs)),
      targets_(std::move(targets)) {
  if (action_dim_ < 0 || targets_.cols() != state_dim_ || targets_.rows() != inputs_.rows()) {
    throw DimensionMismatch("TransitionDataset: inconsistent input/target shapes");
  }
}

void TransitionDataset::add(const VectorXd& state, const VectorXd& action,
                            const VectorXd& next_state) {
  if (state.size() != state_dim_ || next_state.size() != state_dim_ || action.size() != action_dim_) {
    throw DimensionMismatch("TransitionDataset::add: wrong vector sizes");
  }
  const Eigen::Index n = inputs_.rows();
  inputs_.conservativeResize(n + 1, Eigen::NoChange);
  targets_.conservativeResize(n + 1, Eigen::NoChange);
  inputs_.row(n).head(state_dim_) = state.transpose();
  inputs_.row(n).tail(action_dim_) = action.transpose();
  targets_.row(n) = (next_state - state).transpose();
}

void TransitionDataset::append(const TransitionDataset& other) {
  if (other.state_dim_ != state_dim_ || other.action_dim_ != action_dim_) {
    throw DimensionMismatch("TransitionDataset::append: dimension mismatch");
  }
  const Eigen::Index n = inputs_.rows();
  inputs_.conservativeResize(n + other.size(), Eigen::NoChange);
  targets_.conservativeResize(n + other.size(), Eigen::NoChange);
  inputs_.bottomRows(other.size()) = other.inputs_;
  targets_.bottomRows(other.size()) = other.targets_;
}

void TransitionDataset::validate() const {
  if (inputs_.rows() < 1) throw InvalidArgument("TransitionDataset: empty dataset");
  if (targets_.rows() != inputs_.rows() || inputs_.cols() != state_dim_ + action_dim_ ||
      targets_.cols() != state_dim_) {
    throw DimensionMismatch("TransitionDataset: inconsistent shapes");
  }
  if (!inputs_.allFinite() || !targets_.allFinite()) throw NonFinite("TransitionDataset: non-finite entries");
}

void KernelHyperparams::validate(Eigen::Index input_dim) const {
  if (lengthscales.size() != input_dim) throw DimensionMismatch("KernelHyperparams: lengthscale count");
  if (!(lengthscales.array() > 0.0).all() || !(signal_variance > 0.0)) {
    throw InvalidArgument("KernelHyperparams: lengthscales and signal variance must be positive");
  }
  if (!(noise_bound >= 0.0)) throw InvalidArgument("KernelHyperparams: noise bound must be nonnegative");
  if (!std::isfinite(raw_noise)) throw NonFinite("KernelHyperparams: raw noise is not finite");
}

MatrixXd se_kernel(const MatrixXd& a, const MatrixXd& b, const VectorXd& lengthscales,
                   double signal_variance) {
  const VectorXd inv = lengthscales.cwiseInverse();
  const MatrixXd as = a * inv.asDiagonal();
  const MatrixXd bs = b * inv.asDiagonal();
  MatrixXd d2 = -2.0 * as * bs.transpose();
  d2.colwise() += as.rowwise().squaredNorm();
  d2.rowwise() += bs.rowwise().squaredNorm().transpose();
  return signal_variance * (-0.5 * d2.cwiseMax(0.0)).array().exp().matrix();
}

NllResult gp_nll(const KernelHyperparams& hyp, const MatrixXd& inputs, const VectorXd& targets,
                 bool with_gradient) {
  const Eigen::Index n = inputs.rows();
  const Eigen::Index e = inputs.cols();
  const MatrixXd kf = se_kernel(inputs, inputs, hyp.lengthscales, hyp.signal_variance);
  MatrixXd k = kf;
  const double noise_var = hyp.noise_variance();
  k.diagonal().array() += noise_var;
  const RegularizedCholesky chol = cholesky_with_jitter(k);
  const VectorXd alpha = chol.llt.solve(targets);
  const MatrixXd l = chol.llt.matrixL();
  NllResult out;
  out.value = 0.5 * targets.dot(alpha) + l.diagonal().array().log().sum() +
              0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi);
  if (!with_gradient) return out;

  // d NLL / d theta = 0.5 tr(W dK/dtheta) with W = K^-1 - alpha alpha^T.
  MatrixXd w = chol.llt.solve(MatrixXd::Identity(n, n));
  w -= alpha * alpha.transpose();
  const MatrixXd wk = w.cwiseProduct(kf);
  out.gradient.resize(e + 2);
  for (Eigen::Index d = 0; d < e; ++d) {
    const VectorXd col = inputs.col(d);
    MatrixXd diff2 = col.replicate(1, n) - col.transpose().replicate(n, 1);
    diff2 = diff2.cwiseAbs2();
    const double ls = hyp.lengthscales(d);
    out.gradient(d) = 0.5 * wk.cwiseProduct(diff2).sum() / (ls * ls);
  }
  out.gradient(e) = 0.5 * wk.sum();
  const double sigma = hyp.noise_std();
  const double sigmoid = 1.0 / (1.0 + std::exp(-hyp.raw_noise));
  out.gradient(e + 1) = 0.5 * w.trace() * 2.0 * sigma * sigmoid;
  return out;
}

namespace {

bool row_less(const MatrixXd& a, const MatrixXd& b, Eigen::Index i, Eigen::Index j) {
  for (Eigen::Index c = 0; c < a.cols(); ++c) {
    if (a(i, c) != a(j, c)) return a(i, c) < a(j, c);
  }
  for (Eigen::Index c = 0; c < b.cols(); ++c) {
    if (b(i, c) != b(j, c)) return b(i, c) < b(j, c);
  }
  return false;
}

std::vector<Eigen::Index> lexicographic_order(const MatrixXd& inputs, const MatrixXd& targets) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(inputs.rows()));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  std::stable_sort(idx.begin(), idx.end(), [&](Eigen::Index i, Eigen::Index j) {
    return row_less(inputs, targets, i, j);
  });
  return idx;
}

MatrixXd take_rows(const MatrixXd& m, const std::vector<Eigen::Index>& idx) {
  MatrixXd out(static_cast<Eigen::Index>(idx.size()), m.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = m.row(idx[r]);
  return out;
}

VectorXd pack(const KernelHyperparams& h) {
  const Eigen::Index e = h.lengthscales.size();
  VectorXd p(e + 2);
  p.head(e) = h.lengthscales.array().log();
  p(e) = std::log(h.signal_variance);
  p(e + 1) = h.raw_noise;
  return p;
}

KernelHyperparams unpack(const VectorXd& p, double bound) {
  const Eigen::Index e = p.size() - 2;
  KernelHyperparams h;
  h.lengthscales = p.head(e).array().exp();
  h.signal_variance = std::exp(p(e));
  h.raw_noise = p(e + 1);
  h.noise_bound = bound;
  return h;
}

}  // namespace

GPModel::GPModel(MatrixXd inputs, MatrixXd targets, std::vector<KernelHyperparams> hyper,
                 Eigen::Index state_dim, bool noise_in_prediction)
    : state_dim_(state_dim), noise_in_prediction_(noise_in_prediction), hyper_(std::move(hyper)) {
  if (inputs.rows() < 1) throw InvalidArgument("GPModel: no training points");
  if (targets.rows() != inputs.rows() || targets.cols() != state_dim ||
      static_cast<Eigen::Index>(hyper_.size()) != state_dim || inputs.cols() < state_dim) {
    throw DimensionMismatch("GPModel: inconsistent shapes");
  }
  for (const auto& h : hyper_) h.validate(inputs.cols());
  const auto order = lexicographic_order(inputs, targets);
  inputs_ = take_rows(inputs, order);
  targets_ = take_rows(targets, order);
  const Eigen::Index n = inputs_.rows();
  for (Eigen::Index a = 0; a < state_dim_; ++a) {
    const auto& h = hyper_[static_cast<std::size_t>(a)];
    MatrixXd k = se_kernel(inputs_, inputs_, h.lengthscales, h.signal_variance);
    k.diagonal().array() += h.noise_variance();
    const RegularizedCholesky chol = cholesky_with_jitter(k);
    beta_.push_back(chol.llt.solve(targets_.col(a)));
    MatrixXd inv = chol.llt.solve(MatrixXd::Identity(n, n));
    inv_k_.push_back(0.5 * (inv + inv.transpose()));
  }
}

GPModel GPModel::with_noise_bound(double bound) const {
  auto hyper = hyper_;
  for (auto& h : hyper) h.noise_bound = bound;
  return GPModel(inputs_, targets_, std::move(hyper), state_dim_, noise_in_prediction_);
}

GPModel GPModel::with_noise_in_prediction(bool on) const {
  return GPModel(inputs_, targets_, hyper_, state_dim_, on);
}

std::pair<double, double> GPModel::predict_dimension(Eigen::Index a, const VectorXd& input) const {
  if (input.size() != input_dim()) throw DimensionMismatch("GPModel: query has wrong dimension");
  const auto& h = hyper_[static_cast<std::size_t>(a)];
  const VectorXd ks = se_kernel(inputs_, input.transpose(), h.lengthscales, h.signal_variance);
  const double mean = ks.dot(beta(a));
  double var = h.signal_variance - ks.dot(inv_k(a) * ks);
  var = std::max(var, 0.0);
  if (noise_in_prediction_) var += h.noise_variance();
  return {mean, var};
}

PointPrediction GPModel::predict_point(const VectorXd& input) const {
  if (input.size() != input_dim()) throw DimensionMismatch("GPModel: query has wrong dimension");
  VectorXd mean(state_dim_);
  VectorXd var(state_dim_);
  for (Eigen::Index a = 0; a < state_dim_; ++a) {
    const auto [m, v] = predict_dimension(a, input);
    mean(a) = m;
    var(a) = v;
  }
  VectorXd next = input.head(state_dim_) + mean;
  MatrixXd cov = var.asDiagonal();
  return {GaussianState(std::move(mean), std::move(cov)), std::move(next)};
}

double negative_log_likelihood(const GPModel& model, const TransitionDataset& data) {
  data.validate();
  if (data.state_dim() != model.state_dim() || data.input_dim() != model.input_dim()) {
    throw DimensionMismatch("negative_log_likelihood: model and data dimensions differ");
  }
  double total = 0.0;
  for (Eigen::Index a = 0; a < model.state_dim(); ++a) {
    total += gp_nll(model.hyper()[static_cast<std::size_t>(a)], data.inputs(), data.targets().col(a), false).value;
  }
  return total;
}

std::vector<Eigen::Index> select_inducing(const MatrixXd& inputs, const MatrixXd& targets,
                                          Eigen::Index m) {
  const Eigen::Index n = inputs.rows();
  if (m >= n) {
    std::vector<Eigen::Index> all(static_cast<std::size_t>(n));
    std::iota(all.begin(), all.end(), Eigen::Index{0});
    return all;
  }
  // Ties are broken by lexicographic order of (input, target) rows, never by
  // position, so the selected set is invariant to row permutations.
  auto better = [&](Eigen::Index cand, double d_cand, Eigen::Index best, double d_best) {
    if (best < 0) return true;
    if (d_cand != d_best) return d_cand > d_best;
    return row_less(inputs, targets, cand, best);
  };
  const VectorXd centroid = inputs.colwise().mean().transpose();
  VectorXd min_d2(n);
  Eigen::Index first = -1;
  double first_d = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double d = (inputs.row(i).transpose() - centroid).squaredNorm();
    if (better(i, d, first, first_d)) {
      first = i;
      first_d = d;
    }
  }
  std::vector<Eigen::Index> chosen{first};
  std::vector<bool> taken(static_cast<std::size_t>(n), false);
  taken[static_cast<std::size_t>(first)] = true;
  for (Eigen::Index i = 0; i < n; ++i) min_d2(i) = (inputs.row(i) - inputs.row(first)).squaredNorm();
  while (static_cast<Eigen::Index>(chosen.size()) < m) {
    Eigen::Index best = -1;
    double best_d = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (taken[static_cast<std::size_t>(i)]) continue;
      if (better(i, min_d2(i), best, best_d)) {
        best = i;
        best_d = min_d2(i);
      }
    }
    chosen.push_back(best);
    taken[static_cast<std::size_t>(best)] = true;
    for (Eigen::Index i = 0; i < n; ++i) {
      min_d2(i) = std::min(min_d2(i), (inputs.row(i) - inputs.row(best)).squaredNorm());
    }
  }
  return chosen;
}

KernelHyperparams initial_hyperparams(const MatrixXd& inputs, const VectorXd& targets,
                                      double noise_bound) {
  KernelHyperparams h;
  const VectorXd mean = inputs.colwise().mean().transpose();
  const double n = static_cast<double>(inputs.rows());
  h.lengthscales.resize(inputs.cols());
  for (Eigen::Index d = 0; d < inputs.cols(); ++d) {
    const double sd = std::sqrt((inputs.col(d).array() - mean(d)).square().sum() / n);
    h.lengthscales(d) = sd > 1e-8 ? sd : 1.0;
  }
  const double tvar = (targets.array() - targets.mean()).square().sum() / n;
  h.signal_variance = tvar > 1e-12 ? tvar : 1e-2;
  const double tsd = std::sqrt(h.signal_variance);
  h.raw_noise = softplus_inverse(0.1 * tsd);
  h.noise_bound = noise_bound;
  return h;
}

GPModel fit(const TransitionDataset& data, double noise_bound, const FitOptions& options,
            const GPModel* warm_start) {
  data.validate();
  if (!(noise_bound >= 0.0)) throw InvalidArgument("fit: noise bound must be nonnegative");
  MatrixXd inputs = data.inputs();
  MatrixXd targets = data.targets();
  if (options.max_inducing > 0 && data.size() > options.max_inducing) {
    const auto idx = select_inducing(inputs, targets, options.max_inducing);
    inputs = take_rows(data.inputs(), idx);
    targets = take_rows(data.targets(), idx);
  }
  // Fit on the canonical row order so the optimizer path is permutation
  // invariant as well.
  const auto order = lexicographic_order(inputs, targets);
  inputs = take_rows(inputs, order);
  targets = take_rows(targets, order);

  std::vector<KernelHyperparams> hyper;
  for (Eigen::Index a = 0; a < data.state_dim(); ++a) {
    const VectorXd y = targets.col(a);
    KernelHyperparams init = initial_hyperparams(inputs, y, noise_bound);
    if (warm_start != nullptr && warm_start->state_dim() == data.state_dim() &&
        warm_start->input_dim() == data.input_dim()) {
      init = warm_start->hyper()[static_cast<std::size_t>(a)];
      init.noise_bound = noise_bound;
    }
    VectorXd params = pack(init);
    NllResult cur = gp_nll(init, inputs, y, true);
    if (!std::isfinite(cur.value)) throw NonFinite("fit: initial NLL is not finite");
    VectorXd best_params = params;
    double best_value = cur.value;
    Adam adam(params.size(), options.learning_rate);
    for (int epoch = 0; epoch < options.epochs; ++epoch) {
      params = adam.step(params, cur.gradient);
      const KernelHyperparams h = unpack(params, noise_bound);
      try {
        cur = gp_nll(h, inputs, y, true);
      } catch (const CholeskyFailure&) {
        cur.value = std::numeric_limits<double>::quiet_NaN();
      }
      if (!std::isfinite(cur.value) || !cur.gradient.allFinite()) {
        std::ostringstream msg;
        msg << "fit: NLL became non-finite at epoch " << epoch << " of output " << a
            << "; last finite NLL " << best_value << " at params [" << best_params.transpose() << "]";
        throw NonFinite(msg.str());
      }
      if (cur.value < best_value) {
        best_value = cur.value;
        best_params = params;
      }
    }
    hyper.push_back(unpack(best_params, noise_bound));
  }
  return GPModel(std::move(inputs), std::move(targets), std::move(hyper), data.state_dim(),
                 options.noise_in_prediction);
}

nlohmann::json model_to_json(const GPModel& model) {
  nlohmann::json j;
  j["format_version"] = kModelFormatVersion;
  j["state_dim"] = model.state_dim();
  j["noise_in_prediction"] = model.noise_in_prediction();
  auto rows = [](const MatrixXd& m) {
    std::vector<std::vector<double>> out(static_cast<std::size_t>(m.rows()));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) out[static_cast<std::size_t>(r)].push_back(m(r, c));
    }
    return out;
  };
  j["inputs"] = rows(model.inputs());
  j["targets"] = rows(model.targets());
  j["hyperparams"] = nlohmann::json::array();
  for (const auto& h : model.hyper()) {
    j["hyperparams"].push_back({{"lengthscales", std::vector<double>(h.lengthscales.data(), h.lengthscales.data() + h.lengthscales.size())},
                                {"signal_variance", h.signal_variance},
                                {"raw_noise", h.raw_noise},
                                {"noise_bound", h.noise_bound}});
  }
  return j;
}

namespace {

MatrixXd matrix_from_rows(const nlohmann::json& j, Eigen::Index cols) {
  if (!j.is_array()) throw FormatError("model: expected an array of rows");
  MatrixXd m(static_cast<Eigen::Index>(j.size()), cols);
  for (std::size_t r = 0; r < j.size(); ++r) {
    const auto& row = j[r];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) {
      throw FormatError("model: ragged matrix row");
    }
    for (std::size_t c = 0; c < row.size(); ++c) {
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = row[c].get<double>();
    }
  }
  return m;
}

}  // namespace

GPModel model_from_json(const nlohmann::json& j) {
  try {
    const int version = j.at("format_version").get<int>();
    if (version != kModelFormatVersion) {
      std::ostringstream msg;
      msg << "model format version " << version << " is not supported (expected " << kModelFormatVersion << ")";
      throw VersionError(msg.str());
    }
    const auto state_dim = j.at("state_dim").get<Eigen::Index>();
    const auto& in = j.at("inputs");
    if (!in.is_array() || in.empty()) throw FormatError("model: inputs missing");
    const auto input_dim = static_cast<Eigen::Index>(in[0].size());
    MatrixXd inputs = matrix_from_rows(in, input_dim);
    MatrixXd targets = matrix_from_rows(j.at("targets"), state_dim);
    std::vector<KernelHyperparams> hyper;
    for (const auto& hj : j.at("hyperparams")) {
      KernelHyperparams h;
      const auto ls = hj.at("lengthscales").get<std::vector<double>>();
      h.lengthscales = Eigen::Map<const VectorXd>(ls.data(), static_cast<Eigen::Index>(ls.size()));
      h.signal_variance = hj.at("signal_variance").get<double>();
      h.raw_noise = hj.at("raw_noise").get<double>();
      h.noise_bound = hj.at("noise_bound").get<double>();
      hyper.push_back(std::move(h));
    }
    return GPModel(std::move(inputs), std::move(targets), std::move(hyper), state_dim,
                   j.at("noise_in_prediction").get<bool>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model: ") + e.what());
  } catch (const DimensionMismatch& e) {
    throw FormatError(std::string("model: ") + e.what());
  }
}

}  // namespace safepilco
