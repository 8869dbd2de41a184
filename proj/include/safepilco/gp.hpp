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

#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "safepilco/gaussian.hpp"

namespace safepilco {

/// SoftPlus(x) = ln(1 + e^x), stable for large |x|.
double softplus(double x);
double softplus_inverse(double y);

/// Likelihood-noise standard deviation SoftPlus(raw) + bound. Always
/// strictly greater than bound.
double effective_noise(double raw, double bound);

/// Transitions (state, action) -> state difference.
class TransitionDataset {
 public:
  TransitionDataset(Eigen::Index state_dim, Eigen::Index action_dim);
  /// inputs is N x (D+F), targets is N x D (state differences).
  TransitionDataset(MatrixXd inputs, MatrixXd targets, Eigen::Index state_dim);

  void add(const VectorXd& state, const VectorXd& action, const VectorXd& next_state);
  void append(const TransitionDataset& other);

  /// Throws InvalidArgument for an empty dataset, NonFinite for NaN/Inf and
  /// DimensionMismatch for inconsistent shapes.
  void validate() const;

  Eigen::Index size() const { return inputs_.rows(); }
  Eigen::Index state_dim() const { return state_dim_; }
  Eigen::Index action_dim() const { return action_dim_; }
  Eigen::Index input_dim() const { return state_dim_ + action_dim_; }
  const MatrixXd& inputs() const { return inputs_; }
  const MatrixXd& targets() const { return targets_; }

 private:
  Eigen::Index state_dim_;
  Eigen::Index action_dim_;
  MatrixXd inputs_;
  MatrixXd targets_;
};

struct KernelHyperparams {
  VectorXd lengthscales;
  double signal_variance = 1.0;
  double raw_noise = 0.0;
  double noise_bound = 0.0;

  double noise_std() const { return effective_noise(raw_noise, noise_bound); }
  double noise_variance() const {
    const double s = noise_std();
    return s * s;
  }
  void validate(Eigen::Index input_dim) const;
};

/// Squared-exponential ARD kernel matrix between the rows of a and b.
MatrixXd se_kernel(const MatrixXd& a, const MatrixXd& b, const VectorXd& lengthscales,
                   double signal_variance);

/// Per-dimension marginal NLL and its gradient with respect to
/// (log lengthscales, log signal variance, raw noise).
struct NllResult {
  double value = 0.0;
  VectorXd gradient;
};
NllResult gp_nll(const KernelHyperparams& hyp, const MatrixXd& inputs, const VectorXd& targets,
                 bool with_gradient);

struct PointPrediction {
  /// Posterior over the state difference (diagonal covariance).
  GaussianState difference;
  /// Input state + predicted difference mean.
  VectorXd next_mean;
};

/// One independent SE-ARD GP per state dimension, trained on state
/// differences. Immutable once built; prediction caches are computed in the
/// constructor.
class GPModel {
 public:
  /// Rows are stored in lexicographic order so that predictions do not
  /// depend on the order of the training data.
  GPModel(MatrixXd inputs, MatrixXd targets, std::vector<KernelHyperparams> hyper,
          Eigen::Index state_dim, bool noise_in_prediction = true);

  Eigen::Index state_dim() const { return state_dim_; }
  Eigen::Index input_dim() const { return inputs_.cols(); }
  Eigen::Index action_dim() const { return inputs_.cols() - state_dim_; }
  Eigen::Index size() const { return inputs_.rows(); }
  bool noise_in_prediction() const { return noise_in_prediction_; }

  const MatrixXd& inputs() const { return inputs_; }
  const MatrixXd& targets() const { return targets_; }
  const std::vector<KernelHyperparams>& hyper() const { return hyper_; }
  /// (K + sigma^2 I)^-1 y for output dimension a.
  const VectorXd& beta(Eigen::Index a) const { return beta_[static_cast<std::size_t>(a)]; }
  /// (K + sigma^2 I)^-1 for output dimension a.
  const MatrixXd& inv_k(Eigen::Index a) const { return inv_k_[static_cast<std::size_t>(a)]; }

  /// Same data and hyperparameters with a different noise bound.
  GPModel with_noise_bound(double bound) const;
  GPModel with_noise_in_prediction(bool on) const;

  PointPrediction predict_point(const VectorXd& input) const;

  /// Posterior mean and variance of output dimension a (no decomposition
  /// into next state).
  std::pair<double, double> predict_dimension(Eigen::Index a, const VectorXd& input) const;

 private:
  Eigen::Index state_dim_;
  bool noise_in_prediction_;
  MatrixXd inputs_;
  MatrixXd targets_;
  std::vector<KernelHyperparams> hyper_;
  std::vector<VectorXd> beta_;
  std::vector<MatrixXd> inv_k_;
};

/// Sum over output dimensions of the marginal NLL of data under the model's
/// hyperparameters.
double negative_log_likelihood(const GPModel& model, const TransitionDataset& data);

struct FitOptions {
  int max_inducing = 100;
  int epochs = 100;
  double learning_rate = 0.01;
  bool noise_in_prediction = true;
};

/// Deterministic, order-independent greedy farthest-point selection of m
/// rows. Returns indices into inputs.
std::vector<Eigen::Index> select_inducing(const MatrixXd& inputs, const MatrixXd& targets,
                                          Eigen::Index m);

/// Scale-aware initial hyperparameters for one output dimension.
KernelHyperparams initial_hyperparams(const MatrixXd& inputs, const VectorXd& targets,
                                      double noise_bound);

/// Minimizes the NLL with Adam in log/raw space. When warm_start is given
/// its lengthscales, signal variances and raw noise seed the optimizer.
GPModel fit(const TransitionDataset& data, double noise_bound, const FitOptions& options,
            const GPModel* warm_start = nullptr);

inline constexpr int kModelFormatVersion = 1;

nlohmann::json model_to_json(const GPModel& model);
GPModel model_from_json(const nlohmann::json& j);

}  // namespace safepilco
