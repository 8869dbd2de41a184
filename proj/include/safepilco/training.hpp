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

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "safepilco/adam.hpp"
#include "safepilco/environments.hpp"
#include "safepilco/gp.hpp"
#include "safepilco/objective.hpp"
#include "safepilco/policy.hpp"

namespace safepilco {

struct TrainConfig {
  int episodes = 20;
  int horizon = 40;
  int epochs_per_episode = 100;
  double learning_rate = 0.01;
  double dual_learning_rate = 0.01;
  double xi = 1.0;
  double lambda0 = 20.0;
  /// Noise lower bound; nullopt trains without a bound.
  std::optional<double> sigma_low = 0.1;
  /// false keeps lambda at 0 for every step.
  bool constrained = true;
  int basis_functions = kDefaultBasisFunctions;
  int gp_max_inducing = 100;
  int gp_epochs = 100;
  double gp_learning_rate = 0.01;
  bool noise_in_prediction = true;
  double cost_width = kDefaultCostWidth;
  double hazard_lo = 0.7853981633974483;
  double hazard_hi = 2.356194490192345;
  PendulumParams env;
  InitialStateSpec init;
  std::uint64_t seed = 0;

  void validate() const;
  double noise_bound() const { return sigma_low.value_or(0.0); }
  CostModel cost() const { return pendulum_cost(cost_width); }
  HazardRegion hazard() const;
  FitOptions fit_options() const;
};

nlohmann::json config_to_json(const TrainConfig& config);
/// Missing keys take their defaults; unknown keys and ill-typed values raise
/// FormatError, out-of-range values InvalidArgument.
TrainConfig config_from_json(const nlohmann::json& j);

/// Seed for an independent stream identified by path under a master seed.
std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> path);

struct LagrangianState {
  PolicyParams policy;
  double lambda = 0.0;
  double xi = 1.0;
  Adam optimizer;
  long steps = 0;
};

/// theta <- Adam(theta, grad); lambda <- max(0, lambda + lr_lambda (risk - xi)).
/// Throws NonFinite if either update is not finite.
void primal_dual_update(VectorXd& theta, double& lambda, Adam& optimizer, const VectorXd& grad,
                        double risk, double xi, double lr_lambda);

LagrangianState primal_dual_step(const LagrangianState& state, const VectorXd& grad, double risk,
                                 double lr_lambda);

/// One real episode: the return is minus the summed cost of the visited
/// states x_1..x_T, violations count the states inside the hazard. Cost and
/// hazard use the true state; the controller sees the observation.
struct EpisodeOutcome {
  double real_return = 0.0;
  int violations = 0;
  TransitionDataset transitions{kPendulumObsDim, kPendulumActionDim};
};

EpisodeOutcome execute_episode(PendulumEnv& env, const std::function<double(const VectorXd&)>& controller,
                               int horizon, const CostModel& cost, const HazardRegion& region);

struct EpisodeLog {
  int episode = 0;
  bool random_actions = false;
  double real_return = 0.0;
  int violations = 0;
  long dataset_size = 0;
  std::vector<double> noise_std;
  /// Predicted cost and risk to go at the last primal-dual epoch.
  double predicted_cost = 0.0;
  double predicted_risk = 0.0;
  double lambda = 0.0;
  std::vector<double> lambda_trace;
};

nlohmann::json episode_log_to_json(const EpisodeLog& log);
EpisodeLog episode_log_from_json(const nlohmann::json& j);

struct RunState {
  TrainConfig config;
  TransitionDataset data{kPendulumObsDim, kPendulumActionDim};
  std::optional<GPModel> model;
  LagrangianState lagrangian;
  PendulumEnv env{PendulumParams{}, InitialStateSpec{}, 0};
  std::mt19937_64 explore_rng;
  int episode = 0;
  std::vector<EpisodeLog> logs;
};

RunState start_run(const TrainConfig& config);

/// Collects T transitions (random torques in episode 0, the current policy
/// afterwards), refits the GP and runs the primal-dual epochs. Errors are
/// rethrown with the episode index.
const EpisodeLog& run_episode(RunState& run);

/// All configured episodes; on_episode is called after each one.
RunState train(const TrainConfig& config,
               const std::function<void(const RunState&, const EpisodeLog&)>& on_episode = {});

inline constexpr int kCheckpointFormatVersion = 1;

nlohmann::json checkpoint_to_json(const RunState& run);
RunState checkpoint_from_json(const nlohmann::json& j);
void save_checkpoint(const RunState& run, const std::filesystem::path& path);
/// FormatError for unreadable or truncated files, VersionError for a
/// different format version.
RunState load_checkpoint(const std::filesystem::path& path);

/// The rollout setup used for policy optimization under config.
RolloutSetup rollout_setup(const TrainConfig& config);

}  // namespace safepilco
