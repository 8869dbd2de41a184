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
#include <string>
#include <vector>

#include <json.hpp>

#include "safepilco/environments.hpp"
#include "safepilco/objective.hpp"
#include "safepilco/policy.hpp"
#include "safepilco/training.hpp"

namespace safepilco {

struct EvalResult {
  std::vector<double> returns;
  std::vector<int> violations;
};

/// n_runs episodes of the policy in env, continuing env's RNG stream.
EvalResult evaluate_policy(const PolicyParams& policy, PendulumEnv& env, int n_runs, int episode_len,
                           const CostModel& cost, const HazardRegion& region);

/// n_runs episodes, each in its own environment perturbed by sigma_perturb
/// with seeds derived from seed.
EvalResult evaluate_perturbed(const PolicyParams& policy, const TrainConfig& config, double sigma_perturb,
                              int n_runs, int episode_len, std::uint64_t seed);

/// Baseline: one episode for each of n_runs freshly initialized random
/// policies on the nominal environment.
EvalResult evaluate_random_policies(const TrainConfig& config, int n_runs, int episode_len, std::uint64_t seed);

double median(std::vector<double> values);
/// Sample standard deviation (n - 1); 0 for fewer than two values.
double standard_deviation(const std::vector<double>& values);

/// A training setup: a noise bound (or none) with or without the chance
/// constraint.
struct GridVariant {
  std::string label;
  std::optional<double> sigma_low;
  bool constrained = true;
};

std::vector<GridVariant> default_grid_variants();

struct GridConfig {
  /// Training settings shared by every job; sigma_low, constrained and seed
  /// are set per job.
  TrainConfig base;
  std::vector<GridVariant> variants = default_grid_variants();
  std::vector<double> sigma_perturb{0.0, 0.01, 0.1, 0.15, 0.2};
  int seeds = 10;
  std::uint64_t master_seed = 0;
  int eval_runs = 10;
  int eval_episode_len = 40;

  void validate() const;
};

nlohmann::json grid_config_to_json(const GridConfig& config);
GridConfig grid_config_from_json(const nlohmann::json& j);

struct SeedResult {
  int seed_index = 0;
  std::uint64_t train_seed = 0;
  bool ok = true;
  std::string error;
  std::vector<double> returns;
  std::vector<int> violations;
  double median_return = 0.0;
  double std_return = 0.0;
  double median_violations = 0.0;
  double std_violations = 0.0;
};

struct CellReport {
  std::string variant;
  std::optional<double> sigma_low;
  bool constrained = true;
  double sigma_perturb = 0.0;
  std::vector<SeedResult> seeds;
  /// Across seeds, over the per-seed medians of the successful seeds; NaN
  /// when every seed failed.
  double median_return = 0.0;
  double std_return = 0.0;
  double median_violations = 0.0;
  double std_violations = 0.0;
  int failures = 0;
};

struct EvalReport {
  std::vector<CellReport> cells;
};

/// Recomputes per-seed and per-cell statistics from the raw runs.
void aggregate(CellReport& cell);

/// Trains one model per (variant, seed) on the nominal environment and
/// evaluates it across the sigma_perturb grid. A failing job is recorded in
/// its cells and the grid continues.
using TrainedHook = std::function<void(const GridVariant& variant, int seed_index, const RunState& run)>;

/// on_trained sees each finished training run before it is evaluated.
EvalReport grid_experiment(const GridConfig& config,
                           const std::function<void(const std::string&)>& progress = {},
                           const TrainedHook& on_trained = {});

nlohmann::json report_to_json(const EvalReport& report);
EvalReport report_from_json(const nlohmann::json& j);

/// One row per cell.
std::string report_csv(const EvalReport& report);

inline constexpr const char* kPlotDataHeader = "sigma_low,sigma_perturb,seed,run,return,violations";

struct PlotRow {
  std::string sigma_low;  // variant label
  double sigma_perturb = 0.0;
  int seed = 0;
  int run = 0;
  double ret = 0.0;
  int violations = 0;
};

/// Long format, one row per evaluation run of a successful seed.
std::string plot_data_csv(const EvalReport& report);
std::vector<PlotRow> parse_plot_data(const std::string& csv);
/// Throws IOError when the file cannot be written.
void emit_plot_data(const EvalReport& report, const std::filesystem::path& path);

struct LemmaConfig {
  std::vector<double> sigma_lows{0.05, 0.1, 0.2};
  std::vector<double> deltas{0.0, 0.01, 0.02, 0.05, 0.1, 0.15, 0.2, 0.3, 0.4, 0.5};
  double phi0 = 1.0;
  int n_train = 40;
  int n_test = 201;
  double data_noise_std = 0.0;
  long lipschitz_samples = 100000;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json lemma_config_to_json(const LemmaConfig& config);
LemmaConfig lemma_config_from_json(const nlohmann::json& j);

struct LemmaCurvePoint {
  double delta = 0.0;
  double sup_error = 0.0;
  /// K |delta| + sigma_eff.
  double envelope = 0.0;
  /// |K |delta| - sigma_low|, reported only.
  double reference_band = 0.0;
};

struct LemmaEntry {
  double sigma_low = 0.0;
  double sigma_eff = 0.0;
  double delta_max = 0.0;  // sigma_low / K
  double containment = 0.0;  // fraction of held-out points within sigma_eff
  bool contained = false;    // containment >= 0.95
  double generalization_error = 0.0;  // sup error at delta = 0
  std::vector<LemmaCurvePoint> curve;
  double check_delta = 0.0;     // sigma_low / (2 K)
  double check_error = 0.0;     // sup error there
  double check_envelope = 0.0;  // K check_delta + 2 sigma_eff
  bool check_passed = false;
};

struct LemmaReport {
  double k_hat = 0.0;
  LipschitzEstimate lipschitz;
  std::vector<LemmaEntry> entries;
};

/// Empirical generalization-radius check on synthetic_1d.
LemmaReport verify_lemma(const LemmaConfig& config);
nlohmann::json lemma_report_to_json(const LemmaReport& report);

}  // namespace safepilco
