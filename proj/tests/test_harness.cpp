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
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "safepilco/errors.hpp"
#include "safepilco/harness.hpp"

using namespace safepilco;

namespace {

TrainConfig tiny_config() {
  TrainConfig c;
  c.episodes = 2;
  c.horizon = 10;
  c.epochs_per_episode = 3;
  c.basis_functions = 10;
  c.gp_epochs = 10;
  return c;
}

GridConfig tiny_grid() {
  GridConfig g;
  g.base = tiny_config();
  g.variants = {{"none", std::nullopt, true}, {"0.1", 0.1, true}};
  g.sigma_perturb = {0.0, 0.1};
  g.seeds = 2;
  g.eval_runs = 3;
  g.eval_episode_len = 10;
  g.master_seed = 17;
  return g;
}

EvalReport synthetic_report(int cells, int seeds, int runs, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> ret(-100.0, 30.0);
  std::uniform_int_distribution<int> viol(0, 40);
  EvalReport report;
  for (int c = 0; c < cells; ++c) {
    CellReport cell;
    cell.variant = c % 2 == 0 ? "none" : "0.1";
    cell.sigma_low = c % 2 == 0 ? std::nullopt : std::optional<double>(0.1);
    cell.sigma_perturb = 0.05 * c;
    for (int s = 0; s < seeds; ++s) {
      SeedResult r;
      r.seed_index = s;
      r.train_seed = static_cast<std::uint64_t>(1000 + s);
      for (int k = 0; k < runs; ++k) {
        r.returns.push_back(ret(rng));
        r.violations.push_back(viol(rng));
      }
      cell.seeds.push_back(r);
    }
    aggregate(cell);
    report.cells.push_back(cell);
  }
  return report;
}

double naive_median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2.0;
}

}  // namespace

TEST_CASE("summary statistics") {
  CHECK(median({3.0, 1.0, 2.0}) == 2.0);
  CHECK(median({4.0, 1.0, 2.0, 3.0}) == 2.5);
  CHECK(std::isnan(median({})));
  CHECK(standard_deviation({5.0}) == 0.0);
  CHECK(standard_deviation({1.0, 2.0, 3.0, 4.0}) == doctest::Approx(std::sqrt(5.0 / 3.0)).epsilon(1e-14));
}

TEST_CASE("evaluate_policy") {
  const TrainConfig config = tiny_config();
  const GaussianState init = initial_observation_distribution(config.init);
  const PolicyParams policy = random_policy(init, 1, VectorXd::Constant(1, 2.0), 10, 4);

  SUBCASE("zero-cost environment returns 0") {
    CostModel zero = config.cost();
    zero.weight.setZero();
    PendulumEnv env(config.env, config.init, 1);
    const EvalResult r = evaluate_policy(policy, env, 10, 40, zero, config.hazard());
    REQUIRE(r.returns.size() == 10);
    for (double v : r.returns) CHECK(v == 0.0);
    for (int v : r.violations) {
      CHECK(v >= 0);
      CHECK(v <= 40);
    }
  }

  SUBCASE("fixed seed is deterministic") {
    PendulumEnv a(config.env, config.init, 8);
    PendulumEnv b(config.env, config.init, 8);
    const EvalResult x = evaluate_policy(policy, a, 10, 40, config.cost(), config.hazard());
    const EvalResult y = evaluate_policy(policy, b, 10, 40, config.cost(), config.hazard());
    CHECK(x.returns == y.returns);
    CHECK(x.violations == y.violations);
    const EvalResult p = evaluate_perturbed(policy, config, 0.1, 10, 40, 5);
    const EvalResult q = evaluate_perturbed(policy, config, 0.1, 10, 40, 5);
    CHECK(p.returns == q.returns);
    const EvalResult other = evaluate_perturbed(policy, config, 0.1, 10, 40, 6);
    CHECK(p.returns != other.returns);
  }

  SUBCASE("sigma 0 matches the final training episode") {
    TrainConfig c = config;
    c.episodes = 3;
    RunState run = start_run(c);
    run_episode(run);
    run_episode(run);
    PendulumEnv env = run.env;
    const PolicyParams before = run.lagrangian.policy;
    const EpisodeLog last = run_episode(run);
    const EvalResult r = evaluate_policy(before, env, 1, c.horizon, c.cost(), c.hazard());
    CHECK(r.returns[0] == last.real_return);
    CHECK(r.violations[0] == last.violations);
  }

  SUBCASE("dimension mismatch") {
    const PolicyParams wrong = random_policy(GaussianState::point(VectorXd::Zero(2)), 1, VectorXd::Ones(1), 5, 1);
    PendulumEnv env(config.env, config.init, 1);
    CHECK_THROWS_AS(evaluate_policy(wrong, env, 1, 10, config.cost(), config.hazard()), DimensionMismatch);
  }

  SUBCASE("random policy baseline") {
    const EvalResult r = evaluate_random_policies(config, 50, 40, 3);
    CHECK(r.returns.size() == 50);
    CHECK(median(r.returns) < -30.0);
    CHECK(evaluate_random_policies(config, 50, 40, 3).returns == r.returns);
  }
}

TEST_CASE("grid experiment") {
  SUBCASE("degenerate grid has one row") {
    GridConfig g = tiny_grid();
    g.base.episodes = 1;
    g.variants = {{"0.1", 0.1, true}};
    g.sigma_perturb = {0.0};
    g.seeds = 1;
    const EvalReport report = grid_experiment(g);
    REQUIRE(report.cells.size() == 1);
    CHECK(report.cells[0].seeds.size() == 1);
    CHECK(report.cells[0].failures == 0);
    const std::string csv = report_csv(report);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 2);
  }

  SUBCASE("byte-identical CSV for the same config") {
    const GridConfig g = tiny_grid();
    int messages = 0;
    const EvalReport a = grid_experiment(g, [&messages](const std::string&) { ++messages; });
    const EvalReport b = grid_experiment(g);
    CHECK(messages == 4);
    CHECK(a.cells.size() == 4);
    CHECK(report_csv(a) == report_csv(b));
    CHECK(plot_data_csv(a) == plot_data_csv(b));
    CHECK(report_to_json(a).dump() == report_to_json(b).dump());
    // Variants share training seeds per seed index.
    CHECK(a.cells[0].seeds[1].train_seed == a.cells[2].seeds[1].train_seed);
    CHECK(a.cells[0].seeds[0].train_seed != a.cells[0].seeds[1].train_seed);
  }

  SUBCASE("training failures are recorded per cell") {
    GridConfig g = tiny_grid();
    g.base.init.theta_std = 0.0;
    g.base.init.velocity_std = 0.0;
    g.base.env.obs_noise_std = 0.0;
    g.base.gp_max_inducing = 1;
    g.variants = {{"0", 0.0, true}};
    g.sigma_perturb = {0.0};
    g.seeds = 1;
    const EvalReport report = grid_experiment(g);
    REQUIRE(report.cells.size() == 1);
    const CellReport& cell = report.cells[0];
    CHECK(cell.seeds.size() == 1);
    if (!cell.seeds[0].ok) {
      CHECK(cell.failures == 1);
      CHECK_FALSE(cell.seeds[0].error.empty());
    }
  }

  SUBCASE("invalid grids") {
    GridConfig g = tiny_grid();
    g.sigma_perturb.clear();
    CHECK_THROWS_AS(grid_experiment(g), InvalidArgument);
    g = tiny_grid();
    g.variants.push_back(g.variants[0]);
    CHECK_THROWS_AS(grid_experiment(g), InvalidArgument);
    g = tiny_grid();
    g.variants[0].label = "a,b";
    CHECK_THROWS_AS(g.validate(), InvalidArgument);
  }
}

TEST_CASE("grid config JSON") {
  const GridConfig g = tiny_grid();
  const GridConfig back = grid_config_from_json(grid_config_to_json(g));
  CHECK(grid_config_to_json(back).dump() == grid_config_to_json(g).dump());
  CHECK(default_grid_variants().size() == 6);
  const GridConfig d = grid_config_from_json(nlohmann::json::object());
  CHECK(d.seeds == 10);
  CHECK(d.sigma_perturb == std::vector<double>{0.0, 0.01, 0.1, 0.15, 0.2});
  const GridConfig v = grid_config_from_json({{"variants", {{{"sigma_low", nullptr}, {"constrained", false}}}}});
  CHECK(v.variants[0].label == "none-nosafety");
  CHECK_THROWS_AS(grid_config_from_json({{"seed", 1}}), FormatError);
  CHECK_THROWS_AS(grid_config_from_json({{"seeds", "ten"}}), FormatError);
}

TEST_CASE("aggregation matches recomputation from raw JSON") {
  const EvalReport report = synthetic_report(3, 5, 10, 2);
  const nlohmann::json j = report_to_json(report);
  for (std::size_t c = 0; c < report.cells.size(); ++c) {
    std::vector<double> medians;
    for (const auto& s : j["cells"][c]["seeds"]) {
      const auto returns = s["returns"].get<std::vector<double>>();
      const double m = naive_median(returns);
      CHECK(s["median_return"].get<double>() == m);
      medians.push_back(m);
    }
    const double mean = std::accumulate(medians.begin(), medians.end(), 0.0) / medians.size();
    double ss = 0.0;
    for (double m : medians) ss += (m - mean) * (m - mean);
    CHECK(j["cells"][c]["median_return"].get<double>() == naive_median(medians));
    CHECK(j["cells"][c]["std_return"].get<double>() == doctest::Approx(std::sqrt(ss / 4.0)).epsilon(1e-12));
  }
  const EvalReport back = report_from_json(j);
  CHECK(report_to_json(back).dump() == j.dump());
  CHECK_THROWS_AS(report_from_json({{"cells", {{{"variant", "x"}}}}}), FormatError);
}

TEST_CASE("failed seeds are excluded from aggregates") {
  EvalReport report = synthetic_report(1, 3, 4, 9);
  CellReport& cell = report.cells[0];
  const double before = cell.seeds[0].median_return;
  cell.seeds[2].ok = false;
  cell.seeds[2].returns.clear();
  cell.seeds[2].violations.clear();
  aggregate(cell);
  CHECK(cell.failures == 1);
  CHECK(cell.median_return == (cell.seeds[0].median_return + cell.seeds[1].median_return) / 2.0);
  CHECK(cell.seeds[0].median_return == before);

  for (auto& seed : cell.seeds) seed.ok = false;
  aggregate(cell);
  CHECK(cell.failures == 3);
  CHECK(std::isnan(cell.median_return));
  CHECK(std::isnan(cell.std_return));
  const EvalReport back = report_from_json(report_to_json(report));
  CHECK(std::isnan(back.cells[0].std_return));
}

TEST_CASE("plot data") {
  SUBCASE("2 cells x 10 seeds x 10 runs gives 200 rows") {
    const EvalReport report = synthetic_report(2, 10, 10, 1);
    const std::string csv = plot_data_csv(report);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 201);
    CHECK(csv.rfind(std::string(kPlotDataHeader) + "\n", 0) == 0);

    const std::vector<PlotRow> rows = parse_plot_data(csv);
    REQUIRE(rows.size() == 200);
    std::size_t i = 0;
    for (const auto& cell : report.cells) {
      for (const auto& s : cell.seeds) {
        for (std::size_t r = 0; r < s.returns.size(); ++r, ++i) {
          CHECK(rows[i].sigma_low == cell.variant);
          CHECK(rows[i].sigma_perturb == cell.sigma_perturb);
          CHECK(rows[i].seed == s.seed_index);
          CHECK(rows[i].run == static_cast<int>(r));
          CHECK(rows[i].ret == s.returns[r]);
          CHECK(rows[i].violations == s.violations[r]);
        }
      }
    }
  }

  SUBCASE("empty report gives the header only") {
    const auto path = std::filesystem::temp_directory_path() / "safepilco_test_plot.csv";
    emit_plot_data(EvalReport{}, path);
    std::ifstream in(path);
    const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    CHECK(text == std::string(kPlotDataHeader) + "\n");
    CHECK(parse_plot_data(text).empty());
    std::filesystem::remove(path);
  }

  SUBCASE("write failure") {
    CHECK_THROWS_AS(emit_plot_data(EvalReport{}, "/nonexistent_dir/x/plot.csv"), IOError);
  }

  SUBCASE("malformed input") {
    CHECK_THROWS_AS(parse_plot_data("a,b\n"), FormatError);
    CHECK_THROWS_AS(parse_plot_data(std::string(kPlotDataHeader) + "\nnone,0,1\n"), FormatError);
    CHECK_THROWS_AS(parse_plot_data(std::string(kPlotDataHeader) + "\nnone,x,1,1,1,1\n"), FormatError);
  }
}

TEST_CASE("lemma verification") {
  LemmaConfig config;
  config.lipschitz_samples = 20000;
  const LemmaReport report = verify_lemma(config);
  // sup |x cos(phi x)| over x in [-1, 1], phi in [0.5, 1.5] is cos(0.5).
  CHECK(report.k_hat == doctest::Approx(std::cos(0.5)).epsilon(1e-3));
  CHECK(report.k_hat <= std::cos(0.5) + 1e-9);
  REQUIRE(report.entries.size() == 3);

  for (const auto& e : report.entries) {
    CAPTURE(e.sigma_low);
    CHECK(e.sigma_eff > e.sigma_low);
    CHECK(e.delta_max == e.sigma_low / report.k_hat);
    CHECK(e.delta_max >= 0.0);
    REQUIRE(e.curve.size() == config.deltas.size());
    CHECK(e.curve[0].delta == 0.0);
    CHECK(e.curve[0].sup_error == e.generalization_error);
    for (std::size_t i = 1; i < e.curve.size(); ++i) {
      if (e.curve[i - 1].delta >= e.delta_max) CHECK(e.curve[i].sup_error >= e.curve[i - 1].sup_error);
    }
    for (const auto& p : e.curve) {
      CHECK(p.envelope == doctest::Approx(report.k_hat * p.delta + e.sigma_eff).epsilon(1e-14));
      CHECK(p.reference_band == doctest::Approx(std::abs(report.k_hat * p.delta - e.sigma_low)).epsilon(1e-14));
    }
    CHECK(e.check_delta == e.delta_max / 2.0);
    CHECK(e.containment >= 0.0);
    CHECK(e.containment <= 1.0);
  }
  // Doubling sigma_low doubles the predicted radius.
  CHECK(report.entries[2].delta_max == 2.0 * report.entries[1].delta_max);

  const nlohmann::json j = lemma_report_to_json(report);
  CHECK(j["entries"].size() == 3);
  CHECK(j["k_hat"].get<double>() == report.k_hat);

  CHECK_THROWS_AS(lemma_config_from_json({{"sigma_low", {0.1}}}), FormatError);
  CHECK(lemma_config_to_json(lemma_config_from_json(lemma_config_to_json(config))).dump() ==
        lemma_config_to_json(config).dump());
  config.sigma_lows = {-0.1};
  CHECK_THROWS_AS(verify_lemma(config), InvalidArgument);
}
