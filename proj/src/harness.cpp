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

#include "safepilco/harness.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "safepilco/errors.hpp"
#include "safepilco/gp.hpp"

namespace safepilco {

namespace {

std::string format_double(double v) {
  char buf[64];
  const auto result = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, result.ptr);
}

void check_keys(const nlohmann::json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw FormatError(where + ": expected an object");
  for (const auto& item : j.items()) {
    if (known.count(item.key()) == 0) throw FormatError(where + ": unknown key '" + item.key() + "'");
  }
}

nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

std::optional<double> json_optional(const nlohmann::json& j) {
  return j.is_null() ? std::nullopt : std::optional<double>(j.get<double>());
}

std::vector<double> as_doubles(const std::vector<int>& v) { return {v.begin(), v.end()}; }

}  // namespace

EvalResult evaluate_policy(const PolicyParams& policy, PendulumEnv& env, int n_runs, int episode_len,
                           const CostModel& cost, const HazardRegion& region) {
  if (n_runs < 1 || episode_len < 1) throw InvalidArgument("evaluate_policy: n_runs and episode_len must be positive");
  if (policy.state_dim() != kPendulumObsDim || policy.action_dim() != kPendulumActionDim) {
    throw DimensionMismatch("evaluate_policy: policy does not match the pendulum");
  }
  EvalResult out;
  const auto controller = [&policy](const VectorXd& x) { return policy_eval(policy, x)(0); };
  for (int r = 0; r < n_runs; ++r) {
    const EpisodeOutcome e = execute_episode(env, controller, episode_len, cost, region);
    out.returns.push_back(e.real_return);
    out.violations.push_back(e.violations);
  }
  return out;
}

EvalResult evaluate_perturbed(const PolicyParams& policy, const TrainConfig& config, double sigma_perturb,
                              int n_runs, int episode_len, std::uint64_t seed) {
  EvalResult out;
  for (int r = 0; r < n_runs; ++r) {
    const auto run = static_cast<std::uint64_t>(r);
    const PendulumParams params = perturb(config.env, {sigma_perturb, derive_seed(seed, {run, 0})});
    PendulumEnv env(params, config.init, derive_seed(seed, {run, 1}));
    const EvalResult one = evaluate_policy(policy, env, 1, episode_len, config.cost(), config.hazard());
    out.returns.push_back(one.returns[0]);
    out.violations.push_back(one.violations[0]);
  }
  return out;
}

EvalResult evaluate_random_policies(const TrainConfig& config, int n_runs, int episode_len, std::uint64_t seed) {
  EvalResult out;
  const GaussianState init = initial_observation_distribution(config.init);
  PendulumEnv env(config.env, config.init, derive_seed(seed, {0}));
  for (int r = 0; r < n_runs; ++r) {
    const PolicyParams policy =
        random_policy(init, kPendulumActionDim, VectorXd::Constant(kPendulumActionDim, config.env.u_max),
                      config.basis_functions, derive_seed(seed, {1, static_cast<std::uint64_t>(r)}));
    const EvalResult one = evaluate_policy(policy, env, 1, episode_len, config.cost(), config.hazard());
    out.returns.push_back(one.returns[0]);
    out.violations.push_back(one.violations[0]);
  }
  return out;
}

double median(std::vector<double> values) {
  if (values.empty()) return std::nan("");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

double standard_deviation(const std::vector<double>& values) {
  if (values.size() < 2) return 0.0;
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / static_cast<double>(values.size() - 1));
}

std::vector<GridVariant> default_grid_variants() {
  return {{"none-nosafety", std::nullopt, false},
          {"none", std::nullopt, true},
          {"0.001", 1e-3, true},
          {"0.01", 1e-2, true},
          {"0.1", 0.1, true},
          {"0.2", 0.2, true}};
}

void GridConfig::validate() const {
  if (variants.empty() || sigma_perturb.empty()) throw InvalidArgument("grid: variants and sigma_perturb must be nonempty");
  if (seeds < 1 || eval_runs < 1 || eval_episode_len < 1) {
    throw InvalidArgument("grid: seeds, eval_runs and eval_episode_len must be positive");
  }
  std::set<std::string> labels;
  for (const auto& v : variants) {
    if (v.label.empty() || v.label.find_first_of(",\n\"") != std::string::npos) {
      throw InvalidArgument("grid: variant labels must be nonempty and free of commas, quotes and newlines");
    }
    if (!labels.insert(v.label).second) throw InvalidArgument("grid: duplicate variant label " + v.label);
    if (v.sigma_low && !(*v.sigma_low >= 0.0)) throw InvalidArgument("grid: sigma_low must be nonnegative");
  }
  for (double s : sigma_perturb) {
    if (!(s >= 0.0)) throw InvalidArgument("grid: sigma_perturb must be nonnegative");
  }
  base.validate();
}

nlohmann::json grid_config_to_json(const GridConfig& c) {
  nlohmann::json variants = nlohmann::json::array();
  for (const auto& v : c.variants) {
    variants.push_back({{"label", v.label}, {"sigma_low", optional_json(v.sigma_low)}, {"constrained", v.constrained}});
  }
  return {{"train", config_to_json(c.base)},
          {"variants", variants},
          {"sigma_perturb", c.sigma_perturb},
          {"seeds", c.seeds},
          {"master_seed", c.master_seed},
          {"eval_runs", c.eval_runs},
          {"eval_episode_len", c.eval_episode_len}};
}

GridConfig grid_config_from_json(const nlohmann::json& j) {
  check_keys(j, {"train", "variants", "sigma_perturb", "seeds", "master_seed", "eval_runs", "eval_episode_len"}, "grid");
  GridConfig c;
  try {
    if (j.contains("train")) c.base = config_from_json(j["train"]);
    if (j.contains("variants")) {
      c.variants.clear();
      for (const auto& v : j["variants"]) {
        check_keys(v, {"label", "sigma_low", "constrained"}, "grid.variants");
        GridVariant gv;
        gv.sigma_low = v.contains("sigma_low") ? json_optional(v["sigma_low"]) : std::nullopt;
        gv.constrained = v.value("constrained", true);
        gv.label = v.contains("label") ? v["label"].get<std::string>()
                                       : (gv.sigma_low ? format_double(*gv.sigma_low) : std::string("none")) +
                                             (gv.constrained ? "" : "-nosafety");
        c.variants.push_back(gv);
      }
    }
    c.sigma_perturb = j.value("sigma_perturb", c.sigma_perturb);
    c.seeds = j.value("seeds", c.seeds);
    c.master_seed = j.value("master_seed", c.master_seed);
    c.eval_runs = j.value("eval_runs", c.eval_runs);
    c.eval_episode_len = j.value("eval_episode_len", c.eval_episode_len);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("grid: ") + e.what());
  }
  c.validate();
  return c;
}

void aggregate(CellReport& cell) {
  std::vector<double> medians;
  std::vector<double> violation_medians;
  cell.failures = 0;
  for (auto& s : cell.seeds) {
    if (!s.ok) {
      ++cell.failures;
      continue;
    }
    s.median_return = median(s.returns);
    s.std_return = standard_deviation(s.returns);
    s.median_violations = median(as_doubles(s.violations));
    s.std_violations = standard_deviation(as_doubles(s.violations));
    medians.push_back(s.median_return);
    violation_medians.push_back(s.median_violations);
  }
  if (medians.empty()) {
    cell.median_return = cell.std_return = cell.median_violations = cell.std_violations = std::nan("");
    return;
  }
  cell.median_return = median(medians);
  cell.std_return = standard_deviation(medians);
  cell.median_violations = median(violation_medians);
  cell.std_violations = standard_deviation(violation_medians);
}

EvalReport grid_experiment(const GridConfig& config, const std::function<void(const std::string&)>& progress,
                           const TrainedHook& on_trained) {
  config.validate();
  EvalReport report;
  for (const auto& v : config.variants) {
    for (double sp : config.sigma_perturb) {
      CellReport cell;
      cell.variant = v.label;
      cell.sigma_low = v.sigma_low;
      cell.constrained = v.constrained;
      cell.sigma_perturb = sp;
      report.cells.push_back(cell);
    }
  }
  const std::size_t np = config.sigma_perturb.size();
  for (std::size_t vi = 0; vi < config.variants.size(); ++vi) {
    const GridVariant& v = config.variants[vi];
    for (int s = 0; s < config.seeds; ++s) {
      const auto seed_index = static_cast<std::uint64_t>(s);
      TrainConfig tc = config.base;
      tc.sigma_low = v.sigma_low;
      tc.constrained = v.constrained;
      // Variants share the training seed of a seed index (paired comparison).
      tc.seed = derive_seed(config.master_seed, {0, seed_index});
      std::optional<PolicyParams> policy;
      std::string error;
      try {
        const RunState run = train(tc);
        if (on_trained) on_trained(v, s, run);
        policy = run.lagrangian.policy;
      } catch (const Error& e) {
        error = e.what();
      }
      for (std::size_t pi = 0; pi < np; ++pi) {
        SeedResult r;
        r.seed_index = s;
        r.train_seed = tc.seed;
        if (policy) {
          try {
            const EvalResult e =
                evaluate_perturbed(*policy, tc, config.sigma_perturb[pi], config.eval_runs, config.eval_episode_len,
                                   derive_seed(config.master_seed, {1, seed_index, static_cast<std::uint64_t>(pi)}));
            r.returns = e.returns;
            r.violations = e.violations;
          } catch (const Error& e) {
            r.ok = false;
            r.error = e.what();
          }
        } else {
          r.ok = false;
          r.error = error;
        }
        report.cells[vi * np + pi].seeds.push_back(std::move(r));
      }
      if (progress) progress("variant " + v.label + " seed " + std::to_string(s) + (policy ? " done" : " failed: " + error));
    }
  }
  for (auto& cell : report.cells) aggregate(cell);
  return report;
}

nlohmann::json report_to_json(const EvalReport& report) {
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : report.cells) {
    nlohmann::json seeds = nlohmann::json::array();
    for (const auto& s : c.seeds) {
      seeds.push_back({{"seed_index", s.seed_index},
                       {"train_seed", s.train_seed},
                       {"ok", s.ok},
                       {"error", s.error},
                       {"returns", s.returns},
                       {"violations", s.violations},
                       {"median_return", s.median_return},
                       {"std_return", s.std_return},
                       {"median_violations", s.median_violations},
                       {"std_violations", s.std_violations}});
    }
    cells.push_back({{"variant", c.variant},
                     {"sigma_low", optional_json(c.sigma_low)},
                     {"constrained", c.constrained},
                     {"sigma_perturb", c.sigma_perturb},
                     {"seeds", seeds},
                     {"median_return", c.median_return},
                     {"std_return", c.std_return},
                     {"median_violations", c.median_violations},
                     {"std_violations", c.std_violations},
                     {"failures", c.failures}});
  }
  return {{"cells", cells}};
}

EvalReport report_from_json(const nlohmann::json& j) {
  EvalReport report;
  try {
    for (const auto& cj : j.at("cells")) {
      CellReport c;
      c.variant = cj.at("variant").get<std::string>();
      c.sigma_low = json_optional(cj.at("sigma_low"));
      c.constrained = cj.at("constrained").get<bool>();
      c.sigma_perturb = cj.at("sigma_perturb").get<double>();
      for (const auto& sj : cj.at("seeds")) {
        SeedResult s;
        s.seed_index = sj.at("seed_index").get<int>();
        s.train_seed = sj.at("train_seed").get<std::uint64_t>();
        s.ok = sj.at("ok").get<bool>();
        s.error = sj.at("error").get<std::string>();
        s.returns = sj.at("returns").get<std::vector<double>>();
        s.violations = sj.at("violations").get<std::vector<int>>();
        c.seeds.push_back(std::move(s));
      }
      aggregate(c);
      report.cells.push_back(std::move(c));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("report: ") + e.what());
  }
  return report;
}

std::string report_csv(const EvalReport& report) {
  std::ostringstream out;
  out << "variant,sigma_low,constrained,sigma_perturb,seeds,failures,median_return,std_return,median_violations,"
         "std_violations\n";
  for (const auto& c : report.cells) {
    out << c.variant << ',' << (c.sigma_low ? format_double(*c.sigma_low) : "none") << ','
        << (c.constrained ? "true" : "false") << ',' << format_double(c.sigma_perturb) << ',' << c.seeds.size()
        << ',' << c.failures << ',' << format_double(c.median_return) << ',' << format_double(c.std_return) << ','
        << format_double(c.median_violations) << ',' << format_double(c.std_violations) << '\n';
  }
  return out.str();
}

std::string plot_data_csv(const EvalReport& report) {
  std::ostringstream out;
  out << kPlotDataHeader << '\n';
  for (const auto& c : report.cells) {
    for (const auto& s : c.seeds) {
      if (!s.ok) continue;
      for (std::size_t r = 0; r < s.returns.size(); ++r) {
        out << c.variant << ',' << format_double(c.sigma_perturb) << ',' << s.seed_index << ',' << r << ','
            << format_double(s.returns[r]) << ',' << s.violations[r] << '\n';
      }
    }
  }
  return out.str();
}

std::vector<PlotRow> parse_plot_data(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line) || line != kPlotDataHeader) throw FormatError("plot data: unexpected header");
  std::vector<PlotRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (f.size() != 6) throw FormatError("plot data: expected 6 fields in '" + line + "'");
    try {
      rows.push_back({f[0], std::stod(f[1]), std::stoi(f[2]), std::stoi(f[3]), std::stod(f[4]), std::stoi(f[5])});
    } catch (const std::exception&) {
      throw FormatError("plot data: bad number in '" + line + "'");
    }
  }
  return rows;
}

void emit_plot_data(const EvalReport& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IOError("cannot write " + path.string());
  out << plot_data_csv(report);
  if (!out) throw IOError("failed writing " + path.string());
}

void LemmaConfig::validate() const {
  if (sigma_lows.empty() || deltas.empty()) throw InvalidArgument("lemma: sigma_lows and deltas must be nonempty");
  for (double s : sigma_lows) {
    if (!(s >= 0.0)) throw InvalidArgument("lemma: sigma_low must be nonnegative");
  }
  if (n_train < 2 || n_test < 2 || lipschitz_samples < 100 || !(data_noise_std >= 0.0)) {
    throw InvalidArgument("lemma: invalid sample sizes or noise");
  }
}

nlohmann::json lemma_config_to_json(const LemmaConfig& c) {
  return {{"sigma_lows", c.sigma_lows}, {"deltas", c.deltas},     {"phi0", c.phi0},
          {"n_train", c.n_train},       {"n_test", c.n_test},     {"data_noise_std", c.data_noise_std},
          {"lipschitz_samples", c.lipschitz_samples},             {"seed", c.seed}};
}

LemmaConfig lemma_config_from_json(const nlohmann::json& j) {
  check_keys(j, {"sigma_lows", "deltas", "phi0", "n_train", "n_test", "data_noise_std", "lipschitz_samples", "seed"},
             "lemma");
  LemmaConfig c;
  try {
    c.sigma_lows = j.value("sigma_lows", c.sigma_lows);
    c.deltas = j.value("deltas", c.deltas);
    c.phi0 = j.value("phi0", c.phi0);
    c.n_train = j.value("n_train", c.n_train);
    c.n_test = j.value("n_test", c.n_test);
    c.data_noise_std = j.value("data_noise_std", c.data_noise_std);
    c.lipschitz_samples = j.value("lipschitz_samples", c.lipschitz_samples);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("lemma: ") + e.what());
  }
  c.validate();
  return c;
}

LemmaReport verify_lemma(const LemmaConfig& config) {
  config.validate();
  LemmaReport report;
  double radius = 0.0;
  for (double d : config.deltas) radius = std::max(radius, std::abs(d));
  for (double s : config.sigma_lows) radius = std::max(radius, s);
  report.lipschitz = estimate_lipschitz(synthetic_1d_system(), VectorXd::Constant(1, config.phi0), radius,
                                        config.lipschitz_samples, derive_seed(config.seed, {0}), true);
  report.k_hat = report.lipschitz.k;

  std::mt19937_64 rng(derive_seed(config.seed, {1}));
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);
  MatrixXd x(config.n_train, 1);
  MatrixXd y(config.n_train, 1);
  for (int i = 0; i < config.n_train; ++i) {
    x(i, 0) = unif(rng);
    y(i, 0) = synthetic_1d_step(config.phi0, x(i, 0)) + config.data_noise_std * noise(rng);
  }
  const TransitionDataset data(x, y, 1);
  std::vector<double> grid(static_cast<std::size_t>(config.n_test));
  for (int i = 0; i < config.n_test; ++i) grid[static_cast<std::size_t>(i)] = -1.0 + 2.0 * i / (config.n_test - 1);

  for (double sigma_low : config.sigma_lows) {
    const GPModel model = fit(data, sigma_low, FitOptions{});
    std::vector<double> pred;
    for (double g : grid) pred.push_back(model.predict_dimension(0, VectorXd::Constant(1, g)).first);
    auto sup_error = [&](double delta) {
      double e = 0.0;
      for (std::size_t i = 0; i < grid.size(); ++i) {
        e = std::max(e, std::abs(pred[i] - synthetic_1d_step(config.phi0 + delta, grid[i])));
      }
      return e;
    };
    LemmaEntry entry;
    entry.sigma_low = sigma_low;
    entry.sigma_eff = model.hyper()[0].noise_std();
    const double k = report.k_hat;
    entry.delta_max = k > 0.0 ? sigma_low / k : std::numeric_limits<double>::infinity();
    int inside = 0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
      if (std::abs(pred[i] - synthetic_1d_step(config.phi0, grid[i])) <= entry.sigma_eff) ++inside;
    }
    entry.containment = static_cast<double>(inside) / static_cast<double>(grid.size());
    entry.contained = entry.containment >= 0.95;
    entry.generalization_error = sup_error(0.0);
    for (double d : config.deltas) {
      entry.curve.push_back({d, sup_error(d), k * std::abs(d) + entry.sigma_eff, std::abs(k * std::abs(d) - sigma_low)});
    }
    entry.check_delta = k > 0.0 ? sigma_low / (2.0 * k) : 0.0;
    entry.check_error = sup_error(entry.check_delta);
    entry.check_envelope = k * entry.check_delta + 2.0 * entry.sigma_eff;
    entry.check_passed = entry.check_error < entry.check_envelope;
    report.entries.push_back(std::move(entry));
  }
  return report;
}

nlohmann::json lemma_report_to_json(const LemmaReport& report) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : report.entries) {
    nlohmann::json curve = nlohmann::json::array();
    for (const auto& p : e.curve) {
      curve.push_back({{"delta", p.delta}, {"sup_error", p.sup_error}, {"envelope", p.envelope}, {"reference_band", p.reference_band}});
    }
    entries.push_back({{"sigma_low", e.sigma_low},
                       {"sigma_eff", e.sigma_eff},
                       {"delta_max", e.delta_max},
                       {"containment", e.containment},
                       {"contained", e.contained},
                       {"generalization_error", e.generalization_error},
                       {"curve", curve},
                       {"check_delta", e.check_delta},
                       {"check_error", e.check_error},
                       {"check_envelope", e.check_envelope},
                       {"check_passed", e.check_passed}});
  }
  const auto& w = report.lipschitz;
  return {{"k_hat", report.k_hat},
          {"lipschitz_samples", w.samples},
          {"witness", {{"x", std::vector<double>(w.witness_x.data(), w.witness_x.data() + w.witness_x.size())},
                       {"phi", std::vector<double>(w.witness_phi.data(), w.witness_phi.data() + w.witness_phi.size())},
                       {"delta", std::vector<double>(w.witness_delta.data(), w.witness_delta.data() + w.witness_delta.size())}}},
          {"entries", entries}};
}

}  // namespace safepilco
