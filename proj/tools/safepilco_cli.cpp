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

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "safepilco/errors.hpp"
#include "safepilco/harness.hpp"
#include "safepilco/training.hpp"

namespace fs = std::filesystem;
using namespace safepilco;

namespace {

/// Raised for unreadable or invalid configuration files (exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string read_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IOError("cannot read " + path.string());
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IOError("cannot write " + path.string());
  out << text;
  if (!out) throw IOError("failed writing " + path.string());
}

template <typename T, typename Parse>
T load_config(const fs::path& path, Parse parse) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const IOError& e) {
    throw ConfigError(e.what());
  }
  try {
    return parse(nlohmann::json::parse(text));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  } catch (const FormatError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  } catch (const InvalidArgument& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

nlohmann::json eval_json(const EvalResult& r) {
  std::vector<double> violations(r.violations.begin(), r.violations.end());
  return {{"returns", r.returns},
          {"violations", r.violations},
          {"median_return", median(r.returns)},
          {"std_return", standard_deviation(r.returns)},
          {"median_violations", median(violations)},
          {"std_violations", standard_deviation(violations)}};
}

int cmd_train(const fs::path& config_path, const fs::path& out, const std::string& resume, bool quiet) {
  RunState run;
  if (resume.empty()) {
    run = start_run(load_config<TrainConfig>(config_path, config_from_json));
  } else {
    run = load_checkpoint(resume);
  }
  fs::create_directories(out / "checkpoints");
  write_file(out / "config.json", config_to_json(run.config).dump(2) + "\n");
  std::ofstream log(out / "log.jsonl", resume.empty() ? std::ios::trunc : std::ios::app);
  if (!log) throw IOError("cannot write " + (out / "log.jsonl").string());
  while (run.episode < run.config.episodes) {
    const EpisodeLog& entry = run_episode(run);
    log << episode_log_to_json(entry).dump() << "\n" << std::flush;
    char name[32];
    std::snprintf(name, sizeof(name), "episode_%03d.json", entry.episode);
    save_checkpoint(run, out / "checkpoints" / name);
    if (!quiet) {
      std::cerr << "episode " << entry.episode << " return " << entry.real_return << " violations "
                << entry.violations << " lambda " << entry.lambda << "\n";
    }
  }
  save_checkpoint(run, out / "checkpoints" / "final.json");
  return 0;
}

int cmd_eval(const fs::path& checkpoint, double sigma, int runs, int episode_len, std::uint64_t seed) {
  const RunState run = load_checkpoint(checkpoint);
  const int len = episode_len > 0 ? episode_len : run.config.horizon;
  const EvalResult r = evaluate_perturbed(run.lagrangian.policy, run.config, sigma, runs, len, seed);
  nlohmann::json j = eval_json(r);
  j["sigma_perturb"] = sigma;
  j["episode_len"] = len;
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_grid(const fs::path& config_path, const fs::path& out, bool quiet) {
  const GridConfig config = load_config<GridConfig>(config_path, grid_config_from_json);
  fs::create_directories(out);
  write_file(out / "config.json", grid_config_to_json(config).dump(2) + "\n");
  std::ofstream log(out / "log.jsonl");
  if (!log) throw IOError("cannot write " + (out / "log.jsonl").string());
  const EvalReport report = grid_experiment(config, [&](const std::string& message) {
    log << nlohmann::json({{"progress", message}}).dump() << "\n" << std::flush;
    if (!quiet) std::cerr << message << "\n";
  });
  write_file(out / "report.json", report_to_json(report).dump(2) + "\n");
  write_file(out / "report.csv", report_csv(report));
  emit_plot_data(report, out / "plot_data.csv");
  if (!quiet) std::cout << report_csv(report);
  return 0;
}

int cmd_lemma(const fs::path& config_path, const std::string& out) {
  const LemmaConfig config = load_config<LemmaConfig>(config_path, lemma_config_from_json);
  const LemmaReport report = verify_lemma(config);
  const std::string text = lemma_report_to_json(report).dump(2) + "\n";
  if (out.empty()) {
    std::cout << text;
  } else {
    write_file(out, text);
  }
  return 0;
}

int cmd_plot(const fs::path& report_path, const std::string& out) {
  EvalReport report;
  try {
    report = report_from_json(nlohmann::json::parse(read_file(report_path)));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(report_path.string() + ": " + e.what());
  }
  const fs::path target = out.empty() ? report_path.parent_path() / "plot_data.csv" : fs::path(out);
  emit_plot_data(report, target);
  std::cout << target.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Safe model-based policy search with a GP noise lower bound"};
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Suppress progress output");

  std::string config;
  std::string out;
  std::string resume;
  std::string checkpoint;
  std::string report;
  double sigma = 0.0;
  int runs = 10;
  int episode_len = 0;
  std::uint64_t seed = 0;

  auto* train = app.add_subcommand("train", "Train a policy on the nominal pendulum");
  train->add_option("--config", config, "Training config JSON")->check(CLI::ExistingFile);
  train->add_option("--out", out, "Run directory")->required();
  train->add_option("--resume", resume, "Continue from a checkpoint instead of a config")->check(CLI::ExistingFile);

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpointed policy on perturbed pendulums");
  eval->add_option("--checkpoint", checkpoint, "Checkpoint JSON")->required()->check(CLI::ExistingFile);
  eval->add_option("--sigma-perturb", sigma, "Perturbation scale")->check(CLI::NonNegativeNumber);
  eval->add_option("--runs", runs, "Evaluation runs")->check(CLI::PositiveNumber);
  eval->add_option("--episode-len", episode_len, "Episode length (default: training horizon)");
  eval->add_option("--seed", seed, "Evaluation seed");

  auto* grid = app.add_subcommand("grid", "Train and evaluate over the sigma_low x sigma_perturb grid");
  grid->add_option("--config", config, "Grid config JSON")->required()->check(CLI::ExistingFile);
  grid->add_option("--out", out, "Run directory")->required();

  auto* lemma = app.add_subcommand("verify-lemma", "Check the generalization radius on the synthetic system");
  lemma->add_option("--config", config, "Lemma config JSON")->required()->check(CLI::ExistingFile);
  lemma->add_option("--out", out, "Write the report here instead of stdout");

  auto* plot = app.add_subcommand("emit-plot-data", "Write long-format CSV from a grid report");
  plot->add_option("--report", report, "report.json")->required()->check(CLI::ExistingFile);
  plot->add_option("--out", out, "Output CSV (default: plot_data.csv next to the report)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*train) {
      if (config.empty() == resume.empty()) throw ConfigError("train: give exactly one of --config or --resume");
      return cmd_train(config, out, resume, quiet);
    }
    if (*eval) return cmd_eval(checkpoint, sigma, runs, episode_len, seed);
    if (*grid) return cmd_grid(config, out, quiet);
    if (*lemma) return cmd_lemma(config, out);
    if (*plot) return cmd_plot(report, out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
