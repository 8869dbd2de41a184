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

#include "safepilco/training.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "safepilco/errors.hpp"

namespace safepilco {

namespace {

nlohmann::json vector_json(const VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

VectorXd json_vector(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

nlohmann::json matrix_json(const MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) rows.push_back(vector_json(m.row(r).transpose()));
  return rows;
}

MatrixXd json_matrix(const nlohmann::json& j, Eigen::Index cols) {
  MatrixXd m(static_cast<Eigen::Index>(j.size()), cols);
  for (std::size_t r = 0; r < j.size(); ++r) {
    const VectorXd row = json_vector(j[r]);
    if (row.size() != cols) throw FormatError("checkpoint: ragged matrix row");
    m.row(static_cast<Eigen::Index>(r)) = row.transpose();
  }
  return m;
}

template <typename Engine>
std::string engine_text(const Engine& e) {
  std::ostringstream out;
  out << e;
  return out.str();
}

template <typename Engine>
Engine engine_from_text(const std::string& text) {
  Engine e;
  std::istringstream in(text);
  in >> e;
  if (in.fail()) throw FormatError("checkpoint: bad RNG state");
  return e;
}

void check_keys(const nlohmann::json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw FormatError(where + ": expected an object");
  for (const auto& item : j.items()) {
    if (known.count(item.key()) == 0) throw FormatError(where + ": unknown key '" + item.key() + "'");
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (episodes < 1 || horizon < 1 || epochs_per_episode < 0) {
    throw InvalidArgument("TrainConfig: episodes and horizon must be positive");
  }
  if (!(learning_rate > 0.0) || !(dual_learning_rate > 0.0) || !(gp_learning_rate > 0.0)) {
    throw InvalidArgument("TrainConfig: learning rates must be positive");
  }
  if (!(xi >= 0.0) || !(lambda0 >= 0.0)) throw InvalidArgument("TrainConfig: xi and lambda0 must be nonnegative");
  if (sigma_low && !(*sigma_low >= 0.0)) throw InvalidArgument("TrainConfig: sigma_low must be nonnegative");
  if (basis_functions < 1 || gp_max_inducing < 1 || gp_epochs < 0) {
    throw InvalidArgument("TrainConfig: basis_functions, gp_max_inducing must be positive");
  }
  if (!(cost_width > 0.0)) throw InvalidArgument("TrainConfig: cost_width must be positive");
  if (!(hazard_lo < hazard_hi)) throw InvalidArgument("TrainConfig: hazard_lo must be below hazard_hi");
  if (!(init.theta_std >= 0.0) || !(init.velocity_std >= 0.0)) {
    throw InvalidArgument("TrainConfig: initial-state deviations must be nonnegative");
  }
  env.validate();
}

HazardRegion TrainConfig::hazard() const {
  HazardRegion r = pendulum_hazard();
  r.lo = hazard_lo;
  r.hi = hazard_hi;
  return r;
}

FitOptions TrainConfig::fit_options() const {
  FitOptions o;
  o.max_inducing = gp_max_inducing;
  o.epochs = gp_epochs;
  o.learning_rate = gp_learning_rate;
  o.noise_in_prediction = noise_in_prediction;
  return o;
}

nlohmann::json config_to_json(const TrainConfig& c) {
  nlohmann::json j;
  j["episodes"] = c.episodes;
  j["horizon"] = c.horizon;
  j["epochs_per_episode"] = c.epochs_per_episode;
  j["optimizer"] = "adam";
  j["learning_rate"] = c.learning_rate;
  j["dual_learning_rate"] = c.dual_learning_rate;
  j["xi"] = c.xi;
  j["lambda0"] = c.lambda0;
  j["sigma_low"] = c.sigma_low ? nlohmann::json(*c.sigma_low) : nlohmann::json(nullptr);
  j["constrained"] = c.constrained;
  j["basis_functions"] = c.basis_functions;
  j["gp_max_inducing"] = c.gp_max_inducing;
  j["gp_epochs"] = c.gp_epochs;
  j["gp_learning_rate"] = c.gp_learning_rate;
  j["noise_in_prediction"] = c.noise_in_prediction;
  j["cost_width"] = c.cost_width;
  j["hazard_lo"] = c.hazard_lo;
  j["hazard_hi"] = c.hazard_hi;
  j["env"] = pendulum_params_to_json(c.env);
  j["init"] = {{"theta_mean", c.init.theta_mean},
               {"theta_std", c.init.theta_std},
               {"velocity_std", c.init.velocity_std}};
  j["seed"] = c.seed;
  return j;
}

TrainConfig config_from_json(const nlohmann::json& j) {
  check_keys(j,
             {"episodes", "horizon", "epochs_per_episode", "optimizer", "learning_rate", "dual_learning_rate",
              "xi", "lambda0", "sigma_low", "constrained", "basis_functions", "gp_max_inducing", "gp_epochs",
              "gp_learning_rate", "noise_in_prediction", "cost_width", "hazard_lo", "hazard_hi", "env", "init",
              "seed"},
             "config");
  TrainConfig c;
  try {
    c.episodes = j.value("episodes", c.episodes);
    c.horizon = j.value("horizon", c.horizon);
    c.epochs_per_episode = j.value("epochs_per_episode", c.epochs_per_episode);
    if (j.value("optimizer", std::string("adam")) != "adam") throw FormatError("config: optimizer must be 'adam'");
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.dual_learning_rate = j.value("dual_learning_rate", c.dual_learning_rate);
    c.xi = j.value("xi", c.xi);
    c.lambda0 = j.value("lambda0", c.lambda0);
    if (j.contains("sigma_low")) {
      c.sigma_low = j["sigma_low"].is_null() ? std::nullopt : std::optional<double>(j["sigma_low"].get<double>());
    }
    c.constrained = j.value("constrained", c.constrained);
    c.basis_functions = j.value("basis_functions", c.basis_functions);
    c.gp_max_inducing = j.value("gp_max_inducing", c.gp_max_inducing);
    c.gp_epochs = j.value("gp_epochs", c.gp_epochs);
    c.gp_learning_rate = j.value("gp_learning_rate", c.gp_learning_rate);
    c.noise_in_prediction = j.value("noise_in_prediction", c.noise_in_prediction);
    c.cost_width = j.value("cost_width", c.cost_width);
    c.hazard_lo = j.value("hazard_lo", c.hazard_lo);
    c.hazard_hi = j.value("hazard_hi", c.hazard_hi);
    if (j.contains("env")) {
      check_keys(j["env"], {"mass", "length", "gravity", "dt", "u_max", "max_speed", "obs_noise_std"}, "config.env");
      c.env = pendulum_params_from_json(j["env"]);
    }
    if (j.contains("init")) {
      const auto& i = j["init"];
      check_keys(i, {"theta_mean", "theta_std", "velocity_std"}, "config.init");
      c.init.theta_mean = i.value("theta_mean", c.init.theta_mean);
      c.init.theta_std = i.value("theta_std", c.init.theta_std);
      c.init.velocity_std = i.value("velocity_std", c.init.velocity_std);
    }
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> path) {
  std::vector<std::uint32_t> words{static_cast<std::uint32_t>(master), static_cast<std::uint32_t>(master >> 32)};
  for (const std::uint64_t p : path) {
    words.push_back(static_cast<std::uint32_t>(p));
    words.push_back(static_cast<std::uint32_t>(p >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[1]) << 32) | out[0];
}

void primal_dual_update(VectorXd& theta, double& lambda, Adam& optimizer, const VectorXd& grad, double risk,
                        double xi, double lr_lambda) {
  if (!(lambda >= 0.0)) throw InvalidArgument("primal_dual_update: lambda must be nonnegative");
  if (!all_finite(grad) || !std::isfinite(risk)) throw NonFinite("primal_dual_update: non-finite gradient or risk");
  VectorXd next = optimizer.step(theta, grad);
  const double next_lambda = std::max(0.0, lambda + lr_lambda * (risk - xi));
  if (!all_finite(next) || !std::isfinite(next_lambda)) throw NonFinite("primal_dual_update: non-finite update");
  theta = std::move(next);
  lambda = next_lambda;
}

LagrangianState primal_dual_step(const LagrangianState& state, const VectorXd& grad, double risk,
                                 double lr_lambda) {
  LagrangianState out = state;
  VectorXd theta = flatten(state.policy);
  primal_dual_update(theta, out.lambda, out.optimizer, grad, risk, state.xi, lr_lambda);
  out.policy = unflatten(theta, state.policy);
  ++out.steps;
  return out;
}

EpisodeOutcome execute_episode(PendulumEnv& env, const std::function<double(const VectorXd&)>& controller,
                               int horizon, const CostModel& cost, const HazardRegion& region) {
  EpisodeOutcome out;
  VectorXd obs = env.reset();
  for (int t = 0; t < horizon; ++t) {
    const double u = std::clamp(controller(obs), -env.params().u_max, env.params().u_max);
    const VectorXd next = env.step(u);
    out.transitions.add(obs, VectorXd::Constant(1, u), next);
    const VectorXd truth = encode_observation(env.state());
    out.real_return -= cost_at(cost, truth);
    if (hazard_contains(region, truth)) ++out.violations;
    obs = next;
  }
  return out;
}

nlohmann::json episode_log_to_json(const EpisodeLog& log) {
  return {{"episode", log.episode},
          {"random_actions", log.random_actions},
          {"real_return", log.real_return},
          {"violations", log.violations},
          {"dataset_size", log.dataset_size},
          {"noise_std", log.noise_std},
          {"predicted_cost", log.predicted_cost},
          {"predicted_risk", log.predicted_risk},
          {"lambda", log.lambda},
          {"lambda_trace", log.lambda_trace}};
}

EpisodeLog episode_log_from_json(const nlohmann::json& j) {
  EpisodeLog log;
  log.episode = j.at("episode").get<int>();
  log.random_actions = j.at("random_actions").get<bool>();
  log.real_return = j.at("real_return").get<double>();
  log.violations = j.at("violations").get<int>();
  log.dataset_size = j.at("dataset_size").get<long>();
  log.noise_std = j.at("noise_std").get<std::vector<double>>();
  log.predicted_cost = j.at("predicted_cost").get<double>();
  log.predicted_risk = j.at("predicted_risk").get<double>();
  log.lambda = j.at("lambda").get<double>();
  log.lambda_trace = j.at("lambda_trace").get<std::vector<double>>();
  return log;
}

RolloutSetup rollout_setup(const TrainConfig& config) {
  return {initial_observation_distribution(config.init), config.horizon, config.cost(), config.hazard()};
}

RunState start_run(const TrainConfig& config) {
  config.validate();
  RunState run;
  run.config = config;
  run.env = PendulumEnv(config.env, config.init, derive_seed(config.seed, {1}));
  run.explore_rng.seed(derive_seed(config.seed, {2}));
  run.lagrangian.policy = random_policy(initial_observation_distribution(config.init), kPendulumActionDim,
                                        VectorXd::Constant(kPendulumActionDim, config.env.u_max),
                                        config.basis_functions, derive_seed(config.seed, {3}));
  run.lagrangian.lambda = config.constrained ? config.lambda0 : 0.0;
  run.lagrangian.xi = config.xi;
  run.lagrangian.optimizer = Adam(parameter_count(run.lagrangian.policy), config.learning_rate);
  return run;
}

const EpisodeLog& run_episode(RunState& run) {
  const TrainConfig& cfg = run.config;
  EpisodeLog log;
  log.episode = run.episode;
  try {
    log.random_actions = run.episode == 0;
    std::function<double(const VectorXd&)> controller;
    if (log.random_actions) {
      controller = [&run, u_max = cfg.env.u_max](const VectorXd&) {
        return std::uniform_real_distribution<double>(-u_max, u_max)(run.explore_rng);
      };
    } else {
      controller = [&policy = run.lagrangian.policy](const VectorXd& x) { return policy_eval(policy, x)(0); };
    }
    EpisodeOutcome outcome = execute_episode(run.env, controller, cfg.horizon, cfg.cost(), cfg.hazard());
    log.real_return = outcome.real_return;
    log.violations = outcome.violations;
    run.data.append(outcome.transitions);
    log.dataset_size = run.data.size();

    run.model = fit(run.data, cfg.noise_bound(), cfg.fit_options(), run.model ? &*run.model : nullptr);
    for (const auto& h : run.model->hyper()) log.noise_std.push_back(h.noise_std());

    const RolloutSetup setup = rollout_setup(cfg);
    for (int epoch = 0; epoch < cfg.epochs_per_episode; ++epoch) {
      const LagrangianGradient g =
          policy_gradient(*run.model, run.lagrangian.policy, run.lagrangian.lambda, run.lagrangian.xi, setup);
      log.predicted_cost = g.cost_to_go;
      log.predicted_risk = g.risk_to_go;
      if (cfg.constrained) {
        run.lagrangian = primal_dual_step(run.lagrangian, g.gradient, g.risk_to_go, cfg.dual_learning_rate);
      } else {
        // lambda stays at zero: only the primal half of the step.
        VectorXd theta = flatten(run.lagrangian.policy);
        double lambda = 0.0;
        primal_dual_update(theta, lambda, run.lagrangian.optimizer, g.gradient, 0.0, 0.0, 0.0);
        run.lagrangian.policy = unflatten(theta, run.lagrangian.policy);
        ++run.lagrangian.steps;
      }
      log.lambda_trace.push_back(run.lagrangian.lambda);
    }
    log.lambda = run.lagrangian.lambda;
  } catch (const Error& e) {
    rethrow_with_context(e, "episode " + std::to_string(run.episode));
  }
  ++run.episode;
  run.logs.push_back(std::move(log));
  return run.logs.back();
}

RunState train(const TrainConfig& config, const std::function<void(const RunState&, const EpisodeLog&)>& on_episode) {
  RunState run = start_run(config);
  while (run.episode < config.episodes) {
    const EpisodeLog& log = run_episode(run);
    if (on_episode) on_episode(run, log);
  }
  return run;
}

nlohmann::json checkpoint_to_json(const RunState& run) {
  nlohmann::json j;
  j["format_version"] = kCheckpointFormatVersion;
  j["config"] = config_to_json(run.config);
  j["episode"] = run.episode;
  j["data"] = {{"inputs", matrix_json(run.data.inputs())}, {"targets", matrix_json(run.data.targets())}};
  j["model"] = run.model ? model_to_json(*run.model) : nlohmann::json(nullptr);
  const Adam& opt = run.lagrangian.optimizer;
  j["lagrangian"] = {{"policy", policy_to_json(run.lagrangian.policy)},
                     {"lambda", run.lagrangian.lambda},
                     {"xi", run.lagrangian.xi},
                     {"steps", run.lagrangian.steps},
                     {"adam", {{"learning_rate", opt.learning_rate()},
                               {"steps", opt.steps()},
                               {"first_moment", vector_json(opt.first_moment())},
                               {"second_moment", vector_json(opt.second_moment())}}}};
  j["env"] = {{"params", pendulum_params_to_json(run.env.params())},
              {"theta", run.env.state().theta},
              {"theta_dot", run.env.state().theta_dot},
              {"rng", engine_text(run.env.rng())}};
  j["explore_rng"] = engine_text(run.explore_rng);
  j["logs"] = nlohmann::json::array();
  for (const auto& log : run.logs) j["logs"].push_back(episode_log_to_json(log));
  return j;
}

RunState checkpoint_from_json(const nlohmann::json& j) {
  try {
    const int version = j.at("format_version").get<int>();
    if (version != kCheckpointFormatVersion) {
      throw VersionError("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                         std::to_string(kCheckpointFormatVersion) + ")");
    }
    RunState run;
    run.config = config_from_json(j.at("config"));
    run.episode = j.at("episode").get<int>();
    const auto& data = j.at("data");
    const MatrixXd inputs = json_matrix(data.at("inputs"), kPendulumObsDim + kPendulumActionDim);
    const MatrixXd targets = json_matrix(data.at("targets"), kPendulumObsDim);
    run.data = inputs.rows() == 0 ? TransitionDataset(kPendulumObsDim, kPendulumActionDim)
                                  : TransitionDataset(inputs, targets, kPendulumObsDim);
    if (!j.at("model").is_null()) run.model = model_from_json(j.at("model"));
    const auto& lag = j.at("lagrangian");
    run.lagrangian.policy = policy_from_json(lag.at("policy"));
    run.lagrangian.lambda = lag.at("lambda").get<double>();
    run.lagrangian.xi = lag.at("xi").get<double>();
    run.lagrangian.steps = lag.at("steps").get<long>();
    const auto& adam = lag.at("adam");
    run.lagrangian.optimizer = Adam(parameter_count(run.lagrangian.policy), adam.at("learning_rate").get<double>());
    run.lagrangian.optimizer.restore(adam.at("steps").get<long>(), json_vector(adam.at("first_moment")),
                                     json_vector(adam.at("second_moment")));
    const auto& env = j.at("env");
    run.env = PendulumEnv(pendulum_params_from_json(env.at("params")), run.config.init, 0);
    run.env.set_state({env.at("theta").get<double>(), env.at("theta_dot").get<double>()});
    run.env.rng() = engine_from_text<std::mt19937_64>(env.at("rng").get<std::string>());
    run.explore_rng = engine_from_text<std::mt19937_64>(j.at("explore_rng").get<std::string>());
    for (const auto& log : j.at("logs")) run.logs.push_back(episode_log_from_json(log));
    return run;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  } catch (const DimensionMismatch& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }
}

void save_checkpoint(const RunState& run, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IOError("cannot write checkpoint " + path.string());
  out << checkpoint_to_json(run).dump() << '\n';
  if (!out) throw IOError("failed writing checkpoint " + path.string());
}

RunState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IOError("cannot read checkpoint " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("checkpoint " + path.string() + ": " + e.what());
  }
  return checkpoint_from_json(j);
}

}  // namespace safepilco
