#include "cmbac/harness/config.hpp"

#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "cmbac/common/errors.hpp"
#include "cmbac/envs/envs.hpp"

namespace cmbac::harness {

namespace {

template <class C, class F>
void visit_fields(C& c, F&& f) {
  f("env", c.env);
  f("noise_sigma", c.noise_sigma);
  f("known_reward", c.known_reward);
  f("variant", c.variant);
  f("seed", c.seed);
  f("epochs", c.epochs);
  f("steps_per_epoch", c.steps_per_epoch);
  f("updates_per_step", c.updates_per_step);
  f("warmup_steps", c.warmup_steps);
  f("model_train_interval", c.model_train_interval);
  f("gamma", c.gamma);
  f("members_per_model", c.members_per_model);
  f("drop", c.drop);
  f("uncertainty_penalty", c.uncertainty_penalty);
  f("mopo_penalty", c.mopo_penalty);
  f("ensemble_size", c.ensemble_size);
  f("elite_count", c.elite_count);
  f("model_hidden", c.model_hidden);
  f("model_activation", c.model_activation);
  f("model_lr", c.model_lr);
  f("model_batch", c.model_batch);
  f("model_train_steps", c.model_train_steps);
  f("model_holdout", c.model_holdout);
  f("model_max_holdout", c.model_max_holdout);
  f("model_bound_penalty", c.model_bound_penalty);
  f("rollouts_per_step", c.rollouts_per_step);
  f("rollout_horizon_start", c.rollout_horizon_start);
  f("rollout_horizon_end", c.rollout_horizon_end);
  f("rollout_epoch_start", c.rollout_epoch_start);
  f("rollout_epoch_end", c.rollout_epoch_end);
  f("model_retain_epochs", c.model_retain_epochs);
  f("critic_hidden", c.critic_hidden);
  f("critic_hidden_small", c.critic_hidden_small);
  f("critic_activation", c.critic_activation);
  f("critic_lr", c.critic_lr);
  f("tau", c.tau);
  f("policy_hidden", c.policy_hidden);
  f("policy_activation", c.policy_activation);
  f("policy_lr", c.policy_lr);
  f("alpha_init", c.alpha_init);
  f("auto_alpha", c.auto_alpha);
  f("alpha_lr", c.alpha_lr);
  f("target_entropy", c.target_entropy);
  f("batch_size", c.batch_size);
  f("min_model_samples", c.min_model_samples);
  f("env_buffer_capacity", c.env_buffer_capacity);
  f("eval_episodes", c.eval_episodes);
  f("eval_every", c.eval_every);
  f("checkpoint_every", c.checkpoint_every);
  f("diag_points", c.diag_points);
  f("diag_eval_episodes", c.diag_eval_episodes);
  f("mc_horizon", c.mc_horizon);
  f("mc_episodes", c.mc_episodes);
  f("global_horizon", c.global_horizon);
}

void read_value(const std::string& key, const nlohmann::json& v, std::string& out) {
  if (!v.is_string()) throw ConfigError("config key '" + key + "' must be a string");
  out = v.get<std::string>();
}

void read_value(const std::string& key, const nlohmann::json& v, double& out) {
  if (!v.is_number()) throw ConfigError("config key '" + key + "' must be a number");
  out = v.get<double>();
}

void read_value(const std::string& key, const nlohmann::json& v, int& out) {
  if (!v.is_number_integer()) throw ConfigError("config key '" + key + "' must be an integer");
  const auto x = v.get<std::int64_t>();
  if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) {
    throw ConfigError("config key '" + key + "' is out of range");
  }
  out = static_cast<int>(x);
}

void read_value(const std::string& key, const nlohmann::json& v, std::uint64_t& out) {
  if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
    throw ConfigError("config key '" + key + "' must be a non-negative integer");
  }
  out = v.get<std::uint64_t>();
}

void read_value(const std::string& key, const nlohmann::json& v, bool& out) {
  if (!v.is_boolean()) throw ConfigError("config key '" + key + "' must be true or false");
  out = v.get<bool>();
}

void read_value(const std::string& key, const nlohmann::json& v, std::vector<int>& out) {
  if (!v.is_array()) throw ConfigError("config key '" + key + "' must be an array of integers");
  std::vector<int> xs;
  for (const auto& e : v) {
    int x = 0;
    read_value(key, e, x);
    xs.push_back(x);
  }
  out = std::move(xs);
}

void apply(TrainerConfig& c, const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  std::set<std::string> known;
  visit_fields(c, [&](const char* name, auto&) { known.insert(name); });
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw ConfigError("unknown config key '" + key + "'");
  }
  visit_fields(c, [&](const char* name, auto& field) {
    auto it = j.find(name);
    if (it != j.end()) read_value(name, *it, field);
  });
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError("invalid config: " + what);
}

void require_widths(const std::vector<int>& w, const std::string& name) {
  for (int x : w) require(x > 0, name + " entries must be positive");
}

}  // namespace

TrainerConfig config_from_json(const nlohmann::json& j) {
  TrainerConfig c;
  apply(c, j);
  validate(c);
  return c;
}

nlohmann::json config_to_json(const TrainerConfig& c) {
  nlohmann::json j = nlohmann::json::object();
  visit_fields(c, [&](const char* name, const auto& field) { j[name] = field; });
  return j;
}

TrainerConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

TrainerConfig with_overrides(const TrainerConfig& base, const nlohmann::json& overrides) {
  TrainerConfig c = base;
  apply(c, overrides);
  validate(c);
  return c;
}

void validate(const TrainerConfig& c) {
  envs::make_env(c.env, c.noise_sigma);
  require(c.noise_sigma >= 0.0, "noise_sigma must be >= 0");
  require(c.known_reward == "auto" || c.known_reward == "true" || c.known_reward == "false",
          "known_reward must be auto, true or false");
  const auto v = variants::parse_variant(c.variant);
  require(c.epochs >= 1, "epochs must be >= 1");
  require(c.steps_per_epoch >= 1, "steps_per_epoch must be >= 1");
  require(c.updates_per_step >= 0, "updates_per_step must be >= 0");
  require(c.warmup_steps >= 0, "warmup_steps must be >= 0");
  require(c.model_train_interval >= 1, "model_train_interval must be >= 1");
  require(c.gamma >= 0.0 && c.gamma <= 1.0, "gamma must lie in [0, 1]");
  require(c.ensemble_size >= 1, "ensemble_size must be >= 1");
  require(c.elite_count >= 1 && c.elite_count <= c.ensemble_size, "need 1 <= elite_count <= ensemble_size");
  variants::resolve_variant(v, c.elite_count, knobs_of(c));
  require_widths(c.model_hidden, "model_hidden");
  nn::parse_activation(c.model_activation);
  require(c.model_lr > 0.0, "model_lr must be > 0");
  require(c.model_batch >= 1, "model_batch must be >= 1");
  require(c.model_train_steps >= 0, "model_train_steps must be >= 0");
  require(c.model_holdout > 0.0 && c.model_holdout < 1.0, "model_holdout must lie in (0, 1)");
  require(c.model_max_holdout >= 1, "model_max_holdout must be >= 1");
  require(c.model_bound_penalty >= 0.0, "model_bound_penalty must be >= 0");
  require(c.rollouts_per_step >= 0, "rollouts_per_step must be >= 0");
  require(c.rollout_horizon_start >= 1.0 && c.rollout_horizon_end >= 1.0, "rollout horizons must be >= 1");
  require(c.rollout_epoch_start < c.rollout_epoch_end, "rollout_epoch_start must be < rollout_epoch_end");
  require(c.model_retain_epochs >= 1, "model_retain_epochs must be >= 1");
  require_widths(c.critic_hidden, "critic_hidden");
  require_widths(c.critic_hidden_small, "critic_hidden_small");
  nn::parse_activation(c.critic_activation);
  require(c.critic_lr > 0.0, "critic_lr must be > 0");
  require(c.tau >= 0.0 && c.tau <= 1.0, "tau must lie in [0, 1]");
  require_widths(c.policy_hidden, "policy_hidden");
  nn::parse_activation(c.policy_activation);
  require(c.policy_lr > 0.0, "policy_lr must be > 0");
  require(c.alpha_init > 0.0, "alpha_init must be > 0");
  require(c.alpha_lr > 0.0, "alpha_lr must be > 0");
  require(c.batch_size >= 1, "batch_size must be >= 1");
  require(c.min_model_samples >= c.batch_size, "min_model_samples must be >= batch_size");
  require(c.env_buffer_capacity >= c.steps_per_epoch, "env_buffer_capacity must hold one epoch");
  require(c.eval_episodes >= 1, "eval_episodes must be >= 1");
  require(c.eval_every >= 1, "eval_every must be >= 1");
  require(c.checkpoint_every >= 0, "checkpoint_every must be >= 0");
  require(c.diag_points >= 2, "diag_points must be >= 2");
  require(c.diag_eval_episodes >= 1, "diag_eval_episodes must be >= 1");
  require(c.mc_horizon >= 1, "mc_horizon must be >= 1");
  require(c.mc_episodes >= 1, "mc_episodes must be >= 1");
  require(c.global_horizon >= 0, "global_horizon must be >= 0");
}

variants::VariantKnobs knobs_of(const TrainerConfig& c) {
  return {c.members_per_model, c.drop, c.uncertainty_penalty, c.mopo_penalty};
}

model::EnsembleConfig ensemble_config_of(const TrainerConfig& c) {
  model::EnsembleConfig e;
  e.ensemble_size = c.ensemble_size;
  e.elite_count = c.elite_count;
  e.hidden = c.model_hidden;
  e.activation = nn::parse_activation(c.model_activation);
  e.learning_rate = c.model_lr;
  e.batch_size = c.model_batch;
  e.train_steps = c.model_train_steps;
  e.holdout_fraction = c.model_holdout;
  e.max_holdout = c.model_max_holdout;
  e.bound_penalty = c.model_bound_penalty;
  return e;
}

model::HorizonSchedule horizon_schedule_of(const TrainerConfig& c) {
  return {c.rollout_horizon_start, c.rollout_horizon_end, c.rollout_epoch_start, c.rollout_epoch_end};
}

}  // namespace cmbac::harness
