#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "cmbac/model/ensemble.hpp"
#include "cmbac/model/rollout.hpp"
#include "cmbac/variants/variants.hpp"

namespace cmbac::harness {

/// Every training hyperparameter. Loaded from a flat JSON object whose keys
/// are exactly the field names below; unknown keys are rejected.
///
/// `epochs` counts training epochs; `ensemble_size` counts dynamics networks.
struct TrainerConfig {
  // task
  std::string env = "point2d";
  double noise_sigma = 0.1;  // only for *-noisy envs
  std::string known_reward = "auto";  // auto | true | false
  std::string variant = "CMBAC";
  std::uint64_t seed = 0;

  // schedule
  int epochs = 100;
  int steps_per_epoch = 250;      // E
  int updates_per_step = 20;      // G
  int warmup_steps = 250;         // uniform random actions before the policy acts
  int model_train_interval = 250; // env steps between ensemble refits
  double gamma = 0.99;

  // model set and aggregation
  int members_per_model = 2;  // M
  int drop = 1;               // L
  double uncertainty_penalty = 0.1;
  double mopo_penalty = 1.0;

  // dynamics ensemble
  int ensemble_size = 7;
  int elite_count = 5;
  std::vector<int> model_hidden{200, 200, 200, 200};
  std::string model_activation = "relu";
  double model_lr = 1e-3;
  int model_batch = 256;
  int model_train_steps = 1000;
  double model_holdout = 0.2;
  int model_max_holdout = 5000;
  double model_bound_penalty = 0.01;

  // rollouts: horizon follows the thresholded linear schedule
  int rollouts_per_step = 400;
  double rollout_horizon_start = 1.0;
  double rollout_horizon_end = 1.0;
  int rollout_epoch_start = 20;
  int rollout_epoch_end = 100;
  int model_retain_epochs = 5;

  // critic and actor
  std::vector<int> critic_hidden{512, 512, 512};
  std::vector<int> critic_hidden_small{256, 256};
  std::string critic_activation = "relu";
  double critic_lr = 3e-4;
  double tau = 0.005;
  std::vector<int> policy_hidden{256, 256};
  std::string policy_activation = "relu";
  double policy_lr = 3e-4;
  double alpha_init = 1.0;
  bool auto_alpha = true;
  double alpha_lr = 3e-4;
  double target_entropy = 0.0;  // 0 means -dim(A)
  int batch_size = 256;
  int min_model_samples = 256;

  // buffers
  int env_buffer_capacity = 1000000;

  // evaluation and output
  int eval_episodes = 10;
  int eval_every = 1;
  int checkpoint_every = 0;  // epochs; 0 keeps only the final checkpoint

  // diagnostics
  int diag_points = 200;
  int diag_eval_episodes = 20;
  int mc_horizon = 500;
  int mc_episodes = 1;
  int global_horizon = 0;  // 0 means the environment horizon
};

TrainerConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const TrainerConfig& c);
TrainerConfig load_config(const std::string& path);

// Applies an object of overrides (same keys, same validation).
TrainerConfig with_overrides(const TrainerConfig& base, const nlohmann::json& overrides);

/// Throws ConfigError naming the first offending field.
void validate(const TrainerConfig& c);

variants::VariantKnobs knobs_of(const TrainerConfig& c);
model::EnsembleConfig ensemble_config_of(const TrainerConfig& c);
model::HorizonSchedule horizon_schedule_of(const TrainerConfig& c);

}  // namespace cmbac::harness
