#pragma once

#include "cmbac/harness/config.hpp"

namespace cmbac::testing {

// Small enough for a unit test: a few seconds per run.
inline harness::TrainerConfig tiny_config(const std::string& variant = "CMBAC", std::uint64_t seed = 0) {
  harness::TrainerConfig c;
  c.variant = variant;
  c.seed = seed;
  c.epochs = 3;
  c.steps_per_epoch = 100;
  c.updates_per_step = 2;
  c.warmup_steps = 200;
  c.model_train_interval = 100;
  c.model_hidden = {16, 16};
  c.model_batch = 32;
  c.model_train_steps = 30;
  c.rollouts_per_step = 10;
  c.critic_hidden = {16, 16};
  c.critic_hidden_small = {8, 8};
  c.policy_hidden = {16, 16};
  c.alpha_init = 0.1;
  c.batch_size = 32;
  c.min_model_samples = 32;
  c.eval_episodes = 2;
  c.diag_points = 10;
  c.diag_eval_episodes = 2;
  c.mc_horizon = 50;
  return c;
}

}  // namespace cmbac::testing
