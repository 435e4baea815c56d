#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>

#include <json.hpp>

#include "cmbac/envs/envs.hpp"
#include "cmbac/harness/agent.hpp"
#include "cmbac/harness/config.hpp"
#include "cmbac/model/buffers.hpp"
#include "cmbac/model/ensemble.hpp"
#include "cmbac/model/rollout.hpp"

namespace cmbac::harness {

inline constexpr const char* kVersion = "cmbac 0.1.0";

struct EvalResult {
  double mean = 0.0;
  double std = 0.0;  // population std over episodes
  std::vector<double> returns;
};

using ActFn = std::function<Tensor(const Tensor& states)>;

/// Mean undiscounted return over `episodes` full episodes.
EvalResult evaluate_policy(const envs::Environment& env, const ActFn& act, int episodes, Rng& rng);

/// Scripted greedy point policy evaluated on the evaluation stream of `seed`,
/// i.e. from the same start states the trainer evaluates on.
EvalResult scripted_oracle(const TrainerConfig& config, int episodes);

struct EpochMetrics {
  int epoch = 0;
  std::int64_t env_steps = 0;
  std::optional<double> eval_return_mean;
  std::optional<double> eval_return_std;
  double train_return_mean = 0.0;  // episodes finished this epoch; 0 if none
  int train_episodes = 0;
  double critic_loss = 0.0;  // mean over updates and networks
  double actor_loss = 0.0;
  double alpha = 0.0;
  double entropy = 0.0;
  double q_head_mean = 0.0;
  double q_head_std = 0.0;  // std across heads, averaged over the probe batch
  double q_conservative_mean = 0.0;
  std::int64_t updates = 0;
  bool model_trained = false;
  double model_holdout_nll = 0.0;
  double model_holdout_mse = 0.0;
  int rollout_horizon = 0;
  std::int64_t rollout_added = 0;
  std::int64_t rollout_truncated = 0;
  double rollout_mean_reward = 0.0;
  double rollout_branch_variance = 0.0;
  std::int64_t model_buffer_size = 0;
  bool aborted = false;

  nlohmann::json to_json() const;
};

/// The training loop. Each epoch runs E environment steps; every step
/// appends the real transition to D_env, refits the ensemble when due,
/// generates branched model rollouts into D_model and performs G agent
/// updates on batches from D_model.
class Trainer {
 public:
  explicit Trainer(TrainerConfig config);

  const TrainerConfig& config() const { return config_; }
  const variants::ResolvedVariant& variant() const { return agent_.variant(); }
  const envs::Environment& env() const { return *env_; }
  const model::GaussianEnsemble& ensemble() const { return ensemble_; }
  const model::ModelSet& model_set() const { return model_set_; }
  const model::EnvBuffer& env_buffer() const { return env_buffer_; }
  const model::ModelBuffer& model_buffer() const { return model_buffer_; }
  Agent& agent() { return agent_; }
  const Agent& agent() const { return agent_; }
  bool known_reward() const { return known_reward_; }

  int epoch() const { return epoch_; }
  std::int64_t env_steps() const { return env_steps_; }
  bool aborted() const { return aborted_; }
  bool finished() const { return aborted_ || epoch_ >= config_.epochs; }

  EpochMetrics run_epoch();

  // Deterministic (mean) policy on the evaluation stream.
  EvalResult evaluate(int episodes) const;

  std::string checkpoint() const;
  static std::unique_ptr<Trainer> restore(std::string_view bytes);

 private:
  void maybe_train_model(EpochMetrics& m);
  void env_step(EpochMetrics& m, double& return_sum);
  void probe_q(EpochMetrics& m) const;

  TrainerConfig config_;
  std::unique_ptr<envs::Environment> env_;
  bool known_reward_ = false;
  model::ModelSet model_set_;
  model::GaussianEnsemble ensemble_;
  model::EnvBuffer env_buffer_;
  model::ModelBuffer model_buffer_;
  Agent agent_;
  envs::EpisodeRunner runner_;

  Rng env_rng_;
  Rng explore_rng_;
  Rng model_rng_;
  Rng rollout_rng_;
  Rng critic_rng_;
  Rng actor_rng_;

  int epoch_ = 0;
  std::int64_t env_steps_ = 0;
  std::int64_t steps_since_model_train_ = 0;
  bool aborted_ = false;
  model::ModelBatch last_batch_;
};

/// Output locations of one run inside its directory.
struct RunPaths {
  std::string dir;
  std::string manifest() const { return dir + "/manifest.json"; }
  std::string metrics() const { return dir + "/metrics.jsonl"; }
  std::string checkpoint(int epoch) const;
  std::string final_checkpoint() const { return dir + "/checkpoint_final.bin"; }
};

nlohmann::json make_manifest(const TrainerConfig& config, const variants::ResolvedVariant& variant,
                             const RunPaths& paths);

struct RunSummary {
  int epochs = 0;
  std::int64_t env_steps = 0;
  bool aborted = false;
  std::optional<double> final_eval;
  std::string last_checkpoint;
};

/// Full run into `out_dir`: manifest first, then one metrics line per epoch,
/// checkpoints at the configured cadence and at the end. On abort the last
/// good checkpoint is left in place and `aborted` is set.
RunSummary run_training(const TrainerConfig& config, const std::string& out_dir,
                        const std::function<void(const EpochMetrics&)>& on_epoch = {});

}  // namespace cmbac::harness
