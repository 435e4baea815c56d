#pragma once

#include <functional>
#include <vector>

#include "cmbac/model/buffers.hpp"
#include "cmbac/model/ensemble.hpp"

namespace cmbac::model {

std::uint64_t binomial(int n, int k);

/// All size-m subsets of {0, ..., n-1} in lexicographic order.
std::vector<std::vector<int>> enumerate_combinations(int n, int m);

/// The model set: every size-M combination of elite *positions*. Head j of the
/// critic is bound to combination j for the whole run.
struct ModelSet {
  int members_per_model = 1;  // M
  int elite_count = 1;
  std::vector<std::vector<int>> combinations;

  static ModelSet make(int elite_count, int members_per_model);
  int size() const { return static_cast<int>(combinations.size()); }  // K
};

/// Samples P_j(. | s, a): per row, one member of combination j is chosen
/// uniformly and its Gaussian is sampled; s'_j = s + delta s.
void sample_model_j(const GaussianEnsemble& ensemble, const ModelSet& set, int j, const Tensor& states,
                    const Tensor& actions, Tensor& next_states, Vector& rewards, Rng& rng);

using ActionSampler = std::function<Tensor(const Tensor& states, Rng& rng)>;
using RewardFn = std::function<Vector(const Tensor& states, const Tensor& actions)>;
// Adjusts per-branch rewards in place (rows = states, columns = combinations).
using RewardAdjust = std::function<void(const Tensor& states, const Tensor& actions, Tensor& branch_rewards)>;

struct RolloutConfig {
  int horizon = 1;
  int n_rollouts = 1;
};

struct RolloutStats {
  std::size_t started = 0;
  std::size_t added = 0;
  std::size_t truncated = 0;
  double mean_reward = 0.0;
  double branch_variance = 0.0;  // variance of s'_j across combinations, averaged
  double mean_length() const { return started == 0 ? 0.0 : static_cast<double>(added) / static_cast<double>(started); }
};

/// Branched short rollouts from states drawn uniformly out of D_env.
///
/// Each step: a ~ pi(s); for every combination j draw (s'_j, r_j) from P_j;
/// the trajectory continues with the branch of one combination chosen
/// uniformly, so the rollout itself follows the uniform mixture over elites.
/// All K branches are stored. With `known_reward` set, every branch reward is
/// r(s, a) instead of the model's reward head. A row whose sampled branch is
/// non-finite stops there and nothing is stored for that step.
RolloutStats branched_rollout(const GaussianEnsemble& ensemble, const ModelSet& set, const ActionSampler& policy,
                              const EnvBuffer& env_data, const RolloutConfig& config, const RewardFn* known_reward,
                              const RewardAdjust* adjust, Rng& rng, ModelBuffer& out);

/// Thresholded linear schedule x -> y over epochs a -> b:
/// floor(min(max(x + (e - a) / (b - a) * (y - x), x), y)).
struct HorizonSchedule {
  double start_value = 1.0;  // x
  double end_value = 1.0;    // y
  int start_epoch = 20;      // a
  int end_epoch = 100;       // b
};

int rollout_horizon(int epoch, const HorizonSchedule& schedule);

}  // namespace cmbac::model
