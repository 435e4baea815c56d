#pragma once

#include <functional>
#include <vector>

#include "cmbac/model/buffers.hpp"
#include "cmbac/nn/adam.hpp"
#include "cmbac/nn/mlp.hpp"
#include "cmbac/nn/serialize.hpp"

namespace cmbac::critic {

using nn::Tape;
using nn::Tensor;
using nn::Var;
using nn::Vector;

/// Q-network over [s, a] with K scalar heads on a shared trunk. Head j is
/// bound to combination j of the model set.
class MultiHeadQ {
 public:
  MultiHeadQ() = default;
  MultiHeadQ(int state_dim, int action_dim, int heads, std::vector<int> hidden, nn::Activation act, Rng& rng);

  int heads() const { return heads_; }
  int state_dim() const { return state_dim_; }
  int action_dim() const { return action_dim_; }

  Tensor values(const Tensor& states, const Tensor& actions) const;  // B x K
  Var forward(Tape& tape, Var states, Var actions, bool trainable);    // B x K

  nn::MlpParams& params() { return net_; }
  const nn::MlpParams& params() const { return net_; }

 private:
  nn::MlpParams net_;
  int state_dim_ = 0;
  int action_dim_ = 0;
  int heads_ = 0;
};

// theta_bar <- (1 - tau) theta_bar + tau theta
void polyak_update(MultiHeadQ& target, const MultiHeadQ& online, double tau);

/// a' ~ pi(.|s') with log-densities, one fresh draw per row.
using NextActionFn = std::function<void(const Tensor& states, Tensor& actions, Vector& log_prob, Rng& rng)>;

enum class TargetRule {
  PerHead,  // y_j from combination j's branch (s'_j, r_j) and target head j
  Shared,   // one target from the rollout s', mean over heads, broadcast
};

struct TargetParams {
  double gamma = 0.99;
  double alpha = 0.0;
};

/// Per-head Bellman targets, B x K.
///
/// PerHead: a'_j ~ pi(.|s'_j) drawn independently for every (i, j), then
///   y_ij = r_ij + gamma (1 - d_i) (min_n Qbar_n,j(s'_ij, a'_ij) - alpha log pi(a'_ij|s'_ij))
/// Shared: a' ~ pi(.|s'_i), then every head gets
///   y_i = r_i + gamma (1 - d_i) (min_n mean_j Qbar_n,j(s'_i, a') - alpha log pi(a'|s'_i))
/// The min runs over however many target networks are passed (one or two).
Tensor head_targets(const model::ModelBatch& batch, const std::vector<const MultiHeadQ*>& targets,
                    const NextActionFn& next_action, const TargetParams& params, TargetRule rule, Rng& rng);

/// mean over rows and heads of 0.5 (Q - y)^2, with y constant.
Var critic_loss(Tape& tape, Var q, const Tensor& y);

struct CriticConfig {
  std::vector<int> hidden{256, 256, 256};
  nn::Activation activation = nn::Activation::Relu;
  int networks = 2;
  double lr = 3e-4;
  double tau = 0.005;
};

struct CriticStepReport {
  std::vector<double> losses;  // one per network
  bool finite = true;
};

/// The online networks, their Polyak-averaged targets and optimizers.
class CriticEnsemble {
 public:
  CriticEnsemble() = default;
  CriticEnsemble(int state_dim, int action_dim, int heads, CriticConfig config, Rng& init_rng);

  int networks() const { return static_cast<int>(online_.size()); }
  int heads() const { return online_.front().heads(); }
  const CriticConfig& config() const { return config_; }

  MultiHeadQ& online(int n) { return online_[static_cast<std::size_t>(n)]; }
  const MultiHeadQ& online(int n) const { return online_[static_cast<std::size_t>(n)]; }
  const MultiHeadQ& target(int n) const { return target_[static_cast<std::size_t>(n)]; }
  std::vector<const MultiHeadQ*> targets() const;

  /// One gradient step on every online network against fixed targets `y`,
  /// then a Polyak update of every target. Nothing is changed if any loss
  /// or gradient is non-finite.
  CriticStepReport update(const Tensor& states, const Tensor& actions, const Tensor& y);

  void save(nn::BinaryWriter& w) const;
  void load(nn::BinaryReader& r);

 private:
  CriticConfig config_;
  std::vector<MultiHeadQ> online_;
  std::vector<MultiHeadQ> target_;
  std::vector<nn::AdamState> adam_;
};

}  // namespace cmbac::critic
