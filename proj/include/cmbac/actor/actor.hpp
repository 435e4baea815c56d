#pragma once

#include <functional>
#include <vector>

#include "cmbac/actor/policy.hpp"
#include "cmbac/critic/critic.hpp"

namespace cmbac::actor {

/// Keep-mask of the K - drop smallest entries of each row (1 kept, 0
/// dropped). Ties are ordered by head index.
Tensor bottom_mask(const Tensor& heads, int drop);

/// Per row, the average of the K - drop smallest head values.
Vector bottom_mean(const Tensor& heads, int drop);

/// Conservative estimate: bottom-(K-L) average per network, then the minimum
/// across networks. With two networks 2L estimates are dropped in total.
Vector conservative_q(const std::vector<Tensor>& per_network, int drop);
double conservative_q(const std::vector<double>& net1, const std::vector<double>& net2, int drop);

/// Recorded version. Selection is decided on values and held fixed, so the
/// gradient flows to the kept heads only.
Var conservative_q(Tape& tape, const std::vector<Var>& per_network, int drop);

/// Maps per-network head values (each B x K) to one estimate per row.
struct QAggregator {
  std::function<Vector(const std::vector<Tensor>&)> plain;
  std::function<Var(Tape&, const std::vector<Var>&)> taped;  // -> B x 1
};

QAggregator conservative_aggregator(int drop);

/// Reparameterized estimate of E_s E_a~pi [ alpha log pi(a|s) - Qhat(s, a) ].
/// Critic weights enter as constants. `log_prob` receives the sampled
/// log-densities when non-null.
Var actor_loss(Tape& tape, SquashedGaussianPolicy& policy, const Tensor& states, const Tensor& noise,
               critic::CriticEnsemble& critics, double alpha, const QAggregator& aggregate,
               Vector* log_prob = nullptr);

struct ActorConfig {
  std::vector<int> hidden{256, 256};
  nn::Activation activation = nn::Activation::Relu;
  double lr = 3e-4;
};

struct ActorStepReport {
  double loss = 0.0;
  double entropy = 0.0;  // -mean log pi over the batch
  Vector log_prob;
  bool finite = true;
};

/// Policy plus its optimizer.
class ActorLearner {
 public:
  ActorLearner() = default;
  ActorLearner(int state_dim, std::vector<double> action_low, std::vector<double> action_high, ActorConfig config,
               Rng& init_rng);

  SquashedGaussianPolicy& policy() { return policy_; }
  const SquashedGaussianPolicy& policy() const { return policy_; }

  // One Adam step; skipped when the loss or any gradient is non-finite.
  ActorStepReport update(const Tensor& states, critic::CriticEnsemble& critics, double alpha,
                         const QAggregator& aggregate, Rng& rng);

  void save(nn::BinaryWriter& w) const;
  void load(nn::BinaryReader& r);

 private:
  SquashedGaussianPolicy policy_;
  nn::AdamState adam_;
};

}  // namespace cmbac::actor
