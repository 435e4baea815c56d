#pragma once

#include "cmbac/actor/actor.hpp"
#include "cmbac/critic/critic.hpp"
#include "cmbac/variants/variants.hpp"

namespace cmbac::harness {

using nn::Tensor;
using nn::Vector;

struct AgentConfig {
  critic::CriticConfig critic;
  actor::ActorConfig actor;
  double alpha_init = 1.0;
  bool auto_alpha = true;
  double alpha_lr = 3e-4;
  double target_entropy = 0.0;  // 0 means -dim(A)
  double gamma = 0.99;
};

struct UpdateReport {
  std::vector<double> critic_losses;
  double actor_loss = 0.0;
  double entropy = 0.0;
  double alpha = 0.0;  // value used for this update
  bool finite = true;
};

/// Critics, policy and temperature for one variant, with the combined
/// gradient step: per-head targets, critic step, policy step, temperature
/// step. The critic stream drives next-action draws; the actor stream drives
/// the reparameterization noise.
class Agent {
 public:
  Agent() = default;
  Agent(int state_dim, std::vector<double> action_low, std::vector<double> action_high,
        variants::ResolvedVariant variant, AgentConfig config, Rng& init_rng);

  UpdateReport update(const model::ModelBatch& batch, Rng& critic_rng, Rng& actor_rng);

  double alpha() const { return temperature_.alpha(); }
  const variants::ResolvedVariant& variant() const { return variant_; }
  const actor::QAggregator& aggregator() const { return aggregate_; }
  critic::CriticEnsemble& critics() { return critics_; }
  const critic::CriticEnsemble& critics() const { return critics_; }
  actor::ActorLearner& actor() { return actor_; }
  const actor::SquashedGaussianPolicy& policy() const { return actor_.policy(); }
  actor::Temperature& temperature() { return temperature_; }
  const AgentConfig& config() const { return config_; }

  void save(nn::BinaryWriter& w) const;
  void load(nn::BinaryReader& r);

 private:
  variants::ResolvedVariant variant_;
  AgentConfig config_;
  critic::CriticEnsemble critics_;
  actor::ActorLearner actor_;
  actor::Temperature temperature_;
  actor::QAggregator aggregate_;
};

}  // namespace cmbac::harness
