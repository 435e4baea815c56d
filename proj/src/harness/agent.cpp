#include "cmbac/harness/agent.hpp"

#include <cmath>

namespace cmbac::harness {

Agent::Agent(int state_dim, std::vector<double> action_low, std::vector<double> action_high,
             variants::ResolvedVariant variant, AgentConfig config, Rng& init_rng)
    : variant_(variant), config_(std::move(config)) {
  const int action_dim = static_cast<int>(action_low.size());
  config_.critic.networks = variant_.critic_networks;
  critics_ = critic::CriticEnsemble(state_dim, action_dim, variant_.heads, config_.critic, init_rng);
  actor_ = actor::ActorLearner(state_dim, std::move(action_low), std::move(action_high), config_.actor, init_rng);
  const double target = config_.target_entropy != 0.0 ? config_.target_entropy : -static_cast<double>(action_dim);
  if (variant_.entropy) {
    temperature_ = actor::Temperature(config_.alpha_init, target, config_.auto_alpha, config_.alpha_lr);
  } else {
    temperature_ = actor::Temperature(0.0, target, false, config_.alpha_lr);
  }
  aggregate_ = variants::make_aggregator(variant_);
}

UpdateReport Agent::update(const model::ModelBatch& batch, Rng& critic_rng, Rng& actor_rng) {
  UpdateReport report;
  report.alpha = temperature_.alpha();
  const auto& policy = actor_.policy();
  critic::NextActionFn next = [&policy](const Tensor& s, Tensor& a, Vector& lp, Rng& rng) {
    auto sample = policy.sample(s, rng);
    a = std::move(sample.actions);
    lp = std::move(sample.log_prob);
  };
  const Tensor y = critic::head_targets(batch, critics_.targets(), next, {config_.gamma, report.alpha},
                                        variant_.target_rule, critic_rng);
  if (!y.allFinite()) {
    report.finite = false;
    return report;
  }
  auto cr = critics_.update(batch.states, batch.actions, y);
  report.critic_losses = cr.losses;
  if (!cr.finite) {
    report.finite = false;
    return report;
  }
  auto ar = actor_.update(batch.states, critics_, report.alpha, aggregate_, actor_rng);
  report.actor_loss = ar.loss;
  report.entropy = ar.entropy;
  if (!ar.finite) {
    report.finite = false;
    return report;
  }
  temperature_.update(ar.log_prob);
  return report;
}

void Agent::save(nn::BinaryWriter& w) const {
  critics_.save(w);
  actor_.save(w);
  temperature_.save(w);
}

void Agent::load(nn::BinaryReader& r) {
  critics_.load(r);
  actor_.load(r);
  temperature_.load(r);
}

}  // namespace cmbac::harness
