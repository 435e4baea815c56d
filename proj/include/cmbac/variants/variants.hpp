#pragma once

#include <string>
#include <vector>

#include "cmbac/actor/actor.hpp"
#include "cmbac/critic/critic.hpp"
#include "cmbac/model/ensemble.hpp"
#include "cmbac/model/rollout.hpp"

namespace cmbac::variants {

using nn::Tape;
using nn::Tensor;
using nn::Var;
using nn::Vector;

enum class AlgoVariant {
  Cmbac,
  Mbpo,
  BMbpo,
  BLmeq,
  Mbpoeq,
  Cmbacup,
  Mincmbac,
  RedqCmbac,
  MopoOnline,
  Scmbac,
};

// Accepts the canonical names (CMBAC, MBPO, B-MBPO, B-LMEQ, MBPOEQ, CMBACUP,
// MINCMBAC, REDQ-CMBAC, MOPO-Online, SCMBAC), case-insensitively.
AlgoVariant parse_variant(const std::string& name);
std::string to_string(AlgoVariant v);
std::vector<AlgoVariant> all_variants();

enum class Aggregation {
  Conservative,  // bottom-(K-L) mean per network, min across networks
  Penalized,     // mean - lambda * std per network, min across networks
  Minimum,       // min over every head of every network
  Average,       // bottom-(K-L) mean per network, averaged across networks
};

std::string to_string(Aggregation a);

/// User-facing knobs that a variant may use or override.
struct VariantKnobs {
  int members_per_model = 2;  // M
  int drop = 1;               // L
  double uncertainty_penalty = 0.1;  // lambda, CMBACUP
  double mopo_penalty = 1.0;         // c, MOPO-Online
};

/// Everything that differs between algorithms, fully determined by the
/// variant, the elite count and the knobs.
struct ResolvedVariant {
  AlgoVariant variant = AlgoVariant::Cmbac;
  int members_per_model = 2;
  int heads = 1;  // K = C(elites, M)
  int drop = 0;
  critic::TargetRule target_rule = critic::TargetRule::PerHead;
  Aggregation aggregation = Aggregation::Conservative;
  bool big_critic = true;
  int critic_networks = 2;
  bool entropy = true;  // false: alpha fixed at 0
  double uncertainty_penalty = 0.0;
  double mopo_penalty = 0.0;  // 0 disables the reward penalty
};

/// Throws ConfigError when M or L fall outside their ranges for the variant.
ResolvedVariant resolve_variant(AlgoVariant v, int elite_count, const VariantKnobs& knobs);

/// u(s, a): max over all ensemble members of the Frobenius norm of the
/// diagonal predictive covariance, sqrt(sum_d var_d^2), over every predicted
/// output (state deltas and reward) in raw units.
Vector mopo_uncertainty(const model::GaussianEnsemble& ensemble, const Tensor& states, const Tensor& actions);

inline double penalized_reward(double r, double u, double c) { return r - c * u; }

// Rollout hook subtracting c * u(s, a) from every branch reward.
model::RewardAdjust mopo_reward_adjust(const model::GaussianEnsemble& ensemble, double c);

/// Per network mean - lambda * population std over heads, then min across
/// networks.
Vector cmbacup_q(const std::vector<Tensor>& per_network, double lambda);
Var cmbacup_q(Tape& tape, const std::vector<Var>& per_network, double lambda);

/// Minimum over all heads of all networks.
Vector mincmbac_q(const std::vector<Tensor>& per_network);
Var mincmbac_q(Tape& tape, const std::vector<Var>& per_network);

/// Average across networks of the per-network bottom-(K-L) means.
Vector redq_cmbac_q(const std::vector<Tensor>& per_network, int drop);
Var redq_cmbac_q(Tape& tape, const std::vector<Var>& per_network, int drop);
inline double redq_cmbac_q(double cons1, double cons2) { return 0.5 * (cons1 + cons2); }

actor::QAggregator make_aggregator(const ResolvedVariant& v);

/// Shared target for every head: y = r + gamma (min_n mean_j Qbar_n,j(s', a') - alpha log pi).
inline Tensor mbpoeq_target(const model::ModelBatch& batch, const std::vector<const critic::MultiHeadQ*>& targets,
                            const critic::NextActionFn& next_action, const critic::TargetParams& params, Rng& rng) {
  return critic::head_targets(batch, targets, next_action, params, critic::TargetRule::Shared, rng);
}

}  // namespace cmbac::variants
