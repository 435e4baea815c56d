#include "cmbac/variants/variants.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "cmbac/common/errors.hpp"

namespace cmbac::variants {

namespace {

struct Name {
  AlgoVariant v;
  const char* name;
};

constexpr Name kNames[] = {
    {AlgoVariant::Cmbac, "CMBAC"},         {AlgoVariant::Mbpo, "MBPO"},
    {AlgoVariant::BMbpo, "B-MBPO"},        {AlgoVariant::BLmeq, "B-LMEQ"},
    {AlgoVariant::Mbpoeq, "MBPOEQ"},       {AlgoVariant::Cmbacup, "CMBACUP"},
    {AlgoVariant::Mincmbac, "MINCMBAC"},   {AlgoVariant::RedqCmbac, "REDQ-CMBAC"},
    {AlgoVariant::MopoOnline, "MOPO-Online"}, {AlgoVariant::Scmbac, "SCMBAC"},
};

std::string upper(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  return s;
}

Vector population_std(const Tensor& q, const Vector& mean) {
  Vector out(q.rows());
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    double ss = 0.0;
    for (Eigen::Index j = 0; j < q.cols(); ++j) ss += (q(i, j) - mean(i)) * (q(i, j) - mean(i));
    out(i) = std::sqrt(ss / static_cast<double>(q.cols()));
  }
  return out;
}

void require_networks(std::size_t n) {
  if (n == 0) throw ConfigError("aggregation: no networks");
}

}  // namespace

AlgoVariant parse_variant(const std::string& name) {
  const std::string u = upper(name);
  for (const auto& n : kNames) {
    if (upper(n.name) == u) return n.v;
  }
  if (u == "B-LMEQ-MBPO") return AlgoVariant::BLmeq;
  throw ConfigError("unknown variant '" + name + "'");
}

std::string to_string(AlgoVariant v) {
  for (const auto& n : kNames) {
    if (n.v == v) return n.name;
  }
  return "?";
}

std::vector<AlgoVariant> all_variants() {
  std::vector<AlgoVariant> out;
  for (const auto& n : kNames) out.push_back(n.v);
  return out;
}

std::string to_string(Aggregation a) {
  switch (a) {
    case Aggregation::Conservative: return "conservative";
    case Aggregation::Penalized: return "penalized";
    case Aggregation::Minimum: return "minimum";
    case Aggregation::Average: return "average";
  }
  return "?";
}

ResolvedVariant resolve_variant(AlgoVariant v, int elite_count, const VariantKnobs& knobs) {
  ResolvedVariant r;
  r.variant = v;
  r.members_per_model = knobs.members_per_model;
  r.drop = knobs.drop;
  switch (v) {
    case AlgoVariant::Cmbac:
      break;
    case AlgoVariant::Mbpo:
      r.members_per_model = elite_count;
      r.drop = 0;
      r.big_critic = false;
      break;
    case AlgoVariant::BMbpo:
      r.members_per_model = elite_count;
      r.drop = 0;
      break;
    case AlgoVariant::BLmeq:
      r.drop = 0;
      break;
    case AlgoVariant::Mbpoeq:
      r.drop = 0;
      r.target_rule = critic::TargetRule::Shared;
      break;
    case AlgoVariant::Cmbacup:
      r.drop = 0;
      r.aggregation = Aggregation::Penalized;
      r.uncertainty_penalty = knobs.uncertainty_penalty;
      break;
    case AlgoVariant::Mincmbac:
      r.drop = 0;
      r.aggregation = Aggregation::Minimum;
      break;
    case AlgoVariant::RedqCmbac:
      r.aggregation = Aggregation::Average;
      break;
    case AlgoVariant::MopoOnline:
      r.members_per_model = elite_count;
      r.drop = 0;
      r.mopo_penalty = knobs.mopo_penalty;
      if (knobs.mopo_penalty < 0.0) throw ConfigError("MOPO-Online: penalty coefficient must be >= 0");
      break;
    case AlgoVariant::Scmbac:
      r.critic_networks = 1;
      r.entropy = false;
      break;
  }
  if (r.members_per_model < 1 || r.members_per_model > elite_count) {
    throw ConfigError("variant " + to_string(v) + ": need 1 <= M <= elite count (M=" +
                      std::to_string(r.members_per_model) + ", elites=" + std::to_string(elite_count) + ")");
  }
  r.heads = static_cast<int>(model::binomial(elite_count, r.members_per_model));
  if (r.drop < 0 || r.drop > r.heads - 1) {
    throw ConfigError("variant " + to_string(v) + ": need 0 <= L <= K-1 (L=" + std::to_string(r.drop) +
                      ", K=" + std::to_string(r.heads) + ")");
  }
  if (r.uncertainty_penalty < 0.0) throw ConfigError("CMBACUP: penalty coefficient must be >= 0");
  return r;
}

Vector mopo_uncertainty(const model::GaussianEnsemble& ensemble, const Tensor& states, const Tensor& actions) {
  Vector u = Vector::Zero(states.rows());
  for (int m = 0; m < ensemble.size(); ++m) {
    const auto p = ensemble.predict(m, states, actions);
    const Vector norm = p.var.array().square().rowwise().sum().sqrt();
    u = m == 0 ? norm : Vector(u.cwiseMax(norm));
  }
  return u;
}

model::RewardAdjust mopo_reward_adjust(const model::GaussianEnsemble& ensemble, double c) {
  return [&ensemble, c](const Tensor& states, const Tensor& actions, Tensor& branch_rewards) {
    const Vector u = mopo_uncertainty(ensemble, states, actions);
    for (Eigen::Index i = 0; i < branch_rewards.rows(); ++i)
      for (Eigen::Index j = 0; j < branch_rewards.cols(); ++j)
        branch_rewards(i, j) = penalized_reward(branch_rewards(i, j), u(i), c);
  };
}

Vector cmbacup_q(const std::vector<Tensor>& per_network, double lambda) {
  require_networks(per_network.size());
  Vector out;
  for (std::size_t n = 0; n < per_network.size(); ++n) {
    const Tensor& q = per_network[n];
    const Vector mean = q.rowwise().sum() / static_cast<double>(q.cols());
    const Vector v = mean - lambda * population_std(q, mean);
    out = n == 0 ? v : Vector(out.cwiseMin(v));
  }
  return out;
}

Var cmbacup_q(Tape& tape, const std::vector<Var>& per_network, double lambda) {
  (void)tape;
  require_networks(per_network.size());
  Var out;
  for (std::size_t n = 0; n < per_network.size(); ++n) {
    const Var& q = per_network[n];
    const double inv_k = 1.0 / static_cast<double>(q.cols());
    Var mean = nn::scale(nn::row_sum(q), inv_k);
    Var var = nn::scale(nn::row_sum(nn::square(nn::sub(q, mean))), inv_k);
    Var v = nn::sub(mean, nn::scale(nn::sqrt(var), lambda));
    out = n == 0 ? v : nn::minimum(out, v);
  }
  return out;
}

Vector mincmbac_q(const std::vector<Tensor>& per_network) {
  require_networks(per_network.size());
  Vector out;
  for (std::size_t n = 0; n < per_network.size(); ++n) {
    const Vector v = per_network[n].rowwise().minCoeff();
    out = n == 0 ? v : Vector(out.cwiseMin(v));
  }
  return out;
}

Var mincmbac_q(Tape& tape, const std::vector<Var>& per_network) {
  require_networks(per_network.size());
  Var out;
  for (std::size_t n = 0; n < per_network.size(); ++n) {
    const Var& q = per_network[n];
    Tensor mask = Tensor::Zero(q.rows(), q.cols());
    for (Eigen::Index i = 0; i < q.rows(); ++i) {
      Eigen::Index arg = 0;
      q.value().row(i).minCoeff(&arg);
      mask(i, arg) = 1.0;
    }
    Var v = nn::row_sum(nn::mul(q, tape.constant(std::move(mask))));
    out = n == 0 ? v : nn::minimum(out, v);
  }
  return out;
}

Vector redq_cmbac_q(const std::vector<Tensor>& per_network, int drop) {
  require_networks(per_network.size());
  Vector sum = Vector::Zero(per_network.front().rows());
  for (const auto& q : per_network) sum += actor::bottom_mean(q, drop);
  return sum / static_cast<double>(per_network.size());
}

Var redq_cmbac_q(Tape& tape, const std::vector<Var>& per_network, int drop) {
  require_networks(per_network.size());
  Var sum;
  for (std::size_t n = 0; n < per_network.size(); ++n) {
    Var m = actor::conservative_q(tape, {per_network[n]}, drop);
    sum = n == 0 ? m : nn::add(sum, m);
  }
  return nn::scale(sum, 1.0 / static_cast<double>(per_network.size()));
}

actor::QAggregator make_aggregator(const ResolvedVariant& v) {
  switch (v.aggregation) {
    case Aggregation::Conservative:
      return actor::conservative_aggregator(v.drop);
    case Aggregation::Penalized: {
      const double lambda = v.uncertainty_penalty;
      return {[lambda](const std::vector<Tensor>& q) { return cmbacup_q(q, lambda); },
              [lambda](Tape& t, const std::vector<Var>& q) { return cmbacup_q(t, q, lambda); }};
    }
    case Aggregation::Minimum:
      return {[](const std::vector<Tensor>& q) { return mincmbac_q(q); },
              [](Tape& t, const std::vector<Var>& q) { return mincmbac_q(t, q); }};
    case Aggregation::Average: {
      const int drop = v.drop;
      return {[drop](const std::vector<Tensor>& q) { return redq_cmbac_q(q, drop); },
              [drop](Tape& t, const std::vector<Var>& q) { return redq_cmbac_q(t, q, drop); }};
    }
  }
  throw ConfigError("unknown aggregation");
}

}  // namespace cmbac::variants
