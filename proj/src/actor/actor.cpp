#include "cmbac/actor/actor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cmbac/common/errors.hpp"

namespace cmbac::actor {

namespace {

void check_drop(Eigen::Index k, int drop) {
  if (drop < 0 || drop >= k) {
    throw ConfigError("conservative_q: need 0 <= L <= K-1 (got L=" + std::to_string(drop) +
                      ", K=" + std::to_string(k) + ")");
  }
}

std::vector<Eigen::Index> ascending_order(const Tensor& heads, Eigen::Index row) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(heads.cols()));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return heads(row, a) < heads(row, b); });
  return idx;
}

}  // namespace

Tensor bottom_mask(const Tensor& heads, int drop) {
  check_drop(heads.cols(), drop);
  const Eigen::Index keep = heads.cols() - drop;
  Tensor mask = Tensor::Zero(heads.rows(), heads.cols());
  for (Eigen::Index i = 0; i < heads.rows(); ++i) {
    const auto idx = ascending_order(heads, i);
    for (Eigen::Index t = 0; t < keep; ++t) mask(i, idx[static_cast<std::size_t>(t)]) = 1.0;
  }
  return mask;
}

Vector bottom_mean(const Tensor& heads, int drop) {
  check_drop(heads.cols(), drop);
  const Eigen::Index keep = heads.cols() - drop;
  Vector out(heads.rows());
  for (Eigen::Index i = 0; i < heads.rows(); ++i) {
    const auto idx = ascending_order(heads, i);
    double s = 0.0;
    for (Eigen::Index t = 0; t < keep; ++t) s += heads(i, idx[static_cast<std::size_t>(t)]);
    out(i) = s / static_cast<double>(keep);
  }
  return out;
}

Vector conservative_q(const std::vector<Tensor>& per_network, int drop) {
  if (per_network.empty()) throw ConfigError("conservative_q: no networks");
  Vector out = bottom_mean(per_network.front(), drop);
  for (std::size_t n = 1; n < per_network.size(); ++n) out = out.cwiseMin(bottom_mean(per_network[n], drop));
  return out;
}

double conservative_q(const std::vector<double>& net1, const std::vector<double>& net2, int drop) {
  if (net1.size() != net2.size()) throw ConfigError("conservative_q: head counts differ");
  const auto k = static_cast<Eigen::Index>(net1.size());
  const Tensor a = Eigen::Map<const Tensor>(net1.data(), 1, k);
  const Tensor b = Eigen::Map<const Tensor>(net2.data(), 1, k);
  return conservative_q(std::vector<Tensor>{a, b}, drop)(0);
}

Var conservative_q(Tape& tape, const std::vector<Var>& per_network, int drop) {
  if (per_network.empty()) throw ConfigError("conservative_q: no networks");
  Var out;
  for (std::size_t n = 0; n < per_network.size(); ++n) {
    const Var& q = per_network[n];
    check_drop(q.cols(), drop);
    const double inv_keep = 1.0 / static_cast<double>(q.cols() - drop);
    Var m = nn::scale(nn::row_sum(nn::mul(q, tape.constant(bottom_mask(q.value(), drop)))), inv_keep);
    out = n == 0 ? m : nn::minimum(out, m);
  }
  return out;
}

QAggregator conservative_aggregator(int drop) {
  return QAggregator{
      [drop](const std::vector<Tensor>& q) { return conservative_q(q, drop); },
      [drop](Tape& tape, const std::vector<Var>& q) { return conservative_q(tape, q, drop); },
  };
}

Var actor_loss(Tape& tape, SquashedGaussianPolicy& policy, const Tensor& states, const Tensor& noise,
               critic::CriticEnsemble& critics, double alpha, const QAggregator& aggregate, Vector* log_prob) {
  Var s = tape.constant(states);
  auto sample = policy.forward(tape, s, noise, true);
  std::vector<Var> q;
  for (int n = 0; n < critics.networks(); ++n) q.push_back(critics.online(n).forward(tape, s, sample.actions, false));
  Var qhat = aggregate.taped(tape, q);
  if (log_prob != nullptr) *log_prob = Eigen::Map<const Vector>(sample.log_prob.value().data(), states.rows());
  return nn::mean(nn::sub(nn::scale(sample.log_prob, alpha), qhat));
}

ActorLearner::ActorLearner(int state_dim, std::vector<double> action_low, std::vector<double> action_high,
                           ActorConfig config, Rng& init_rng)
    : policy_(state_dim, std::move(action_low), std::move(action_high), config.hidden, config.activation, init_rng) {
  auto ps = policy_.params().parameters();
  adam_ = nn::make_adam(ps, nn::AdamConfig{.lr = config.lr});
}

ActorStepReport ActorLearner::update(const Tensor& states, critic::CriticEnsemble& critics, double alpha,
                                     const QAggregator& aggregate, Rng& rng) {
  ActorStepReport report;
  auto ps = policy_.params().parameters();
  nn::zero_grad(ps);
  const Tensor noise = policy_.draw_noise(states.rows(), rng);
  Tape tape;
  Var loss = actor_loss(tape, policy_, states, noise, critics, alpha, aggregate, &report.log_prob);
  tape.backward(loss);
  report.loss = loss.scalar();
  report.entropy = -report.log_prob.mean();
  report.finite = std::isfinite(report.loss);
  for (const auto* p : ps) {
    if (!p->grad.allFinite()) report.finite = false;
  }
  if (report.finite) nn::adam_step(adam_, ps);
  return report;
}

void ActorLearner::save(nn::BinaryWriter& w) const {
  auto ps = policy_.params().parameters();
  w.str(nn::encode_snapshot(std::span<const nn::Parameter* const>(ps)));
  nn::save_adam(w, adam_);
}

void ActorLearner::load(nn::BinaryReader& r) {
  auto ps = policy_.params().parameters();
  nn::load_snapshot(r.str(), ps);
  nn::load_adam(r, adam_, ps);
}

}  // namespace cmbac::actor
