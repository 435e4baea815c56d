#include "cmbac/critic/critic.hpp"

#include <cmath>

#include "cmbac/common/errors.hpp"

namespace cmbac::critic {

MultiHeadQ::MultiHeadQ(int state_dim, int action_dim, int heads, std::vector<int> hidden, nn::Activation act,
                       Rng& rng)
    : state_dim_(state_dim), action_dim_(action_dim), heads_(heads) {
  if (heads < 1) throw ConfigError("MultiHeadQ: need at least one head");
  nn::MlpShape shape;
  shape.input_dim = state_dim + action_dim;
  shape.hidden = std::move(hidden);
  shape.activation = act;
  shape.head_widths.assign(static_cast<std::size_t>(heads), 1);
  net_ = nn::make_mlp(shape, rng);
}

Tensor MultiHeadQ::values(const Tensor& states, const Tensor& actions) const {
  return nn::mlp_forward(net_, nn::hcat(states, actions));
}

Var MultiHeadQ::forward(Tape& tape, Var states, Var actions, bool trainable) {
  return nn::mlp_forward(tape, net_, nn::concat_cols(states, actions), trainable);
}

void polyak_update(MultiHeadQ& target, const MultiHeadQ& online, double tau) {
  auto tp = target.params().parameters();
  auto op = online.params().parameters();
  if (tp.size() != op.size()) throw ConfigError("polyak_update: parameter count mismatch");
  for (std::size_t i = 0; i < tp.size(); ++i) {
    auto& t = tp[i]->value;
    const auto& o = op[i]->value;
    if (t.rows() != o.rows() || t.cols() != o.cols()) throw ConfigError("polyak_update: shape mismatch");
    t = (1.0 - tau) * t + tau * o;
  }
}

Tensor head_targets(const model::ModelBatch& batch, const std::vector<const MultiHeadQ*>& targets,
                    const NextActionFn& next_action, const TargetParams& params, TargetRule rule, Rng& rng) {
  if (targets.empty()) throw ConfigError("head_targets: no target networks");
  const Eigen::Index b = static_cast<Eigen::Index>(batch.size());
  const int k = targets.front()->heads();
  Tensor y(b, k);
  Tensor next_actions;
  Vector log_prob;

  if (rule == TargetRule::PerHead) {
    if (batch.heads != k) throw ConfigError("head_targets: batch branches differ from head count");
    next_action(batch.branch_next_states, next_actions, log_prob, rng);
    Vector best;
    for (std::size_t n = 0; n < targets.size(); ++n) {
      const Tensor q = targets[n]->values(batch.branch_next_states, next_actions);
      Vector picked(b * k);
      for (Eigen::Index i = 0; i < b; ++i)
        for (int j = 0; j < k; ++j) picked(i * k + j) = q(i * k + j, j);
      best = n == 0 ? picked : Vector(best.cwiseMin(picked));
    }
    for (Eigen::Index i = 0; i < b; ++i) {
      const double live = 1.0 - batch.dones(i);
      for (int j = 0; j < k; ++j) {
        const Eigen::Index row = i * k + j;
        y(i, j) = batch.branch_rewards(i, j) + params.gamma * live * (best(row) - params.alpha * log_prob(row));
      }
    }
    return y;
  }

  next_action(batch.next_states, next_actions, log_prob, rng);
  Vector best;
  for (std::size_t n = 0; n < targets.size(); ++n) {
    const Vector m = targets[n]->values(batch.next_states, next_actions).rowwise().mean();
    best = n == 0 ? m : Vector(best.cwiseMin(m));
  }
  for (Eigen::Index i = 0; i < b; ++i) {
    const double yi = batch.rewards(i) + params.gamma * (1.0 - batch.dones(i)) * (best(i) - params.alpha * log_prob(i));
    y.row(i).setConstant(yi);
  }
  return y;
}

Var critic_loss(Tape& tape, Var q, const Tensor& y) {
  if (q.rows() != y.rows() || q.cols() != y.cols()) throw ConfigError("critic_loss: target shape mismatch");
  return nn::mean(nn::scale(nn::square(nn::sub(q, tape.constant(y))), 0.5));
}

CriticEnsemble::CriticEnsemble(int state_dim, int action_dim, int heads, CriticConfig config, Rng& init_rng)
    : config_(std::move(config)) {
  if (config_.networks < 1 || config_.networks > 2) throw ConfigError("critic: networks must be 1 or 2");
  if (config_.tau < 0.0 || config_.tau > 1.0) throw ConfigError("critic: tau must lie in [0, 1]");
  for (int n = 0; n < config_.networks; ++n) {
    online_.emplace_back(state_dim, action_dim, heads, config_.hidden, config_.activation, init_rng);
  }
  target_ = online_;
  for (auto& q : online_) {
    auto ps = q.params().parameters();
    adam_.push_back(nn::make_adam(ps, nn::AdamConfig{.lr = config_.lr}));
  }
}

std::vector<const MultiHeadQ*> CriticEnsemble::targets() const {
  std::vector<const MultiHeadQ*> out;
  for (const auto& t : target_) out.push_back(&t);
  return out;
}

CriticStepReport CriticEnsemble::update(const Tensor& states, const Tensor& actions, const Tensor& y) {
  CriticStepReport report;
  for (auto& q : online_) {
    auto ps = q.params().parameters();
    nn::zero_grad(ps);
    Tape tape;
    Var loss = critic_loss(tape, q.forward(tape, tape.constant(states), tape.constant(actions), true), y);
    tape.backward(loss);
    report.losses.push_back(loss.scalar());
    if (!std::isfinite(loss.scalar())) report.finite = false;
    for (const auto* p : ps) {
      if (!p->grad.allFinite()) report.finite = false;
    }
  }
  if (!report.finite) return report;
  for (std::size_t n = 0; n < online_.size(); ++n) {
    auto ps = online_[n].params().parameters();
    nn::adam_step(adam_[n], ps);
  }
  for (std::size_t n = 0; n < online_.size(); ++n) polyak_update(target_[n], online_[n], config_.tau);
  return report;
}

void CriticEnsemble::save(nn::BinaryWriter& w) const {
  w.u64(online_.size());
  for (std::size_t n = 0; n < online_.size(); ++n) {
    auto op = online_[n].params().parameters();
    auto tp = target_[n].params().parameters();
    w.str(nn::encode_snapshot(std::span<const nn::Parameter* const>(op)));
    w.str(nn::encode_snapshot(std::span<const nn::Parameter* const>(tp)));
    nn::save_adam(w, adam_[n]);
  }
}

void CriticEnsemble::load(nn::BinaryReader& r) {
  if (r.u64() != online_.size()) throw SerializationError("critic: network count mismatch");
  for (std::size_t n = 0; n < online_.size(); ++n) {
    auto op = online_[n].params().parameters();
    auto tp = target_[n].params().parameters();
    nn::load_snapshot(r.str(), op);
    nn::load_snapshot(r.str(), tp);
    nn::load_adam(r, adam_[n], op);
  }
}

}  // namespace cmbac::critic
