#include "cmbac/model/rollout.hpp"

#include <algorithm>
#include <cmath>

#include "cmbac/common/errors.hpp"

namespace cmbac::model {

std::uint64_t binomial(int n, int k) {
  if (k < 0 || k > n) return 0;
  std::uint64_t r = 1;
  for (int i = 1; i <= k; ++i) r = r * static_cast<std::uint64_t>(n - k + i) / static_cast<std::uint64_t>(i);
  return r;
}

std::vector<std::vector<int>> enumerate_combinations(int n, int m) {
  if (m < 1 || m > n) {
    throw ConfigError("enumerate_combinations: need 1 <= M <= N (got M=" + std::to_string(m) +
                      ", N=" + std::to_string(n) + ")");
  }
  std::vector<std::vector<int>> out;
  std::vector<int> cur(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) cur[static_cast<std::size_t>(i)] = i;
  while (true) {
    out.push_back(cur);
    int i = m - 1;
    while (i >= 0 && cur[static_cast<std::size_t>(i)] == n - m + i) --i;
    if (i < 0) break;
    ++cur[static_cast<std::size_t>(i)];
    for (int k = i + 1; k < m; ++k) cur[static_cast<std::size_t>(k)] = cur[static_cast<std::size_t>(k - 1)] + 1;
  }
  return out;
}

ModelSet ModelSet::make(int elite_count, int members_per_model) {
  ModelSet s;
  s.members_per_model = members_per_model;
  s.elite_count = elite_count;
  s.combinations = enumerate_combinations(elite_count, members_per_model);
  return s;
}

namespace {

struct ElitePredictions {
  std::vector<MemberPrediction> by_position;
};

ElitePredictions predict_elites(const GaussianEnsemble& ensemble, const Tensor& states, const Tensor& actions) {
  ElitePredictions p;
  for (int e : ensemble.elites()) p.by_position.push_back(ensemble.predict(e, states, actions));
  return p;
}

void check_set(const GaussianEnsemble& ensemble, const ModelSet& set) {
  if (set.elite_count != static_cast<int>(ensemble.elites().size())) {
    throw ConfigError("model set built for " + std::to_string(set.elite_count) + " elites, ensemble has " +
                      std::to_string(ensemble.elites().size()));
  }
}

// Draws (s'_j, r_j) for one row from a random member of `combination`.
bool draw_branch(const ElitePredictions& preds, const std::vector<int>& combination, const Tensor& states,
                 Eigen::Index row, int state_dim, Rng& rng, double* next_state, double* reward) {
  const int pos = combination[rng.uniform_int(combination.size())];
  const auto& p = preds.by_position[static_cast<std::size_t>(pos)];
  bool finite = true;
  for (int d = 0; d <= state_dim; ++d) {
    const double draw = p.mean(row, d) + std::sqrt(p.var(row, d)) * rng.normal();
    if (!std::isfinite(draw)) finite = false;
    if (d < state_dim) {
      next_state[d] = states(row, d) + draw;
    } else {
      *reward = draw;
    }
  }
  return finite;
}

}  // namespace

void sample_model_j(const GaussianEnsemble& ensemble, const ModelSet& set, int j, const Tensor& states,
                    const Tensor& actions, Tensor& next_states, Vector& rewards, Rng& rng) {
  check_set(ensemble, set);
  if (j < 0 || j >= set.size()) throw ConfigError("sample_model_j: combination index out of range");
  const auto preds = predict_elites(ensemble, states, actions);
  const int ds = ensemble.state_dim();
  next_states.resize(states.rows(), ds);
  rewards.resize(states.rows());
  std::vector<double> buf(static_cast<std::size_t>(ds));
  for (Eigen::Index i = 0; i < states.rows(); ++i) {
    double r = 0.0;
    draw_branch(preds, set.combinations[static_cast<std::size_t>(j)], states, i, ds, rng, buf.data(), &r);
    for (int d = 0; d < ds; ++d) next_states(i, d) = buf[static_cast<std::size_t>(d)];
    rewards(i) = r;
  }
}

RolloutStats branched_rollout(const GaussianEnsemble& ensemble, const ModelSet& set, const ActionSampler& policy,
                              const EnvBuffer& env_data, const RolloutConfig& config, const RewardFn* known_reward,
                              const RewardAdjust* adjust, Rng& rng, ModelBuffer& out) {
  check_set(ensemble, set);
  if (config.horizon < 1) throw ConfigError("branched_rollout: horizon must be >= 1");
  if (out.heads() != set.size()) throw ConfigError("branched_rollout: buffer head count differs from K");
  RolloutStats stats;
  if (config.n_rollouts <= 0 || env_data.size() == 0) return stats;

  const int ds = ensemble.state_dim();
  const int k = set.size();
  Tensor states = env_data.sample_states(static_cast<std::size_t>(config.n_rollouts), rng);
  stats.started = static_cast<std::size_t>(states.rows());
  double reward_sum = 0.0;
  double var_sum = 0.0;

  for (int step = 0; step < config.horizon && states.rows() > 0; ++step) {
    const Eigen::Index n = states.rows();
    Tensor actions = policy(states, rng);
    const auto preds = predict_elites(ensemble, states, actions);

    Tensor branch_next(n * k, ds);
    Tensor branch_reward(n, k);
    std::vector<char> finite(static_cast<std::size_t>(n), 1);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (int j = 0; j < k; ++j) {
        double r = 0.0;
        const bool ok = draw_branch(preds, set.combinations[static_cast<std::size_t>(j)], states, i, ds, rng,
                                    branch_next.row(i * k + j).data(), &r);
        branch_reward(i, j) = r;
        if (!ok) finite[static_cast<std::size_t>(i)] = 0;
      }
    }
    if (known_reward != nullptr) {
      const Vector r = (*known_reward)(states, actions);
      for (int j = 0; j < k; ++j) branch_reward.col(j) = r;
    }
    if (adjust != nullptr) (*adjust)(states, actions, branch_reward);

    std::vector<Eigen::Index> chosen(static_cast<std::size_t>(n));
    for (auto& c : chosen) c = static_cast<Eigen::Index>(rng.uniform_int(static_cast<std::size_t>(k)));

    std::vector<Eigen::Index> keep;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (finite[static_cast<std::size_t>(i)] && branch_reward.row(i).allFinite()) keep.push_back(i);
    }
    stats.truncated += static_cast<std::size_t>(n) - keep.size();
    const auto m = static_cast<Eigen::Index>(keep.size());
    Tensor s(m, ds), a(m, actions.cols()), s2(m, ds), bn(m * k, ds), br(m, k);
    Vector r(m), d = Vector::Zero(m);
    for (Eigen::Index t = 0; t < m; ++t) {
      const Eigen::Index i = keep[static_cast<std::size_t>(t)];
      const Eigen::Index c = chosen[static_cast<std::size_t>(i)];
      s.row(t) = states.row(i);
      a.row(t) = actions.row(i);
      s2.row(t) = branch_next.row(i * k + c);
      r(t) = branch_reward(i, c);
      bn.middleRows(t * k, k) = branch_next.middleRows(i * k, k);
      br.row(t) = branch_reward.row(i);
      reward_sum += r(t);
      if (k > 1) {
        const Tensor block = bn.middleRows(t * k, k);
        const Tensor centered = block.rowwise() - block.colwise().mean();
        var_sum += centered.array().square().mean();
      }
    }
    out.add_batch(s, a, r, s2, d, bn, br);
    stats.added += static_cast<std::size_t>(m);
    states = std::move(s2);
  }
  if (stats.added > 0) {
    stats.mean_reward = reward_sum / static_cast<double>(stats.added);
    stats.branch_variance = var_sum / static_cast<double>(stats.added);
  }
  return stats;
}

int rollout_horizon(int epoch, const HorizonSchedule& s) {
  if (s.start_epoch >= s.end_epoch) throw ConfigError("horizon schedule: need start_epoch < end_epoch");
  const double frac = static_cast<double>(epoch - s.start_epoch) / static_cast<double>(s.end_epoch - s.start_epoch);
  const double v = std::min(std::max(s.start_value + frac * (s.end_value - s.start_value), s.start_value), s.end_value);
  return static_cast<int>(std::floor(v));
}

}  // namespace cmbac::model
