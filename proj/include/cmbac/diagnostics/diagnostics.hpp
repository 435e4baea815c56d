#pragma once

#include <string>
#include <vector>

#include "cmbac/actor/actor.hpp"
#include "cmbac/critic/critic.hpp"
#include "cmbac/envs/envs.hpp"
#include "cmbac/model/ensemble.hpp"

namespace cmbac::diagnostics {

using nn::Tensor;
using nn::Vector;

/// Population std across the K heads, averaged over networks.
Vector head_std_uncertainty(const critic::CriticEnsemble& critics, const Tensor& states, const Tensor& actions);
double population_std(const std::vector<double>& xs);

/// sum_{t<T} gamma^t u(s_t, a_t) along a rollout inside the learned model
/// that starts at (s, a) and then follows the policy. Each step moves with a
/// uniformly chosen elite. A row stops accumulating at its first non-finite
/// model output.
Vector global_uncertainty(const model::GaussianEnsemble& ensemble, const actor::SquashedGaussianPolicy& policy,
                          const Tensor& states, const Tensor& actions, double gamma, int horizon, Rng& rng);

struct McConfig {
  double gamma = 0.99;
  int horizon = 500;   // steps per rollout, independent of the episode horizon
  int episodes = 1;    // rollouts averaged per start
  double alpha = 0.0;  // soft returns subtract alpha log pi for every step after the first
};

/// Monte-Carlo estimate of Q(s, a) in the true environment: take `a` at `s`,
/// then follow the policy. Returns one averaged discounted return per row.
Vector mc_return(const envs::Environment& env, const actor::SquashedGaussianPolicy& policy, const Tensor& states,
                 const Tensor& actions, const McConfig& config, Rng& rng);

/// Spearman rank correlation (average ranks for ties, then Pearson). NaN
/// when either input is constant.
double spearman(const std::vector<double>& x, const std::vector<double>& y);
std::vector<double> average_ranks(const std::vector<double>& x);
double pearson(const std::vector<double>& x, const std::vector<double>& y);

/// State-action pairs visited by the stochastic policy over `episodes`
/// evaluation episodes, of which `n_points` are picked uniformly without
/// replacement.
void sample_eval_points(const envs::Environment& env, const actor::SquashedGaussianPolicy& policy, int episodes,
                        int n_points, Rng& rng, Tensor& states, Tensor& actions);

struct ScatterRecord {
  Vector state;
  Vector action;
  double q_estimate = 0.0;
  double mc_return = 0.0;
  double abs_error = 0.0;
  double head_std = 0.0;
  double global = 0.0;
};

struct ScatterResult {
  std::vector<ScatterRecord> records;
  double spearman_head_std = 0.0;
  double spearman_global = 0.0;
};

struct ScatterConfig {
  int n_points = 200;
  int eval_episodes = 20;
  McConfig mc;
  int global_horizon = 50;
};

/// Head-std and Global uncertainty against |Qhat - MC return| at evaluation
/// points. Qhat is the aggregated estimate the policy is trained against.
ScatterResult emit_scatter(const envs::Environment& env, const actor::SquashedGaussianPolicy& policy,
                           const critic::CriticEnsemble& critics, const actor::QAggregator& aggregate,
                           const model::GaussianEnsemble& ensemble, const ScatterConfig& config, Rng& rng);

// Columns: point,s0..,a0..,q_estimate,mc_return,abs_error,head_std,global
void write_scatter_csv(const std::string& path, const ScatterResult& result);

struct ModelEstimateRecord {
  Vector state;
  Vector action;
  Vector heads;  // K values of the first network, head order
  double mc_return = 0.0;
};

struct ModelEstimateConfig {
  int n_points = 200;
  int eval_episodes = 20;
  McConfig mc;
};

std::vector<ModelEstimateRecord> emit_model_estimates(const envs::Environment& env,
                                                      const actor::SquashedGaussianPolicy& policy,
                                                      const critic::CriticEnsemble& critics,
                                                      const ModelEstimateConfig& config, Rng& rng);

// Columns: point,s0..,a0..,q0..q{K-1},mc_return
void write_model_estimates_csv(const std::string& path, const std::vector<ModelEstimateRecord>& records);

}  // namespace cmbac::diagnostics
