#include "cmbac/diagnostics/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "cmbac/common/errors.hpp"
#include "cmbac/variants/variants.hpp"

namespace cmbac::diagnostics {

Vector head_std_uncertainty(const critic::CriticEnsemble& critics, const Tensor& states, const Tensor& actions) {
  Vector out = Vector::Zero(states.rows());
  for (int n = 0; n < critics.networks(); ++n) {
    const Tensor q = critics.online(n).values(states, actions);
    for (Eigen::Index i = 0; i < q.rows(); ++i) {
      const std::vector<double> row(q.row(i).data(), q.row(i).data() + q.cols());
      out(i) += population_std(row);
    }
  }
  return out / static_cast<double>(critics.networks());
}

double population_std(const std::vector<double>& xs) {
  if (xs.empty()) return 0.0;
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(xs.size()));
}

Vector global_uncertainty(const model::GaussianEnsemble& ensemble, const actor::SquashedGaussianPolicy& policy,
                          const Tensor& states, const Tensor& actions, double gamma, int horizon, Rng& rng) {
  if (horizon < 1) throw ConfigError("global_uncertainty: horizon must be >= 1");
  const Eigen::Index n = states.rows();
  const int ds = ensemble.state_dim();
  const auto& elites = ensemble.elites();
  Vector total = Vector::Zero(n);
  std::vector<char> alive(static_cast<std::size_t>(n), 1);
  Tensor s = states;
  Tensor a = actions;
  double discount = 1.0;
  for (int t = 0; t < horizon; ++t) {
    const Vector u = variants::mopo_uncertainty(ensemble, s, a);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (!alive[static_cast<std::size_t>(i)]) continue;
      if (!std::isfinite(u(i))) {
        alive[static_cast<std::size_t>(i)] = 0;
        continue;
      }
      total(i) += discount * u(i);
    }
    if (t + 1 == horizon) break;
    std::vector<model::MemberPrediction> preds;
    for (int e : elites) preds.push_back(ensemble.predict(e, s, a));
    Tensor next(n, ds);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& p = preds[rng.uniform_int(preds.size())];
      for (int d = 0; d < ds; ++d) {
        next(i, d) = s(i, d) + p.mean(i, d) + std::sqrt(p.var(i, d)) * rng.normal();
      }
      if (!next.row(i).allFinite()) {
        alive[static_cast<std::size_t>(i)] = 0;
        next.row(i) = s.row(i);
      }
    }
    s = std::move(next);
    a = policy.sample(s, rng).actions;
    discount *= gamma;
  }
  return total;
}

Vector mc_return(const envs::Environment& env, const actor::SquashedGaussianPolicy& policy, const Tensor& states,
                 const Tensor& actions, const McConfig& config, Rng& rng) {
  if (config.horizon < 1 || config.episodes < 1) throw ConfigError("mc_return: horizon and episodes must be >= 1");
  const Eigen::Index n = states.rows();
  Vector total = Vector::Zero(n);
  for (int ep = 0; ep < config.episodes; ++ep) {
    Tensor s = states;
    Tensor a = env.clip_actions(actions);
    Vector log_prob = Vector::Zero(n);
    Vector ret = Vector::Zero(n);
    double discount = 1.0;
    for (int t = 0; t < config.horizon; ++t) {
      Tensor s2;
      Vector r;
      env.step(s, a, s2, r, rng);
      ret += discount * r;
      if (t > 0) ret -= discount * config.alpha * log_prob;
      discount *= config.gamma;
      s = std::move(s2);
      if (t + 1 < config.horizon) {
        auto sample = policy.sample(s, rng);
        a = std::move(sample.actions);
        log_prob = std::move(sample.log_prob);
      }
    }
    total += ret;
  }
  return total / static_cast<double>(config.episodes);
}

std::vector<double> average_ranks(const std::vector<double>& x) {
  const std::size_t n = x.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[idx[t]] = r;
    i = j + 1;
  }
  return ranks;
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw ConfigError("pearson: need two equal-length series of size >= 2");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return sxy / std::sqrt(sxx * syy);
}

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  return pearson(average_ranks(x), average_ranks(y));
}

void sample_eval_points(const envs::Environment& env, const actor::SquashedGaussianPolicy& policy, int episodes,
                        int n_points, Rng& rng, Tensor& states, Tensor& actions) {
  const auto& spec = env.spec();
  std::vector<Vector> vs, va;
  envs::EpisodeRunner runner(env);
  for (int ep = 0; ep < episodes; ++ep) {
    runner.reset(rng);
    for (int t = 0; t < spec.horizon; ++t) {
      const Tensor s = runner.state().transpose();
      const Tensor a = policy.sample(s, rng).actions;
      const Vector action = a.row(0).transpose();
      vs.push_back(runner.state());
      va.push_back(action);
      runner.step(action, rng);
    }
  }
  if (n_points < 1 || static_cast<std::size_t>(n_points) > vs.size()) {
    throw ConfigError("sample_eval_points: requested " + std::to_string(n_points) + " points from " +
                      std::to_string(vs.size()) + " visited");
  }
  std::vector<std::size_t> order(vs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = 0; i < static_cast<std::size_t>(n_points); ++i) {
    const std::size_t j = i + rng.uniform_int(order.size() - i);
    std::swap(order[i], order[j]);
  }
  states.resize(n_points, spec.state_dim);
  actions.resize(n_points, spec.action_dim);
  for (int i = 0; i < n_points; ++i) {
    states.row(i) = vs[order[static_cast<std::size_t>(i)]].transpose();
    actions.row(i) = va[order[static_cast<std::size_t>(i)]].transpose();
  }
}

namespace {

std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

std::ofstream open_csv(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw SerializationError("cannot open '" + path + "' for writing");
  out.precision(17);
  return out;
}

void write_header_prefix(std::ofstream& out, Eigen::Index ds, Eigen::Index da) {
  out << "point";
  for (Eigen::Index d = 0; d < ds; ++d) out << ",s" << d;
  for (Eigen::Index d = 0; d < da; ++d) out << ",a" << d;
}

void write_row_prefix(std::ofstream& out, std::size_t i, const Vector& s, const Vector& a) {
  out << i;
  for (Eigen::Index d = 0; d < s.size(); ++d) out << ',' << s(d);
  for (Eigen::Index d = 0; d < a.size(); ++d) out << ',' << a(d);
}

}  // namespace

ScatterResult emit_scatter(const envs::Environment& env, const actor::SquashedGaussianPolicy& policy,
                           const critic::CriticEnsemble& critics, const actor::QAggregator& aggregate,
                           const model::GaussianEnsemble& ensemble, const ScatterConfig& config, Rng& rng) {
  Tensor s, a;
  sample_eval_points(env, policy, config.eval_episodes, config.n_points, rng, s, a);
  std::vector<Tensor> per_net;
  for (int n = 0; n < critics.networks(); ++n) per_net.push_back(critics.online(n).values(s, a));
  const Vector q = aggregate.plain(per_net);
  const Vector mc = mc_return(env, policy, s, a, config.mc, rng);
  const Vector hs = head_std_uncertainty(critics, s, a);
  const Vector gu = global_uncertainty(ensemble, policy, s, a, config.mc.gamma, config.global_horizon, rng);
  ScatterResult result;
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    ScatterRecord r;
    r.state = s.row(i).transpose();
    r.action = a.row(i).transpose();
    r.q_estimate = q(i);
    r.mc_return = mc(i);
    r.abs_error = std::abs(q(i) - mc(i));
    r.head_std = hs(i);
    r.global = gu(i);
    result.records.push_back(std::move(r));
  }
  std::vector<double> err;
  for (const auto& r : result.records) err.push_back(r.abs_error);
  result.spearman_head_std = spearman(to_std(hs), err);
  result.spearman_global = spearman(to_std(gu), err);
  return result;
}

void write_scatter_csv(const std::string& path, const ScatterResult& result) {
  auto out = open_csv(path);
  const auto ds = result.records.empty() ? 0 : result.records.front().state.size();
  const auto da = result.records.empty() ? 0 : result.records.front().action.size();
  write_header_prefix(out, ds, da);
  out << ",q_estimate,mc_return,abs_error,head_std,global\n";
  for (std::size_t i = 0; i < result.records.size(); ++i) {
    const auto& r = result.records[i];
    write_row_prefix(out, i, r.state, r.action);
    out << ',' << r.q_estimate << ',' << r.mc_return << ',' << r.abs_error << ',' << r.head_std << ',' << r.global
        << '\n';
  }
}

std::vector<ModelEstimateRecord> emit_model_estimates(const envs::Environment& env,
                                                      const actor::SquashedGaussianPolicy& policy,
                                                      const critic::CriticEnsemble& critics,
                                                      const ModelEstimateConfig& config, Rng& rng) {
  Tensor s, a;
  sample_eval_points(env, policy, config.eval_episodes, config.n_points, rng, s, a);
  const Tensor q = critics.online(0).values(s, a);
  const Vector mc = mc_return(env, policy, s, a, config.mc, rng);
  std::vector<ModelEstimateRecord> out;
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    out.push_back({s.row(i).transpose(), a.row(i).transpose(), q.row(i).transpose(), mc(i)});
  }
  return out;
}

void write_model_estimates_csv(const std::string& path, const std::vector<ModelEstimateRecord>& records) {
  auto out = open_csv(path);
  const auto ds = records.empty() ? 0 : records.front().state.size();
  const auto da = records.empty() ? 0 : records.front().action.size();
  const auto k = records.empty() ? 0 : records.front().heads.size();
  write_header_prefix(out, ds, da);
  for (Eigen::Index j = 0; j < k; ++j) out << ",q" << j;
  out << ",mc_return\n";
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    write_row_prefix(out, i, r.state, r.action);
    for (Eigen::Index j = 0; j < r.heads.size(); ++j) out << ',' << r.heads(j);
    out << ',' << r.mc_return << '\n';
  }
}

}  // namespace cmbac::diagnostics
