#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <memory>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "../support/gradcheck.hpp"
#include "cmbac/actor/actor.hpp"
#include "cmbac/critic/critic.hpp"
#include "cmbac/diagnostics/diagnostics.hpp"
#include "cmbac/harness/config.hpp"
#include "cmbac/harness/trainer.hpp"
#include "cmbac/model/ensemble.hpp"
#include "cmbac/model/rollout.hpp"
#include "cmbac/nn/serialize.hpp"
#include "cmbac/variants/variants.hpp"

using namespace cmbac;
using nn::Parameter;
using nn::Tape;
using nn::Tensor;
using nn::Var;
using nn::Vector;
using testing::gradient_check;
using testing::random_tensor;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double x) {
  std::ostringstream o;
  o.precision(4);
  o << x;
  return o.str();
}

std::filesystem::path g_out = "acceptance_out";

harness::TrainerConfig config_file(const std::string& name) {
  return harness::load_config(std::string(CMBAC_SOURCE_DIR) + "/configs/" + name);
}

// ---- combinatorics ----

Outcome combinatorics() {
  const auto t0 = Clock::now();
  bool ok = model::enumerate_combinations(5, 2).size() == 10;
  int cases = 0;
  for (int n = 1; n <= 7; ++n) {
    for (int m = 1; m <= n; ++m) {
      std::set<std::vector<int>> brute;
      for (unsigned mask = 0; mask < (1u << n); ++mask) {
        if (std::popcount(mask) != m) continue;
        std::vector<int> c;
        for (int i = 0; i < n; ++i)
          if (mask & (1u << i)) c.push_back(i);
        brute.insert(c);
      }
      const auto got = model::enumerate_combinations(n, m);
      const std::set<std::vector<int>> got_set(got.begin(), got.end());
      ok = ok && got.size() == brute.size() && got_set == brute;
      ++cases;
    }
  }
  const double dt = seconds_since(t0);
  return {ok && dt < 1.0, "C(5,2)=" + std::to_string(model::enumerate_combinations(5, 2).size()) + ", " +
                              std::to_string(cases) + " (N,M) pairs vs brute force, " + fmt(dt) + " s"};
}

// ---- gradient suite ----

Outcome gradients() {
  const auto t0 = Clock::now();
  double nll_max = 0, critic_max = 0, actor_max = 0;
  for (int p = 0; p < 20; ++p) {
    Rng rng(1000 + p);
    {
      model::GaussianDynamicsNet net(4, 3, {8, 8}, nn::Activation::Tanh, rng);
      const Tensor x = random_tensor(6, 4, rng), y = random_tensor(6, 3, rng);
      auto loss = [&](Tape& t) {
        auto pr = net.forward(t, t.constant(x));
        return nn::add(model::gaussian_nll(t, pr.mean, pr.logvar, y), net.bound_penalty(t, 0.01));
      };
      nll_max = std::max(nll_max, gradient_check(net.parameters(), loss).max_rel_error);
    }
    {
      critic::MultiHeadQ q(2, 2, 10, {8, 8}, nn::Activation::Tanh, rng);
      const Tensor s = random_tensor(6, 2, rng), a = random_tensor(6, 2, rng), y = random_tensor(6, 10, rng);
      auto loss = [&](Tape& t) {
        return critic::critic_loss(t, q.forward(t, t.constant(s), t.constant(a), true), y);
      };
      critic_max = std::max(critic_max, gradient_check(q.params().parameters(), loss).max_rel_error);
    }
    {
      actor::SquashedGaussianPolicy pi(2, {-1, -1}, {1, 1}, {8, 8}, nn::Activation::Tanh, rng);
      critic::CriticConfig cc;
      cc.hidden = {8, 8};
      cc.activation = nn::Activation::Tanh;
      critic::CriticEnsemble critics(2, 2, 10, cc, rng);
      const Tensor s = random_tensor(6, 2, rng);
      const Tensor noise = pi.draw_noise(6, rng);
      const auto agg = actor::conservative_aggregator(1);
      auto loss = [&](Tape& t) { return actor::actor_loss(t, pi, s, noise, critics, 0.2, agg); };
      actor_max = std::max(actor_max, gradient_check(pi.params().parameters(), loss).max_rel_error);
    }
  }
  const double dt = seconds_since(t0);
  const bool ok = nll_max < 1e-4 && critic_max < 1e-4 && actor_max < 1e-4 && dt < 120.0;
  return {ok, "max rel error nll " + fmt(nll_max) + ", J_Q " + fmt(critic_max) + ", J_pi " + fmt(actor_max) +
                  " over 20 points each, " + fmt(dt) + " s"};
}

// ---- MBPO reduction ----

// Single-head clipped-double soft actor-critic written directly against the
// nn primitives and the policy class.
struct ReferenceSac {
  nn::MlpParams q[2];
  nn::MlpParams q_target[2];
  nn::AdamState q_adam[2];
  actor::SquashedGaussianPolicy pi;
  nn::AdamState pi_adam;
  Parameter log_alpha;
  nn::AdamState alpha_adam;
  double gamma, tau, target_entropy;

  ReferenceSac(int ds, int da, const std::vector<int>& q_hidden, const std::vector<int>& pi_hidden, double lr,
               double alpha0, double gamma_, double tau_, Rng& init)
      : gamma(gamma_), tau(tau_), target_entropy(-static_cast<double>(da)) {
    for (auto& net : q) {
      nn::MlpShape shape;
      shape.input_dim = ds + da;
      shape.hidden = q_hidden;
      shape.activation = nn::Activation::Relu;
      shape.head_widths = {1};
      net = nn::make_mlp(shape, init);
    }
    for (int n = 0; n < 2; ++n) {
      q_target[n] = q[n];
      auto ps = q[n].parameters();
      q_adam[n] = nn::make_adam(ps, {.lr = lr});
    }
    pi = actor::SquashedGaussianPolicy(ds, std::vector<double>(da, -1.0), std::vector<double>(da, 1.0), pi_hidden,
                                       nn::Activation::Relu, init);
    auto pp = pi.params().parameters();
    pi_adam = nn::make_adam(pp, {.lr = lr});
    log_alpha = Parameter(Tensor::Constant(1, 1, std::log(alpha0)));
    Parameter* la = &log_alpha;
    alpha_adam = nn::make_adam(std::span<Parameter* const>(&la, 1), {.lr = lr});
  }

  void update(const model::ModelBatch& b, Rng& critic_rng, Rng& actor_rng) {
    const double alpha = std::exp(log_alpha.value(0, 0));
    const auto next = pi.sample(b.next_states, critic_rng);
    const Tensor in_next = nn::hcat(b.next_states, next.actions);
    const Tensor q1n = nn::mlp_forward(q_target[0], in_next);
    const Tensor q2n = nn::mlp_forward(q_target[1], in_next);
    Tensor y(b.states.rows(), 1);
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
      const double soft = std::min(q1n(i, 0), q2n(i, 0)) - alpha * next.log_prob(i);
      y(i, 0) = b.rewards(i) + gamma * (1.0 - b.dones(i)) * soft;
    }
    for (auto& net : q) {
      auto ps = net.parameters();
      nn::zero_grad(ps);
      Tape t;
      Var pred = nn::mlp_forward(t, net, nn::concat_cols(t.constant(b.states), t.constant(b.actions)), true);
      Var loss = nn::mean(nn::scale(nn::square(nn::sub(pred, t.constant(y))), 0.5));
      t.backward(loss);
    }
    for (int n = 0; n < 2; ++n) {
      auto ps = q[n].parameters();
      nn::adam_step(q_adam[n], ps);
    }
    for (int n = 0; n < 2; ++n) {
      auto tp = q_target[n].parameters();
      auto op = q[n].parameters();
      for (std::size_t i = 0; i < tp.size(); ++i) tp[i]->value = (1.0 - tau) * tp[i]->value + tau * op[i]->value;
    }

    auto pp = pi.params().parameters();
    nn::zero_grad(pp);
    const Tensor noise = pi.draw_noise(b.states.rows(), actor_rng);
    Vector log_prob;
    {
      Tape t;
      Var s = t.constant(b.states);
      auto smp = pi.forward(t, s, noise, true);
      Var q1 = nn::mlp_forward(t, q[0], nn::concat_cols(s, smp.actions), false);
      Var q2 = nn::mlp_forward(t, q[1], nn::concat_cols(s, smp.actions), false);
      Var loss = nn::mean(nn::sub(nn::scale(smp.log_prob, alpha), nn::minimum(q1, q2)));
      t.backward(loss);
      log_prob = Eigen::Map<const Vector>(smp.log_prob.value().data(), b.states.rows());
    }
    nn::adam_step(pi_adam, pp);

    log_alpha.grad(0, 0) = -(log_prob.array() + target_entropy).mean();
    Parameter* la = &log_alpha;
    nn::adam_step(alpha_adam, std::span<Parameter* const>(&la, 1));
  }
};

bool same_params(const nn::MlpParams& a, const nn::MlpParams& b) {
  auto pa = a.parameters();
  auto pb = b.parameters();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (pa[i]->value.rows() != pb[i]->value.rows() || pa[i]->value.cols() != pb[i]->value.cols()) return false;
    if (!(pa[i]->value.array() == pb[i]->value.array()).all()) return false;
  }
  return true;
}

model::ModelBatch synthetic_batch(int b, int ds, int da, Rng& rng) {
  model::ModelBatch batch;
  batch.states = random_tensor(b, ds, rng);
  batch.actions = random_tensor(b, da, rng);
  batch.rewards = Vector(b);
  batch.dones = Vector(b);
  for (int i = 0; i < b; ++i) {
    batch.rewards(i) = rng.uniform(-1, 1);
    batch.dones(i) = rng.uniform() < 0.1 ? 1.0 : 0.0;
  }
  batch.next_states = random_tensor(b, ds, rng);
  batch.branch_next_states = batch.next_states;
  batch.branch_rewards = batch.rewards;
  batch.heads = 1;
  return batch;
}

Outcome mbpo_reduction() {
  const int ds = 2, da = 2, updates = 100;
  const std::vector<int> q_hidden{32, 32}, pi_hidden{32, 32};
  const double lr = 1e-3, alpha0 = 0.2, gamma = 0.99, tau = 0.005;

  const auto variant = variants::resolve_variant(variants::AlgoVariant::Mbpo, 5, {});
  harness::AgentConfig ac;
  ac.critic.hidden = q_hidden;
  ac.critic.lr = lr;
  ac.critic.tau = tau;
  ac.actor.hidden = pi_hidden;
  ac.actor.lr = lr;
  ac.alpha_init = alpha0;
  ac.alpha_lr = lr;
  ac.gamma = gamma;
  Rng init_a(11), init_b(11);
  harness::Agent agent(ds, {-1, -1}, {1, 1}, variant, ac, init_a);
  ReferenceSac ref(ds, da, q_hidden, pi_hidden, lr, alpha0, gamma, tau, init_b);

  auto identical = [&] {
    bool ok = agent.alpha() == std::exp(ref.log_alpha.value(0, 0));
    for (int n = 0; n < 2; ++n) {
      ok = ok && same_params(agent.critics().online(n).params(), ref.q[n]);
      ok = ok && same_params(agent.critics().target(n).params(), ref.q_target[n]);
    }
    return ok && same_params(agent.policy().params(), ref.pi.params());
  };

  bool ok = variant.heads == 1 && variant.drop == 0 && identical();
  Rng data(12), c1(13), c2(13), a1(14), a2(14);
  int matched = 0;
  for (int u = 0; u < updates && ok; ++u) {
    const auto batch = synthetic_batch(64, ds, da, data);
    agent.update(batch, c1, a1);
    ref.update(batch, c2, a2);
    ok = identical();
    if (ok) ++matched;
  }
  return {ok, "K=" + std::to_string(variant.heads) + " L=" + std::to_string(variant.drop) + ", " +
                  std::to_string(matched) + "/" + std::to_string(updates) + " updates bit-identical"};
}

// ---- aggregation oracles ----

double brute_bottom(std::vector<double> h, int drop) {
  std::sort(h.begin(), h.end());
  const std::size_t keep = h.size() - static_cast<std::size_t>(drop);
  return std::accumulate(h.begin(), h.begin() + static_cast<long>(keep), 0.0) / static_cast<double>(keep);
}

double brute_std(const std::vector<double>& h) {
  const double m = std::accumulate(h.begin(), h.end(), 0.0) / static_cast<double>(h.size());
  double v = 0;
  for (double x : h) v += (x - m) * (x - m);
  return std::sqrt(v / static_cast<double>(h.size()));
}

Outcome aggregation() {
  Rng rng(21);
  const int vectors = 10000, k = 10, drop = 1;
  const double lambda = 0.1;
  double max_err = 0;
  int chain_violations = 0;
  for (int v = 0; v < vectors; ++v) {
    std::vector<Tensor> q{random_tensor(1, k, rng, -5, 5), random_tensor(1, k, rng, -5, 5)};
    std::vector<double> h[2];
    for (int n = 0; n < 2; ++n) h[n].assign(q[n].data(), q[n].data() + k);
    const double b0 = brute_bottom(h[0], drop), b1 = brute_bottom(h[1], drop);
    const double o_cons = std::min(b0, b1);
    const double o_redq = 0.5 * (b0 + b1);
    const double o_min = std::min(*std::min_element(h[0].begin(), h[0].end()), *std::min_element(h[1].begin(), h[1].end()));
    auto mean_of = [](const std::vector<double>& x) {
      return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
    };
    const double o_up = std::min(mean_of(h[0]) - lambda * brute_std(h[0]), mean_of(h[1]) - lambda * brute_std(h[1]));
    const double o_mean = 0.5 * (mean_of(h[0]) + mean_of(h[1]));

    const double cons = actor::conservative_q(q, drop)(0);
    const double redq = variants::redq_cmbac_q(q, drop)(0);
    const double mn = variants::mincmbac_q(q)(0);
    const double up = variants::cmbacup_q(q, lambda)(0);
    max_err = std::max({max_err, std::abs(cons - o_cons), std::abs(redq - o_redq), std::abs(mn - o_min),
                        std::abs(up - o_up)});
    if (!(mn <= cons && cons <= redq && redq <= o_mean + 1e-12)) ++chain_violations;
  }
  return {max_err <= 1e-12 && chain_violations == 0,
          std::to_string(vectors) + " vectors, max |err| " + fmt(max_err) + ", ordering violations " +
              std::to_string(chain_violations)};
}

// ---- desk learning ----

Outcome desk_learning() {
  const auto t0 = Clock::now();
  const auto base = config_file("point2d_desk.json");
  const int seeds = 5;
  std::vector<std::unique_ptr<harness::Trainer>> trainers;
  double oracle = 0;
  for (int s = 0; s < seeds; ++s) {
    auto c = base;
    c.seed = static_cast<std::uint64_t>(s);
    oracle += harness::scripted_oracle(c, c.eval_episodes).mean / seeds;
    trainers.push_back(std::make_unique<harness::Trainer>(c));
  }
  const double target = 0.8 * oracle;
  double best = -1e300;
  int reached = -1;
  for (int e = 1; e <= std::min(base.epochs, 100) && seconds_since(t0) < 900.0; ++e) {
    double mean = 0;
    for (auto& t : trainers) {
      const auto m = t->run_epoch();
      mean += (m.eval_return_mean ? *m.eval_return_mean : -1e300) / seeds;
    }
    best = std::max(best, mean);
    std::cerr << "  desk epoch " << e << " seed-mean eval " << fmt(mean) << " target " << fmt(target) << "\n";
    if (mean >= target) {
      reached = e;
      break;
    }
  }
  const double dt = seconds_since(t0);
  const bool ok = reached > 0 && dt < 900.0;
  return {ok, "oracle " + fmt(oracle) + ", target " + fmt(target) + ", best seed-mean " + fmt(best) +
                  (reached > 0 ? ", reached at epoch " + std::to_string(reached) : ", not reached") + ", " +
                  fmt(dt) + " s"};
}

// ---- uncertainty quality ----

Outcome uncertainty_quality() {
  const auto base = config_file("point2d_desk.json");
  const int mid = base.epochs / 2;
  int passes = 0;
  std::ostringstream detail;
  for (int s = 0; s < 3; ++s) {
    auto c = base;
    c.seed = static_cast<std::uint64_t>(s);
    harness::Trainer t(c);
    for (int e = 0; e < mid; ++e) t.run_epoch();
    diagnostics::ScatterConfig sc;
    sc.n_points = 200;
    sc.eval_episodes = c.diag_eval_episodes;
    sc.mc = {c.gamma, c.mc_horizon, c.mc_episodes, t.agent().alpha()};
    sc.global_horizon = c.global_horizon > 0 ? c.global_horizon : t.env().spec().horizon;
    Rng rng = Rng::derive(c.seed, "diagnostics");
    const auto res = diagnostics::emit_scatter(t.env(), t.agent().policy(), t.agent().critics(),
                                               t.agent().aggregator(), t.ensemble(), sc, rng);
    diagnostics::write_scatter_csv((g_out / ("scatter_seed" + std::to_string(s) + ".csv")).string(), res);
    const bool pass = res.spearman_head_std > 0.2 && res.spearman_head_std > res.spearman_global;
    if (pass) ++passes;
    detail << (s ? "; " : "") << "seed " << s << " head-std " << fmt(res.spearman_head_std) << " global "
           << fmt(res.spearman_global);
  }
  return {passes >= 2, std::to_string(passes) + "/3 seeds pass at epoch " + std::to_string(mid) + " (" +
                           detail.str() + ")"};
}

// ---- overestimation tail ----

Outcome overestimation_tail() {
  auto base = config_file("point2d_desk.json");
  base.variant = "SCMBAC";
  base.epochs /= 2;
  int passes = 0;
  std::ostringstream detail;
  for (int s = 0; s < 3; ++s) {
    auto c = base;
    c.seed = static_cast<std::uint64_t>(s);
    harness::Trainer t(c);
    while (!t.finished()) t.run_epoch();
    diagnostics::ModelEstimateConfig mc;
    mc.n_points = 200;
    mc.eval_episodes = c.diag_eval_episodes;
    mc.mc = {c.gamma, c.mc_horizon, c.mc_episodes, t.agent().alpha()};
    Rng rng = Rng::derive(c.seed, "diagnostics");
    const auto recs = diagnostics::emit_model_estimates(t.env(), t.agent().policy(), t.agent().critics(), mc, rng);
    diagnostics::write_model_estimates_csv((g_out / ("model_estimates_seed" + std::to_string(s) + ".csv")).string(),
                                           recs);
    const int drop = t.variant().drop;
    int over_max = 0, over_bottom = 0;
    for (const auto& r : recs) {
      const Tensor heads = r.heads.transpose();
      if (heads.maxCoeff() > r.mc_return) ++over_max;
      if (actor::bottom_mean(heads, drop)(0) > r.mc_return) ++over_bottom;
    }
    const bool pass = over_max > 0 && over_max >= 2 * over_bottom;
    if (pass) ++passes;
    detail << (s ? "; " : "") << "seed " << s << " max-head " << over_max << " bottom " << over_bottom;
  }
  return {passes >= 2, std::to_string(passes) + "/3 seeds pass over 200 points at epoch " + std::to_string(base.epochs) +
                           " (" + detail.str() + ")"};
}

// ---- noise robustness ----

double median(std::vector<double> x) {
  std::sort(x.begin(), x.end());
  const std::size_t n = x.size();
  return n % 2 ? x[n / 2] : 0.5 * (x[n / 2 - 1] + x[n / 2]);
}

Outcome noise_robustness() {
  const auto base = config_file("point2d_noisy.json");
  std::vector<double> finals[2];
  const char* names[2] = {"CMBAC", "MBPO"};
  for (int v = 0; v < 2; ++v) {
    for (int s = 0; s < 5; ++s) {
      auto c = base;
      c.variant = names[v];
      c.seed = static_cast<std::uint64_t>(s);
      harness::Trainer t(c);
      harness::EpochMetrics m;
      while (!t.finished()) m = t.run_epoch();
      finals[v].push_back(m.eval_return_mean ? *m.eval_return_mean : -1e300);
      std::cerr << "  noisy " << names[v] << " seed " << s << " final " << fmt(finals[v].back()) << "\n";
    }
  }
  const double mc = median(finals[0]), mm = median(finals[1]);
  return {mc >= mm, "sigma " + fmt(base.noise_sigma) + ", " + std::to_string(base.epochs) +
                        " epochs, median final CMBAC " + fmt(mc) + " vs MBPO " + fmt(mm)};
}

// ---- horizon schedule ----

Outcome horizon_schedule() {
  const model::HorizonSchedule h{1.0, 15.0, 20, 100};
  bool ok = true;
  for (int e = 0; e <= 20; ++e) ok = ok && model::rollout_horizon(e, h) == 1;
  for (int e = 100; e <= 200; ++e) ok = ok && model::rollout_horizon(e, h) == 15;
  const int mid = model::rollout_horizon(60, h);
  ok = ok && mid == 8;
  return {ok, "f(20)=" + std::to_string(model::rollout_horizon(20, h)) + " f(60)=" + std::to_string(mid) +
                  " f(100)=" + std::to_string(model::rollout_horizon(100, h))};
}

// ---- determinism ----

Outcome determinism() {
  auto c = config_file("point2d_desk.json");
  c.epochs = 2;
  c.seed = 3;
  const auto d1 = g_out / "determinism_a", d2 = g_out / "determinism_b";
  harness::run_training(c, d1.string());
  harness::run_training(c, d2.string());
  const std::string m1 = nn::read_file((d1 / "metrics.jsonl").string());
  const std::string m2 = nn::read_file((d2 / "metrics.jsonl").string());
  const bool ok = !m1.empty() && m1 == m2;
  return {ok, std::to_string(m1.size()) + " metric bytes, " + (ok ? "identical" : "different")};
}

struct Criterion {
  std::string name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> only;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--out" && i + 1 < argc) {
      g_out = argv[++i];
    } else {
      only.push_back(arg);
    }
  }
  std::filesystem::create_directories(g_out);

  const std::vector<Criterion> criteria{
      {"combinatorics", combinatorics},
      {"gradient_suite", gradients},
      {"mbpo_reduction", mbpo_reduction},
      {"aggregation_oracles", aggregation},
      {"desk_learning", desk_learning},
      {"uncertainty_quality", uncertainty_quality},
      {"overestimation_tail", overestimation_tail},
      {"noise_robustness", noise_robustness},
      {"horizon_schedule", horizon_schedule},
      {"determinism", determinism},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.name) == only.end()) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::cout << (o.pass ? "PASS " : "FAIL ") << c.name << ": " << o.detail << " [" << fmt(seconds_since(t0))
              << " s]" << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
