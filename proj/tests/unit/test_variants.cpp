#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "../support/gradcheck.hpp"
#include "../support/tiny_config.hpp"
#include "cmbac/common/errors.hpp"
#include "cmbac/harness/trainer.hpp"
#include "cmbac/variants/variants.hpp"

using namespace cmbac;
using namespace cmbac::variants;
using cmbac::testing::random_tensor;

namespace {

Tensor row(std::initializer_list<double> xs) {
  Tensor t(1, static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) t(0, i++) = x;
  return t;
}

// Sets member m to a constant prediction with variance var_d per output.
void set_member_variance(model::GaussianEnsemble& ens, int m, const std::vector<double>& var) {
  auto& net = ens.net(m);
  for (auto* p : net.net.parameters()) p->value.setZero();
  const int d = net.output_dim();
  net.max_logvar.value.setConstant(50.0);
  net.min_logvar.value.setConstant(-50.0);
  // lv = min + softplus(max - softplus(max - raw) - min) equals raw to double precision here.
  for (int k = 0; k < d; ++k) net.net.layers.back().bias.value(0, d + k) = std::log(var[static_cast<std::size_t>(k)]);
}

model::EnsembleConfig tiny_ensemble(int size, int elites) {
  model::EnsembleConfig c;
  c.ensemble_size = size;
  c.elite_count = elites;
  c.hidden = {4};
  return c;
}

double mean_of(const Tensor& t) { return t.mean(); }

double pop_std(const Tensor& t) {
  const double m = t.mean();
  return std::sqrt((t.array() - m).square().mean());
}

}  // namespace

TEST_CASE("variant names") {
  for (auto v : all_variants()) CHECK(parse_variant(to_string(v)) == v);
  CHECK(parse_variant("redq-cmbac") == AlgoVariant::RedqCmbac);
  CHECK(parse_variant("mopo-online") == AlgoVariant::MopoOnline);
  CHECK(all_variants().size() == 10);
  CHECK_THROWS_AS(parse_variant("SAC"), ConfigError);
}

TEST_CASE("variant resolution table") {
  const VariantKnobs k;
  const auto cmbac = resolve_variant(AlgoVariant::Cmbac, 5, k);
  CHECK(cmbac.heads == 10);
  CHECK(cmbac.drop == 1);
  CHECK(cmbac.critic_networks == 2);
  CHECK(cmbac.target_rule == critic::TargetRule::PerHead);

  const auto mbpo = resolve_variant(AlgoVariant::Mbpo, 5, k);
  CHECK(mbpo.heads == 1);
  CHECK(mbpo.drop == 0);
  CHECK_FALSE(mbpo.big_critic);
  CHECK(resolve_variant(AlgoVariant::BMbpo, 5, k).big_critic);
  CHECK(resolve_variant(AlgoVariant::BLmeq, 5, k).heads == 10);
  CHECK(resolve_variant(AlgoVariant::BLmeq, 5, k).drop == 0);
  CHECK(resolve_variant(AlgoVariant::Mbpoeq, 5, k).target_rule == critic::TargetRule::Shared);
  CHECK(resolve_variant(AlgoVariant::Cmbacup, 5, k).aggregation == Aggregation::Penalized);
  CHECK(resolve_variant(AlgoVariant::Mincmbac, 5, k).aggregation == Aggregation::Minimum);
  CHECK(resolve_variant(AlgoVariant::RedqCmbac, 5, k).aggregation == Aggregation::Average);
  const auto mopo = resolve_variant(AlgoVariant::MopoOnline, 5, k);
  CHECK(mopo.heads == 1);
  CHECK(mopo.mopo_penalty == 1.0);
  const auto scmbac = resolve_variant(AlgoVariant::Scmbac, 5, k);
  CHECK(scmbac.critic_networks == 1);
  CHECK_FALSE(scmbac.entropy);
  CHECK(scmbac.heads == 10);

  CHECK_THROWS_AS(resolve_variant(AlgoVariant::Cmbac, 5, VariantKnobs{.members_per_model = 6}), ConfigError);
  CHECK_THROWS_AS(resolve_variant(AlgoVariant::Cmbac, 5, VariantKnobs{.drop = 10}), ConfigError);
  CHECK_THROWS_AS(resolve_variant(AlgoVariant::MopoOnline, 5, VariantKnobs{.mopo_penalty = -1}), ConfigError);
  CHECK(resolve_variant(AlgoVariant::Cmbac, 5, VariantKnobs{.members_per_model = 5, .drop = 0}).heads == 1);
}

TEST_CASE("mopo uncertainty examples") {
  Rng rng(1);
  model::GaussianEnsemble ens(2, 1, tiny_ensemble(3, 2), rng);
  for (int m = 0; m < 3; ++m) set_member_variance(ens, m, {1, 1, 1});
  const Tensor s = random_tensor(4, 2, rng), a = random_tensor(4, 1, rng);
  const Vector u = mopo_uncertainty(ens, s, a);
  for (int i = 0; i < 4; ++i) CHECK(u(i) == doctest::Approx(std::sqrt(3.0)).epsilon(1e-9));

  const std::vector<std::vector<double>> vars{{0.5, 2.0, 0.1}, {3.0, 0.2, 0.2}, {1.0, 1.0, 1.0}};
  std::vector<double> norms;
  for (int m = 0; m < 3; ++m) {
    set_member_variance(ens, m, vars[static_cast<std::size_t>(m)]);
    double sq = 0.0;
    for (double v : vars[static_cast<std::size_t>(m)]) sq += v * v;
    norms.push_back(std::sqrt(sq));
  }
  const Vector u2 = mopo_uncertainty(ens, s, a);
  CHECK(u2(0) == doctest::Approx(*std::max_element(norms.begin(), norms.end())).epsilon(1e-9));
  CHECK(u2(0) == doctest::Approx(norms[1]).epsilon(1e-9));
}

TEST_CASE("penalized reward and rollout adjust") {
  CHECK(penalized_reward(0.7, 3.0, 0.0) == 0.7);
  CHECK(penalized_reward(0.7, 0.0, 2.0) == 0.7);
  CHECK(penalized_reward(1.0, 2.0, 0.5) == 0.0);
  Rng rng(2);
  model::GaussianEnsemble ens(1, 1, tiny_ensemble(2, 1), rng);
  for (int m = 0; m < 2; ++m) set_member_variance(ens, m, {3.0, 4.0});
  const auto adjust = mopo_reward_adjust(ens, 0.5);
  Tensor s = Tensor::Zero(2, 1), a = Tensor::Zero(2, 1), r(2, 3);
  r << 1, 2, 3, 4, 5, 6;
  const Tensor before = r;
  adjust(s, a, r);
  CHECK((r - (before.array() - 2.5).matrix()).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("cmbacup examples") {
  CHECK(cmbacup_q({row({0, 2})}, 1.0)(0) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(cmbacup_q({row({0, 2, 7})}, 0.0)(0) == doctest::Approx(3.0));
  CHECK(cmbacup_q({row({4, 4, 4}), row({4, 4, 4})}, 5.0)(0) == 4.0);
  CHECK(cmbacup_q({row({0, 2}), row({1, 1})}, 1.0)(0) == doctest::Approx(0.0));
}

TEST_CASE("mincmbac and redq examples") {
  CHECK(mincmbac_q({row({5})})(0) == 5.0);
  CHECK(mincmbac_q({row({3, 1, 2}), row({0.5, 4, 4})})(0) == 0.5);
  CHECK(redq_cmbac_q(3.0, 3.0) == 3.0);
  CHECK(redq_cmbac_q(0.0, 2.0) == 1.0);
  CHECK(redq_cmbac_q({row({3, 1, 2}), row({5, 4, 6})}, 1)(0) == doctest::Approx(0.5 * (1.5 + 4.5)));
}

TEST_CASE("aggregators match brute force and satisfy the ordering chain") {
  Rng rng(3);
  for (int trial = 0; trial < 2000; ++trial) {
    const int k = 1 + static_cast<int>(rng.uniform_int(10));
    const int drop = static_cast<int>(rng.uniform_int(static_cast<std::size_t>(k)));
    const Tensor a = random_tensor(1, k, rng, -5, 5), b = random_tensor(1, k, rng, -5, 5);
    const double lambda = rng.uniform(0, 2);
    const double mn = std::min(a.minCoeff(), b.minCoeff());
    CHECK(mincmbac_q({a, b})(0) == mn);
    const double up = std::min(mean_of(a) - lambda * pop_std(a), mean_of(b) - lambda * pop_std(b));
    CHECK(std::abs(cmbacup_q({a, b}, lambda)(0) - up) < 1e-12);

    const double cons = actor::conservative_q({a, b}, drop)(0);
    const double redq = redq_cmbac_q({a, b}, drop)(0);
    const double mean_of_means = 0.5 * (mean_of(a) + mean_of(b));
    CHECK(mn <= cons + 1e-12);
    CHECK(cons <= redq + 1e-12);
    CHECK(redq <= mean_of_means + 1e-12);
  }
}

TEST_CASE("taped aggregators agree with their plain versions") {
  Rng rng(4);
  const Tensor a = random_tensor(5, 4, rng), b = random_tensor(5, 4, rng);
  for (auto v : all_variants()) {
    auto rv = resolve_variant(v, 5, VariantKnobs{.members_per_model = 2, .drop = 1, .uncertainty_penalty = 0.3});
    rv.heads = 4;
    const auto agg = make_aggregator(rv);
    std::vector<Tensor> plain_in{a};
    if (rv.critic_networks == 2) plain_in.push_back(b);
    nn::Tape t;
    std::vector<Var> taped_in;
    for (const auto& x : plain_in) taped_in.push_back(t.constant(x));
    const Tensor taped = agg.taped(t, taped_in).value();
    const Vector plain = agg.plain(plain_in);
    CHECK((taped.col(0) - plain).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("taped aggregator gradients match finite differences") {
  Rng rng(5);
  nn::Parameter pa(random_tensor(3, 4, rng)), pb(random_tensor(3, 4, rng));
  auto check = [&](const std::function<Var(nn::Tape&, const std::vector<Var>&)>& f) {
    auto loss = [&](nn::Tape& t) { return nn::sum(f(t, {t.param(pa), t.param(pb)})); };
    CHECK(cmbac::testing::gradient_check({&pa, &pb}, loss).max_rel_error < 1e-6);
  };
  check([](nn::Tape& t, const std::vector<Var>& v) { return cmbacup_q(t, v, 0.7); });
  check([](nn::Tape& t, const std::vector<Var>& v) { return mincmbac_q(t, v); });
  check([](nn::Tape& t, const std::vector<Var>& v) { return redq_cmbac_q(t, v, 1); });
}

TEST_CASE("mbpoeq target is mean then min, broadcast to all heads") {
  Rng rng(6);
  const int b = 4, k = 3;
  model::ModelBatch batch;
  batch.states = random_tensor(b, 2, rng);
  batch.actions = random_tensor(b, 1, rng);
  batch.rewards = random_tensor(b, 1, rng).col(0);
  batch.next_states = random_tensor(b, 2, rng);
  batch.dones = Vector::Zero(b);
  batch.branch_next_states = random_tensor(b * k, 2, rng);
  batch.branch_rewards = random_tensor(b, k, rng);
  batch.heads = k;
  critic::MultiHeadQ q1(2, 1, k, {5}, nn::Activation::Tanh, rng), q2(2, 1, k, {5}, nn::Activation::Tanh, rng);
  critic::NextActionFn zero = [](const Tensor& s, Tensor& a, Vector& lp, Rng&) {
    a = Tensor::Zero(s.rows(), 1);
    lp = Vector::Zero(s.rows());
  };
  const Tensor y0 = mbpoeq_target(batch, {&q1, &q2}, zero, {0.0, 0.0}, rng);
  for (int j = 0; j < k; ++j) CHECK(y0.col(j) == batch.rewards);

  const Tensor y = mbpoeq_target(batch, {&q1, &q2}, zero, {0.9, 0.0}, rng);
  const Tensor a0 = Tensor::Zero(b, 1);
  const Tensor v1 = q1.values(batch.next_states, a0), v2 = q2.values(batch.next_states, a0);
  for (int i = 0; i < b; ++i) {
    const double expected = batch.rewards(i) + 0.9 * std::min(v1.row(i).mean(), v2.row(i).mean());
    for (int j = 0; j < k; ++j) CHECK(std::abs(y(i, j) - expected) < 1e-12);
  }

  critic::MultiHeadQ s1(2, 1, 1, {5}, nn::Activation::Tanh, rng), s2(2, 1, 1, {5}, nn::Activation::Tanh, rng);
  batch.heads = 1;
  batch.branch_rewards = batch.rewards;
  batch.branch_next_states = batch.next_states;
  const Tensor shared = mbpoeq_target(batch, {&s1, &s2}, zero, {0.9, 0.0}, rng);
  const Tensor per_head = critic::head_targets(batch, {&s1, &s2}, zero, {0.9, 0.0}, critic::TargetRule::PerHead, rng);
  CHECK((shared - per_head).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("mbpoeq heads converge to each other on a fixed batch") {
  Rng rng(7);
  const int b = 32, k = 4;
  model::ModelBatch batch;
  batch.states = random_tensor(b, 2, rng);
  batch.actions = random_tensor(b, 1, rng);
  batch.rewards = random_tensor(b, 1, rng).col(0);
  batch.next_states = batch.states;
  batch.dones = Vector::Zero(b);
  batch.branch_next_states = random_tensor(b * k, 2, rng);
  batch.branch_rewards = random_tensor(b, k, rng);
  batch.heads = k;
  critic::CriticConfig cfg;
  cfg.hidden = {32, 32};
  cfg.lr = 3e-4;
  cfg.tau = 0.05;
  critic::CriticEnsemble critics(2, 1, k, cfg, rng);
  critic::NextActionFn same = [&](const Tensor& s, Tensor& a, Vector& lp, Rng&) {
    a = batch.actions.topRows(s.rows());
    lp = Vector::Zero(s.rows());
  };
  auto gap = [&] {
    const Tensor v = critics.online(0).values(batch.states, batch.actions);
    return (v.rowwise().maxCoeff() - v.rowwise().minCoeff()).maxCoeff();
  };
  const double initial = gap();
  for (int step = 0; step < 20000; ++step) {
    const Tensor y = mbpoeq_target(batch, critics.targets(), same, {0.5, 0.0}, rng);
    critics.update(batch.states, batch.actions, y);
  }
  CHECK(initial > 1e-2);
  CHECK(gap() < 1e-3);
}

TEST_CASE("MOPO-Online with zero penalty steps exactly like B-MBPO") {
  auto a = cmbac::testing::tiny_config("B-MBPO", 3);
  auto b = cmbac::testing::tiny_config("MOPO-Online", 3);
  b.mopo_penalty = 0.0;
  harness::Trainer ta(a), tb(b);
  while (!ta.finished()) {
    const auto ma = ta.run_epoch().to_json().dump();
    const auto mb = tb.run_epoch().to_json().dump();
    CHECK(ma == mb);
  }
  Rng probe(8);
  const Tensor s = random_tensor(5, 2, probe);
  CHECK(ta.agent().actor().policy().deterministic(s) == tb.agent().actor().policy().deterministic(s));
}

TEST_CASE("SCMBAC trains one network without entropy") {
  harness::Trainer t(cmbac::testing::tiny_config("SCMBAC", 1));
  CHECK(t.agent().critics().networks() == 1);
  CHECK(t.agent().critics().heads() == 10);
  const auto m = t.run_epoch();
  CHECK(m.alpha == 0.0);
  t.run_epoch();
  CHECK(t.agent().alpha() == 0.0);
}
