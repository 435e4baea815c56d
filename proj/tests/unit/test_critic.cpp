#include <doctest.h>

#include <cmath>

#include "../support/gradcheck.hpp"
#include "cmbac/critic/critic.hpp"

using namespace cmbac;
using namespace cmbac::critic;
using cmbac::testing::gradient_check;
using cmbac::testing::random_tensor;

namespace {

model::ModelBatch random_batch(int b, int ds, int da, int k, Rng& rng) {
  model::ModelBatch m;
  m.states = random_tensor(b, ds, rng);
  m.actions = random_tensor(b, da, rng);
  m.rewards = random_tensor(b, 1, rng).col(0);
  m.next_states = random_tensor(b, ds, rng);
  m.dones = Vector::Zero(b);
  m.dones(0) = 1.0;
  m.branch_next_states = random_tensor(b * k, ds, rng);
  m.branch_rewards = random_tensor(b, k, rng);
  m.heads = k;
  return m;
}

// a' = tanh of the first state coordinate, log pi = -|s|^2.
NextActionFn fixed_policy(int da) {
  return [da](const Tensor& s, Tensor& a, Vector& logp, Rng&) {
    a.resize(s.rows(), da);
    for (int d = 0; d < da; ++d) a.col(d) = s.col(0).array().tanh();
    logp = -s.rowwise().squaredNorm();
  };
}

MultiHeadQ make_q(int ds, int da, int k, Rng& rng) { return MultiHeadQ(ds, da, k, {6, 6}, nn::Activation::Tanh, rng); }

}  // namespace

TEST_CASE("gamma zero gives branch rewards") {
  Rng rng(1);
  const auto batch = random_batch(5, 2, 1, 3, rng);
  auto q1 = make_q(2, 1, 3, rng), q2 = make_q(2, 1, 3, rng);
  const Tensor y = head_targets(batch, {&q1, &q2}, fixed_policy(1), {0.0, 0.3}, TargetRule::PerHead, rng);
  CHECK(y == batch.branch_rewards);
}

TEST_CASE("per-head targets match a clipped-double oracle") {
  Rng rng(2);
  const int b = 6, k = 3;
  const auto batch = random_batch(b, 2, 2, k, rng);
  auto q1 = make_q(2, 2, k, rng), q2 = make_q(2, 2, k, rng);
  const double gamma = 0.9, alpha = 0.2;
  const Tensor y = head_targets(batch, {&q1, &q2}, fixed_policy(2), {gamma, alpha}, TargetRule::PerHead, rng);
  for (int i = 0; i < b; ++i)
    for (int j = 0; j < k; ++j) {
      const Tensor s2 = batch.branch_next_states.row(i * k + j);
      Tensor a2(1, 2);
      a2.setConstant(std::tanh(s2(0, 0)));
      const double logp = -s2.squaredNorm();
      const double v1 = q1.values(s2, a2)(0, j), v2 = q2.values(s2, a2)(0, j);
      const double expected =
          batch.branch_rewards(i, j) + gamma * (1.0 - batch.dones(i)) * (std::min(v1, v2) - alpha * logp);
      CHECK(std::abs(y(i, j) - expected) < 1e-12);
    }

  const Tensor same = head_targets(batch, {&q1, &q1}, fixed_policy(2), {gamma, 0.0}, TargetRule::PerHead, rng);
  for (int j = 0; j < k; ++j) {
    const Tensor s2 = batch.branch_next_states.row(1 * k + j);
    Tensor a2 = Tensor::Constant(1, 2, std::tanh(s2(0, 0)));
    CHECK(same(1, j) == doctest::Approx(batch.branch_rewards(1, j) + gamma * q1.values(s2, a2)(0, j)));
  }
}

TEST_CASE("per-head target draws one action per branch") {
  Rng rng(3);
  const auto batch = random_batch(4, 1, 1, 2, rng);
  auto q = make_q(1, 1, 2, rng);
  Eigen::Index rows_seen = 0;
  NextActionFn counting = [&](const Tensor& s, Tensor& a, Vector& logp, Rng&) {
    rows_seen = s.rows();
    CHECK(s == batch.branch_next_states);
    a = Tensor::Zero(s.rows(), 1);
    logp = Vector::Zero(s.rows());
  };
  head_targets(batch, {&q}, counting, {0.99, 0.0}, TargetRule::PerHead, rng);
  CHECK(rows_seen == 8);
}

TEST_CASE("shared target is mean over heads then min over networks") {
  Rng rng(4);
  const int b = 5, k = 4;
  const auto batch = random_batch(b, 2, 1, k, rng);
  auto q1 = make_q(2, 1, k, rng), q2 = make_q(2, 1, k, rng);
  const double gamma = 0.8, alpha = 0.1;
  const Tensor y = head_targets(batch, {&q1, &q2}, fixed_policy(1), {gamma, alpha}, TargetRule::Shared, rng);
  for (int i = 0; i < b; ++i) {
    const Tensor s2 = batch.next_states.row(i);
    const Tensor a2 = Tensor::Constant(1, 1, std::tanh(s2(0, 0)));
    double m1 = 0, m2 = 0;
    for (int j = 0; j < k; ++j) {
      m1 += q1.values(s2, a2)(0, j) / k;
      m2 += q2.values(s2, a2)(0, j) / k;
    }
    const double expected =
        batch.rewards(i) + gamma * (1.0 - batch.dones(i)) * (std::min(m1, m2) + alpha * s2.squaredNorm());
    for (int j = 0; j < k; ++j) CHECK(std::abs(y(i, j) - expected) < 1e-12);
  }
}

TEST_CASE("critic loss examples") {
  Rng rng(5);
  const Tensor y = random_tensor(4, 3, rng);
  {
    Tape t;
    CHECK(critic_loss(t, t.constant(y), y).scalar() == 0.0);
  }
  {
    Tape t;
    CHECK(critic_loss(t, t.constant(Tensor::Ones(1, 1)), Tensor::Zero(1, 1)).scalar() == 0.5);
  }
  const Tensor q = random_tensor(4, 3, rng);
  double oracle = 0.0;
  for (int j = 0; j < 3; ++j) {
    double mse = 0.0;
    for (int i = 0; i < 4; ++i) mse += (q(i, j) - y(i, j)) * (q(i, j) - y(i, j)) / 4;
    oracle += 0.5 * mse / 3;
  }
  Tape t;
  CHECK(std::abs(critic_loss(t, t.constant(q), y).scalar() - oracle) < 1e-10);
}

TEST_CASE("critic loss gradient matches finite differences") {
  Rng rng(6);
  auto q = make_q(2, 2, 3, rng);
  const Tensor s = random_tensor(5, 2, rng), a = random_tensor(5, 2, rng), y = random_tensor(5, 3, rng);
  auto loss = [&](Tape& t) { return critic_loss(t, q.forward(t, t.constant(s), t.constant(a), true), y); };
  CHECK(gradient_check(q.params().parameters(), loss).max_rel_error < 1e-6);
}

TEST_CASE("polyak examples") {
  Rng rng(7);
  auto online = make_q(1, 1, 2, rng);
  auto target = make_q(1, 1, 2, rng);
  const auto before = target.params().parameters();
  std::vector<Tensor> saved;
  for (auto* p : before) saved.push_back(p->value);
  polyak_update(target, online, 0.0);
  for (std::size_t i = 0; i < saved.size(); ++i) CHECK(target.params().parameters()[i]->value == saved[i]);
  polyak_update(target, online, 1.0);
  for (std::size_t i = 0; i < saved.size(); ++i)
    CHECK(target.params().parameters()[i]->value == online.params().parameters()[i]->value);

  for (auto* p : target.params().parameters()) p->value.setZero();
  for (auto* p : online.params().parameters()) p->value.setOnes();
  polyak_update(target, online, 0.5);
  polyak_update(target, online, 0.5);
  for (auto* p : target.params().parameters()) CHECK((p->value.array() == 0.75).all());
}

TEST_CASE("heads are equivariant to permuting the output columns") {
  Rng rng(8);
  auto q = make_q(2, 1, 4, rng);
  const Tensor s = random_tensor(3, 2, rng), a = random_tensor(3, 1, rng);
  const Tensor v = q.values(s, a);
  const std::vector<int> perm{2, 0, 3, 1};
  auto& last = q.params().layers.back();
  const Tensor w = last.weight.value, bias = last.bias.value;
  for (int j = 0; j < 4; ++j) {
    last.weight.value.col(j) = w.col(perm[j]);
    last.bias.value.col(j) = bias.col(perm[j]);
  }
  const Tensor pv = q.values(s, a);
  for (int j = 0; j < 4; ++j) CHECK(pv.col(j) == v.col(perm[j]));
}

TEST_CASE("critic update moves targets only by averaging") {
  Rng rng(9);
  CriticConfig cfg;
  cfg.hidden = {8, 8};
  cfg.tau = 0.25;
  CriticEnsemble ens(2, 1, 3, cfg, rng);
  REQUIRE(ens.networks() == 2);
  std::vector<std::vector<Tensor>> old_target(2);
  for (int n = 0; n < 2; ++n)
    for (auto* p : ens.target(n).params().parameters()) old_target[n].push_back(p->value);
  const Tensor s = random_tensor(16, 2, rng), a = random_tensor(16, 1, rng), y = random_tensor(16, 3, rng);
  const auto rep = ens.update(s, a, y);
  CHECK(rep.finite);
  CHECK(rep.losses.size() == 2);
  for (int n = 0; n < 2; ++n) {
    const auto tp = ens.target(n).params().parameters();
    const auto op = ens.online(n).params().parameters();
    for (std::size_t i = 0; i < tp.size(); ++i) {
      const Tensor expected = 0.75 * old_target[n][i] + 0.25 * op[i]->value;
      CHECK((tp[i]->value - expected).cwiseAbs().maxCoeff() < 1e-15);
    }
  }
}

TEST_CASE("critic update rejects non-finite targets without side effects") {
  Rng rng(10);
  CriticConfig cfg;
  cfg.hidden = {4};
  CriticEnsemble ens(1, 1, 2, cfg, rng);
  const Tensor s = random_tensor(4, 1, rng), a = random_tensor(4, 1, rng);
  Tensor y = random_tensor(4, 2, rng);
  y(0, 0) = std::nan("");
  const Tensor before = ens.online(0).values(s, a);
  CHECK_FALSE(ens.update(s, a, y).finite);
  CHECK(ens.online(0).values(s, a) == before);
}

TEST_CASE("critic ensemble round trip") {
  Rng rng(11);
  CriticConfig cfg;
  cfg.hidden = {5};
  CriticEnsemble ens(2, 2, 3, cfg, rng);
  const Tensor s = random_tensor(8, 2, rng), a = random_tensor(8, 2, rng);
  ens.update(s, a, random_tensor(8, 3, rng));
  nn::BinaryWriter w;
  ens.save(w);
  Rng other(12);
  CriticEnsemble copy(2, 2, 3, cfg, other);
  nn::BinaryReader r(w.buffer());
  copy.load(r);
  for (int n = 0; n < 2; ++n) {
    CHECK(copy.online(n).values(s, a) == ens.online(n).values(s, a));
    CHECK(copy.target(n).values(s, a) == ens.target(n).values(s, a));
  }
  const Tensor y = random_tensor(8, 3, rng);
  ens.update(s, a, y);
  copy.update(s, a, y);
  CHECK(copy.online(0).values(s, a) == ens.online(0).values(s, a));
}
