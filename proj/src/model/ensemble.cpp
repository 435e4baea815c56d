#include "cmbac/model/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "cmbac/common/errors.hpp"

namespace cmbac::model {

namespace {
const double kLog2Pi = std::log(2.0 * std::numbers::pi);
}

// ---------------------------------------------------------------- Normalizer

Normalizer Normalizer::identity(int dim) { return {Tensor::Zero(1, dim), Tensor::Ones(1, dim)}; }

Normalizer Normalizer::fit(const Tensor& data) {
  if (data.rows() == 0) throw UsageError("normalizer: empty data");
  Normalizer n;
  n.mean = data.colwise().mean();
  Tensor centered = data.rowwise() - n.mean.row(0);
  n.std = (centered.array().square().colwise().sum() / static_cast<double>(data.rows())).sqrt();
  for (Eigen::Index c = 0; c < n.std.cols(); ++c) {
    if (n.std(0, c) < 1e-8) n.std(0, c) = 1.0;
  }
  return n;
}

Tensor Normalizer::normalize(const Tensor& x) const {
  return (x.rowwise() - mean.row(0)).array().rowwise() / std.row(0).array();
}

Tensor Normalizer::denormalize(const Tensor& x) const {
  Tensor out = x.array().rowwise() * std.row(0).array();
  out.rowwise() += mean.row(0);
  return out;
}

// ---------------------------------------------------------------- NLL

Var gaussian_nll(Tape& tape, Var mean, Var logvar, const Tensor& target) {
  if (mean.rows() != target.rows() || mean.cols() != target.cols() || logvar.rows() != target.rows() ||
      logvar.cols() != target.cols()) {
    throw ConfigError("gaussian_nll: shape mismatch");
  }
  Var t = tape.constant(target);
  Var sq = nn::square(nn::sub(t, mean));
  Var inv_var = nn::exp(nn::scale(logvar, -1.0));
  Var per_dim = nn::shift(nn::add(nn::mul(sq, inv_var), logvar), kLog2Pi);
  return nn::scale(nn::mean(nn::row_sum(per_dim)), 0.5);
}

// ---------------------------------------------------------------- network

GaussianDynamicsNet::GaussianDynamicsNet(int input_dim, int output_dim, const std::vector<int>& hidden,
                                         nn::Activation activation, Rng& rng)
    : output_dim_(output_dim) {
  nn::MlpShape shape;
  shape.input_dim = input_dim;
  shape.hidden = hidden;
  shape.activation = activation;
  shape.head_widths = {output_dim, output_dim};
  net = nn::make_mlp(shape, rng);
  max_logvar = Parameter(Tensor::Constant(1, output_dim, 0.5));
  min_logvar = Parameter(Tensor::Constant(1, output_dim, -10.0));
}

namespace {

Tensor softplus(const Tensor& x) { return x.array().max(0.0) + (-x.array().abs()).exp().log1p(); }

}  // namespace

GaussianDynamicsNet::Prediction GaussianDynamicsNet::predict(const Tensor& normalized_inputs) const {
  Tensor out = nn::mlp_forward(net, normalized_inputs);
  Prediction p;
  p.mean = out.leftCols(output_dim_);
  Tensor raw = out.rightCols(output_dim_);
  // Same expression order as the recorded path.
  Tensor upper = softplus((-raw).rowwise() + max_logvar.value.row(0));
  Tensor lv = (-upper).rowwise() + max_logvar.value.row(0);
  Tensor lower = softplus(lv.rowwise() - min_logvar.value.row(0));
  p.logvar = lower.rowwise() + min_logvar.value.row(0);
  return p;
}

GaussianDynamicsNet::PredictionVar GaussianDynamicsNet::forward(Tape& tape, Var normalized_inputs) {
  Var out = nn::mlp_forward(tape, net, normalized_inputs, true);
  Var mean = nn::slice_cols(out, 0, output_dim_);
  Var raw = nn::slice_cols(out, output_dim_, output_dim_);
  Var hi = tape.param(max_logvar);
  Var lo = tape.param(min_logvar);
  Var upper = nn::softplus(nn::add(nn::scale(raw, -1.0), hi));
  Var lv = nn::add(nn::scale(upper, -1.0), hi);
  Var lower = nn::softplus(nn::sub(lv, lo));
  return {mean, nn::add(lower, lo)};
}

Var GaussianDynamicsNet::bound_penalty(Tape& tape, double coef) {
  Var hi = tape.param(max_logvar);
  Var lo = tape.param(min_logvar);
  return nn::scale(nn::sub(nn::sum(hi), nn::sum(lo)), coef);
}

std::vector<Parameter*> GaussianDynamicsNet::parameters() {
  auto ps = net.parameters();
  ps.push_back(&max_logvar);
  ps.push_back(&min_logvar);
  return ps;
}

std::vector<const Parameter*> GaussianDynamicsNet::parameters() const {
  auto ps = net.parameters();
  ps.push_back(&max_logvar);
  ps.push_back(&min_logvar);
  return ps;
}

// ---------------------------------------------------------------- ensemble

std::vector<int> select_elites(const std::vector<double>& scores, int count) {
  if (count < 1 || count > static_cast<int>(scores.size())) throw ConfigError("select_elites: bad elite count");
  std::vector<int> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    const double sa = std::isfinite(scores[a]) ? scores[a] : INFINITY;
    const double sb = std::isfinite(scores[b]) ? scores[b] : INFINITY;
    return sa < sb;
  });
  order.resize(static_cast<std::size_t>(count));
  std::sort(order.begin(), order.end());
  return order;
}

GaussianEnsemble::GaussianEnsemble(int state_dim, int action_dim, EnsembleConfig config, Rng& init_rng)
    : state_dim_(state_dim), action_dim_(action_dim), config_(std::move(config)) {
  if (config_.ensemble_size < 1) throw ConfigError("ensemble: size must be >= 1");
  if (config_.elite_count < 1 || config_.elite_count > config_.ensemble_size) {
    throw ConfigError("ensemble: elite count must be in [1, ensemble size]");
  }
  if (!(config_.holdout_fraction > 0.0 && config_.holdout_fraction < 1.0)) {
    throw ConfigError("ensemble: holdout fraction must be in (0, 1)");
  }
  const int in = state_dim + action_dim;
  const int out = state_dim + 1;
  for (int i = 0; i < config_.ensemble_size; ++i) {
    nets_.emplace_back(in, out, config_.hidden, config_.activation, init_rng);
  }
  for (auto& n : nets_) {
    auto ps = n.parameters();
    optimizers_.push_back(nn::make_adam(ps, nn::AdamConfig{config_.learning_rate}));
  }
  elites_.resize(static_cast<std::size_t>(config_.elite_count));
  std::iota(elites_.begin(), elites_.end(), 0);
  input_norm_ = Normalizer::identity(in);
  target_norm_ = Normalizer::identity(out);
}

void GaussianEnsemble::set_elites(std::vector<int> elites) {
  if (static_cast<int>(elites.size()) != config_.elite_count) throw ConfigError("ensemble: wrong elite count");
  std::vector<int> sorted = elites;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end() || sorted.front() < 0 ||
      sorted.back() >= size()) {
    throw ConfigError("ensemble: elite indices must be distinct and in range");
  }
  elites_ = std::move(elites);
}

void GaussianEnsemble::set_normalizers(Normalizer in, Normalizer out) {
  input_norm_ = std::move(in);
  target_norm_ = std::move(out);
}

namespace {

double nll_value(const GaussianDynamicsNet::Prediction& p, const Tensor& target) {
  Tensor per = (target - p.mean).array().square() * (-p.logvar.array()).exp() + p.logvar.array() + kLog2Pi;
  return 0.5 * per.rowwise().sum().mean();
}

}  // namespace

TrainReport GaussianEnsemble::train(const EnvBuffer& data, Rng& rng) {
  TrainReport report;
  if (data.size() < std::max<std::size_t>(config_.min_buffer, 2)) return report;

  const EnvBatch all = data.all();
  const Eigen::Index n = all.states.rows();
  Tensor inputs = nn::hcat(all.states, all.actions);
  Tensor targets(n, state_dim_ + 1);
  targets.leftCols(state_dim_) = all.next_states - all.states;
  targets.col(state_dim_) = all.rewards;

  std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  for (std::size_t i = perm.size() - 1; i > 0; --i) std::swap(perm[i], perm[rng.uniform_int(i + 1)]);

  const auto n_hold = static_cast<Eigen::Index>(
      std::clamp<double>(std::floor(static_cast<double>(n) * config_.holdout_fraction), 1.0,
                         static_cast<double>(config_.max_holdout)));
  const Eigen::Index n_train = n - n_hold;
  Tensor x_train(n_train, inputs.cols()), y_train(n_train, targets.cols());
  Tensor x_hold(n_hold, inputs.cols()), y_hold(n_hold, targets.cols());
  for (Eigen::Index i = 0; i < n_hold; ++i) {
    x_hold.row(i) = inputs.row(perm[static_cast<std::size_t>(i)]);
    y_hold.row(i) = targets.row(perm[static_cast<std::size_t>(i)]);
  }
  for (Eigen::Index i = 0; i < n_train; ++i) {
    x_train.row(i) = inputs.row(perm[static_cast<std::size_t>(n_hold + i)]);
    y_train.row(i) = targets.row(perm[static_cast<std::size_t>(n_hold + i)]);
  }

  input_norm_ = Normalizer::fit(x_train);
  target_norm_ = Normalizer::fit(y_train);
  const Tensor xn = input_norm_.normalize(x_train);
  const Tensor yn = target_norm_.normalize(y_train);
  const Tensor xh = input_norm_.normalize(x_hold);
  const Tensor yh = target_norm_.normalize(y_hold);

  const auto batch = static_cast<Eigen::Index>(std::min<Eigen::Index>(config_.batch_size, n_train));
  for (std::size_t m = 0; m < nets_.size(); ++m) {
    auto& net = nets_[m];
    auto params = net.parameters();
    std::vector<Tensor> backup;
    for (auto* p : params) backup.push_back(p->value);
    nn::AdamState opt_backup = optimizers_[m];

    std::vector<Eigen::Index> boot(static_cast<std::size_t>(n_train));
    for (auto& b : boot) b = static_cast<Eigen::Index>(rng.uniform_int(static_cast<std::size_t>(n_train)));

    Tensor xb(batch, xn.cols()), yb(batch, yn.cols());
    bool failed = false;
    for (int step = 0; step < config_.train_steps; ++step) {
      for (Eigen::Index i = 0; i < batch; ++i) {
        const Eigen::Index row = boot[rng.uniform_int(boot.size())];
        xb.row(i) = xn.row(row);
        yb.row(i) = yn.row(row);
      }
      Tape tape;
      auto pred = net.forward(tape, tape.constant(xb));
      Var loss = nn::add(gaussian_nll(tape, pred.mean, pred.logvar, yb), net.bound_penalty(tape, config_.bound_penalty));
      if (!std::isfinite(loss.scalar())) {
        failed = true;
        break;
      }
      nn::zero_grad(params);
      tape.backward(loss);
      nn::adam_step(optimizers_[m], params);
    }
    if (failed) {
      for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = backup[i];
      optimizers_[m] = std::move(opt_backup);
      report.non_finite = true;
    }
    auto hp = net.predict(xh);
    report.holdout_nll.push_back(nll_value(hp, yh));
    report.holdout_mse.push_back((hp.mean - yh).array().square().mean());
  }

  elites_ = select_elites(report.holdout_nll, config_.elite_count);
  trained_ = true;
  report.trained = true;
  report.elites = elites_;
  for (int e : elites_) {
    report.mean_elite_nll += report.holdout_nll[static_cast<std::size_t>(e)] / static_cast<double>(elites_.size());
    report.mean_elite_mse += report.holdout_mse[static_cast<std::size_t>(e)] / static_cast<double>(elites_.size());
  }
  return report;
}

MemberPrediction GaussianEnsemble::predict(int member, const Tensor& states, const Tensor& actions) const {
  if (member < 0 || member >= size()) throw ConfigError("ensemble: member index out of range");
  const Tensor x = input_norm_.normalize(nn::hcat(states, actions));
  auto p = nets_[static_cast<std::size_t>(member)].predict(x);
  MemberPrediction out;
  out.mean = target_norm_.denormalize(p.mean);
  out.var = p.logvar.array().exp().rowwise() * target_norm_.std.row(0).array().square();
  return out;
}

void GaussianEnsemble::sample(int member, const Tensor& states, const Tensor& actions, Tensor& next_states,
                              Vector& rewards, Rng& rng) const {
  const auto p = predict(member, states, actions);
  next_states.resize(states.rows(), state_dim_);
  rewards.resize(states.rows());
  for (Eigen::Index i = 0; i < states.rows(); ++i) {
    for (int d = 0; d <= state_dim_; ++d) {
      const double draw = p.mean(i, d) + std::sqrt(p.var(i, d)) * rng.normal();
      if (d < state_dim_) {
        next_states(i, d) = states(i, d) + draw;
      } else {
        rewards(i) = draw;
      }
    }
  }
}

void GaussianEnsemble::save(nn::BinaryWriter& w) const {
  w.u64(nets_.size());
  for (std::size_t m = 0; m < nets_.size(); ++m) {
    auto ps = nets_[m].parameters();
    w.str(nn::encode_snapshot(std::span<const Parameter* const>(ps)));
    nn::save_adam(w, optimizers_[m]);
  }
  w.u64(elites_.size());
  for (int e : elites_) w.i64(e);
  w.tensor(input_norm_.mean);
  w.tensor(input_norm_.std);
  w.tensor(target_norm_.mean);
  w.tensor(target_norm_.std);
  w.boolean(trained_);
}

void GaussianEnsemble::load(nn::BinaryReader& r) {
  if (r.u64() != nets_.size()) throw SerializationError("ensemble: member count mismatch");
  for (std::size_t m = 0; m < nets_.size(); ++m) {
    auto ps = nets_[m].parameters();
    nn::load_snapshot(r.str(), ps);
    nn::load_adam(r, optimizers_[m], ps);
  }
  const std::size_t ne = r.count(8);
  std::vector<int> elites(ne);
  for (auto& e : elites) e = static_cast<int>(r.i64());
  try {
    set_elites(std::move(elites));
  } catch (const ConfigError& e) {
    throw SerializationError(e.what());
  }
  input_norm_.mean = r.tensor();
  input_norm_.std = r.tensor();
  target_norm_.mean = r.tensor();
  target_norm_.std = r.tensor();
  trained_ = r.boolean();
}

}  // namespace cmbac::model
