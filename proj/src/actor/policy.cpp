#include "cmbac/actor/policy.hpp"

#include <cmath>
#include <numbers>

#include "cmbac/common/errors.hpp"

namespace cmbac::actor {

namespace {

const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);
const double kLog2 = std::numbers::ln2;

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

}  // namespace

SquashedGaussianPolicy::SquashedGaussianPolicy(int state_dim, std::vector<double> action_low,
                                               std::vector<double> action_high, std::vector<int> hidden,
                                               nn::Activation act, Rng& rng) {
  if (action_low.empty() || action_low.size() != action_high.size()) {
    throw ConfigError("policy: action bounds must be non-empty and of equal length");
  }
  const auto da = static_cast<Eigen::Index>(action_low.size());
  center_.resize(1, da);
  scale_.resize(1, da);
  for (Eigen::Index d = 0; d < da; ++d) {
    const double lo = action_low[static_cast<std::size_t>(d)];
    const double hi = action_high[static_cast<std::size_t>(d)];
    if (!(std::isfinite(lo) && std::isfinite(hi) && hi > lo)) throw ConfigError("policy: invalid action bounds");
    center_(0, d) = 0.5 * (hi + lo);
    scale_(0, d) = 0.5 * (hi - lo);
  }
  nn::MlpShape shape;
  shape.input_dim = state_dim;
  shape.hidden = std::move(hidden);
  shape.activation = act;
  shape.head_widths = {static_cast<int>(da), static_cast<int>(da)};
  net_ = nn::make_mlp(shape, rng);
}

void SquashedGaussianPolicy::distribution(const Tensor& states, Tensor& mean, Tensor& log_std) const {
  const Tensor out = nn::mlp_forward(net_, states);
  mean = nn::head_block(net_.shape, out, 0);
  log_std = nn::head_block(net_.shape, out, 1).cwiseMax(kLogStdMin).cwiseMin(kLogStdMax);
}

Tensor SquashedGaussianPolicy::draw_noise(Eigen::Index rows, Rng& rng) const {
  Tensor eps(rows, action_dim());
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index d = 0; d < eps.cols(); ++d) eps(i, d) = rng.normal();
  return eps;
}

SquashedGaussianPolicy::Sample SquashedGaussianPolicy::sample(const Tensor& states, Rng& rng) const {
  return sample_with_noise(states, draw_noise(states.rows(), rng));
}

SquashedGaussianPolicy::Sample SquashedGaussianPolicy::sample_with_noise(const Tensor& states,
                                                                         const Tensor& noise) const {
  Tensor mean, log_std;
  distribution(states, mean, log_std);
  if (noise.rows() != states.rows() || noise.cols() != action_dim()) throw ConfigError("policy: noise shape");
  Sample s;
  s.actions.resize(states.rows(), action_dim());
  s.log_prob.resize(states.rows());
  for (Eigen::Index i = 0; i < states.rows(); ++i) {
    double lp = 0.0;
    for (Eigen::Index d = 0; d < action_dim(); ++d) {
      const double eps = noise(i, d);
      const double u = mean(i, d) + std::exp(log_std(i, d)) * eps;
      s.actions(i, d) = center_(0, d) + scale_(0, d) * std::tanh(u);
      lp += -0.5 * eps * eps - log_std(i, d) - kHalfLog2Pi - 2.0 * (kLog2 - u - softplus(-2.0 * u)) -
            std::log(scale_(0, d));
    }
    s.log_prob(i) = lp;
  }
  return s;
}

Tensor SquashedGaussianPolicy::deterministic(const Tensor& states) const {
  Tensor mean, log_std;
  distribution(states, mean, log_std);
  Tensor a = mean.array().tanh();
  a = (a.array().rowwise() * scale_.row(0).array()).rowwise() + center_.row(0).array();
  return a;
}

SquashedGaussianPolicy::TapedSample SquashedGaussianPolicy::forward(Tape& tape, Var states, const Tensor& noise,
                                                                    bool trainable) {
  if (noise.rows() != states.rows() || noise.cols() != action_dim()) throw ConfigError("policy: noise shape");
  Var out = nn::mlp_forward(tape, net_, states, trainable);
  Var mean = nn::head_block(net_.shape, out, 0);
  Var log_std = nn::clip(nn::head_block(net_.shape, out, 1), kLogStdMin, kLogStdMax);
  Var u = nn::add(mean, nn::mul(nn::exp(log_std), tape.constant(noise)));
  Var actions = nn::add(nn::mul(nn::tanh(u), tape.constant(scale_)), tape.constant(center_));

  Tensor c(noise.rows(), noise.cols());
  for (Eigen::Index i = 0; i < c.rows(); ++i)
    for (Eigen::Index d = 0; d < c.cols(); ++d)
      c(i, d) = -0.5 * noise(i, d) * noise(i, d) - kHalfLog2Pi - 2.0 * kLog2 - std::log(scale_(0, d));
  Var squash = nn::scale(nn::add(u, nn::softplus(nn::scale(u, -1.0))), 2.0);
  Var per_dim = nn::add(nn::sub(tape.constant(std::move(c)), log_std), squash);
  return {actions, nn::row_sum(per_dim)};
}

Temperature::Temperature(double initial_alpha, double target_entropy, bool learnable, double lr)
    : log_alpha_(Tensor::Constant(1, 1, std::log(initial_alpha))),
      target_entropy_(target_entropy),
      learnable_(learnable) {
  if (!(initial_alpha >= 0.0)) throw ConfigError("temperature: alpha must be non-negative");
  if (learnable && initial_alpha <= 0.0) throw ConfigError("temperature: learnable alpha must start positive");
  nn::Parameter* p = &log_alpha_;
  adam_ = nn::make_adam(std::span<nn::Parameter* const>(&p, 1), nn::AdamConfig{.lr = lr});
}

double Temperature::alpha() const { return std::exp(log_alpha_.value(0, 0)); }

double Temperature::update(const Vector& log_prob) {
  if (!learnable_) return 0.0;
  const double g = -(log_prob.array() + target_entropy_).mean();
  log_alpha_.grad(0, 0) = g;
  nn::Parameter* p = &log_alpha_;
  nn::adam_step(adam_, std::span<nn::Parameter* const>(&p, 1));
  return g;
}

void Temperature::save(nn::BinaryWriter& w) const {
  w.f64(log_alpha_.value(0, 0));
  nn::save_adam(w, adam_);
}

void Temperature::load(nn::BinaryReader& r) {
  log_alpha_.value(0, 0) = r.f64();
  nn::Parameter* p = &log_alpha_;
  nn::load_adam(r, adam_, std::span<nn::Parameter* const>(&p, 1));
}

}  // namespace cmbac::actor
