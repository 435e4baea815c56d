#include "cmbac/envs/envs.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "cmbac/common/errors.hpp"

namespace cmbac::envs {

Tensor Environment::clip_actions(const Tensor& actions) const {
  const auto& s = spec();
  Tensor out = actions;
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    out.row(r) = out.row(r).cwiseMax(s.action_low.transpose()).cwiseMin(s.action_high.transpose());
  }
  return out;
}

namespace {

void check_batch(const EnvSpec& spec, const Tensor& states, const Tensor& actions) {
  if (states.cols() != spec.state_dim || actions.cols() != spec.action_dim || states.rows() != actions.rows()) {
    throw ConfigError(spec.name + ": state/action batch shape mismatch");
  }
}

}  // namespace

// ---------------------------------------------------------------- Point2D

Point2D::Point2D(Point2DConfig config) : config_(config) {
  if (!(config_.reward_scale > 0.0) || !(config_.reward_bandwidth > 0.0)) {
    throw ConfigError("point2d: reward scale and bandwidth must be positive");
  }
  if (std::abs(config_.goal_x) > config_.state_bound || std::abs(config_.goal_y) > config_.state_bound) {
    throw ConfigError("point2d: goal outside the state box");
  }
  if (config_.horizon < 1) throw ConfigError("point2d: horizon must be >= 1");
  spec_.name = "point2d";
  spec_.state_dim = 2;
  spec_.action_dim = 2;
  spec_.action_low = Vector::Constant(2, -config_.action_bound);
  spec_.action_high = Vector::Constant(2, config_.action_bound);
  spec_.horizon = config_.horizon;
}

Vector Point2D::sample_initial_state(Rng& rng) const {
  Vector s(2);
  s(0) = rng.uniform(-config_.state_bound, config_.state_bound);
  s(1) = rng.uniform(-config_.state_bound, config_.state_bound);
  return s;
}

void Point2D::step(const Tensor& states, const Tensor& actions, Tensor& next_states, Vector& rewards,
                   Rng&) const {
  check_batch(spec_, states, actions);
  const double b = config_.state_bound;
  next_states = (states + actions).cwiseMax(-b).cwiseMin(b);
  rewards.resize(states.rows());
  for (Eigen::Index i = 0; i < states.rows(); ++i) {
    const double dx = next_states(i, 0) - config_.goal_x;
    const double dy = next_states(i, 1) - config_.goal_y;
    rewards(i) = config_.reward_scale * std::exp(-(dx * dx + dy * dy) / config_.reward_bandwidth);
  }
}

Vector Point2D::reward(const Tensor& states, const Tensor& actions) const {
  Tensor next;
  Vector r;
  Rng unused(0);
  step(states, actions, next, r, unused);
  return r;
}

// ---------------------------------------------------------------- Pendulum

Pendulum::Pendulum(PendulumConfig config) : config_(config) {
  if (config_.horizon < 1) throw ConfigError("pendulum: horizon must be >= 1");
  spec_.name = "pendulum";
  spec_.state_dim = 3;
  spec_.action_dim = 1;
  spec_.action_low = Vector::Constant(1, -config_.max_torque);
  spec_.action_high = Vector::Constant(1, config_.max_torque);
  spec_.horizon = config_.horizon;
}

Vector Pendulum::sample_initial_state(Rng& rng) const {
  const double th = rng.uniform(-std::numbers::pi, std::numbers::pi);
  const double thdot = rng.uniform(-1.0, 1.0);
  Vector s(3);
  s << std::cos(th), std::sin(th), thdot;
  return s;
}

namespace {

double angle_normalize(double x) {
  const double two_pi = 2.0 * std::numbers::pi;
  double y = std::fmod(x + std::numbers::pi, two_pi);
  if (y < 0.0) y += two_pi;
  return y - std::numbers::pi;
}

}  // namespace

Vector Pendulum::reward(const Tensor& states, const Tensor& actions) const {
  check_batch(spec_, states, actions);
  Vector r(states.rows());
  for (Eigen::Index i = 0; i < states.rows(); ++i) {
    const double th = angle_normalize(std::atan2(states(i, 1), states(i, 0)));
    const double thdot = states(i, 2);
    const double u = std::clamp(actions(i, 0), -config_.max_torque, config_.max_torque);
    r(i) = -(th * th + 0.1 * thdot * thdot + 0.001 * u * u);
  }
  return r;
}

void Pendulum::step(const Tensor& states, const Tensor& actions, Tensor& next_states, Vector& rewards,
                    Rng&) const {
  rewards = reward(states, actions);
  next_states.resize(states.rows(), 3);
  const auto& c = config_;
  for (Eigen::Index i = 0; i < states.rows(); ++i) {
    const double th = std::atan2(states(i, 1), states(i, 0));
    const double thdot = states(i, 2);
    const double u = std::clamp(actions(i, 0), -c.max_torque, c.max_torque);
    double new_thdot =
        thdot + (3.0 * c.gravity / (2.0 * c.length) * std::sin(th) + 3.0 / (c.mass * c.length * c.length) * u) * c.dt;
    new_thdot = std::clamp(new_thdot, -c.max_speed, c.max_speed);
    const double new_th = th + new_thdot * c.dt;
    next_states(i, 0) = std::cos(new_th);
    next_states(i, 1) = std::sin(new_th);
    next_states(i, 2) = new_thdot;
  }
}

// ---------------------------------------------------------------- noise

Tensor noisy_action(const Tensor& actions, double sigma, const Vector& low, const Vector& high, Rng& rng) {
  if (sigma < 0.0) throw ConfigError("noisy_action: sigma must be >= 0");
  Tensor out = actions;
  if (sigma > 0.0) {
    for (Eigen::Index r = 0; r < out.rows(); ++r)
      for (Eigen::Index c = 0; c < out.cols(); ++c) out(r, c) += sigma * rng.normal();
  }
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    out.row(r) = out.row(r).cwiseMax(low.transpose()).cwiseMin(high.transpose());
  }
  return out;
}

NoisyAction::NoisyAction(std::unique_ptr<Environment> base, double sigma)
    : base_(std::move(base)), sigma_(sigma) {
  if (!base_) throw ConfigError("noisy wrapper: null base environment");
  if (sigma_ < 0.0) throw ConfigError("noisy wrapper: sigma must be >= 0");
  spec_ = base_->spec();
  spec_.name += "-noisy";
}

void NoisyAction::step(const Tensor& states, const Tensor& actions, Tensor& next_states, Vector& rewards,
                       Rng& rng) const {
  Tensor executed = noisy_action(actions, sigma_, spec_.action_low, spec_.action_high, rng);
  base_->step(states, executed, next_states, rewards, rng);
}

// ---------------------------------------------------------------- helpers

Tensor scripted_point_policy(const Tensor& states, const Point2DConfig& config) {
  Tensor a(states.rows(), 2);
  for (Eigen::Index i = 0; i < states.rows(); ++i) {
    a(i, 0) = std::clamp(config.goal_x - states(i, 0), -config.action_bound, config.action_bound);
    a(i, 1) = std::clamp(config.goal_y - states(i, 1), -config.action_bound, config.action_bound);
  }
  return a;
}

namespace {

StepResult single_step(const Environment& env, const Vector& s, const Vector& a) {
  Tensor S = s.transpose();
  Tensor A = a.transpose();
  Tensor S2;
  Vector R;
  Rng unused(0);
  env.step(S, A, S2, R, unused);
  return {S2.row(0).transpose(), R(0)};
}

}  // namespace

StepResult point2d_step(const Vector& s, const Vector& a, const Point2DConfig& config) {
  return single_step(Point2D(config), s, a);
}

StepResult pendulum_step(const Vector& s, const Vector& a, const PendulumConfig& config) {
  return single_step(Pendulum(config), s, a);
}

std::unique_ptr<Environment> make_env(const std::string& name, double noise_sigma) {
  if (name == "point2d") return std::make_unique<Point2D>();
  if (name == "pendulum") return std::make_unique<Pendulum>();
  if (name == "point2d-noisy") return std::make_unique<NoisyAction>(std::make_unique<Point2D>(), noise_sigma);
  if (name == "pendulum-noisy") return std::make_unique<NoisyAction>(std::make_unique<Pendulum>(), noise_sigma);
  throw ConfigError("unknown environment '" + name + "'");
}

// ---------------------------------------------------------------- episodes

void EpisodeRunner::reset(Rng& rng) {
  state_ = env_->sample_initial_state(rng);
  t_ = 0;
  return_ = 0.0;
}

EpisodeRunner::Transition EpisodeRunner::step(const Vector& action, Rng& rng) {
  if (!started()) throw UsageError("EpisodeRunner::step before reset");
  Tensor S = state_.transpose();
  Tensor A = env_->clip_actions(action.transpose());
  Tensor S2;
  Vector R;
  env_->step(S, A, S2, R, rng);
  Transition tr;
  tr.state = state_;
  tr.action = A.row(0).transpose();
  tr.reward = R(0);
  tr.next_state = S2.row(0).transpose();
  ++t_;
  return_ += tr.reward;
  tr.done = t_ >= env_->spec().horizon;
  state_ = tr.next_state;
  return tr;
}

}  // namespace cmbac::envs
