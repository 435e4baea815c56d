#pragma once

#include <memory>
#include <string>

#include "cmbac/common/rng.hpp"
#include "cmbac/nn/tensor.hpp"

namespace cmbac::envs {

using nn::Tensor;
using nn::Vector;

struct EnvSpec {
  std::string name;
  int state_dim = 0;
  int action_dim = 0;
  Vector action_low;
  Vector action_high;
  int horizon = 1;  // steps per episode; episodes end only at the horizon
};

/// A continuous-control task with batched, stateless dynamics.
///
/// `step` maps rows of (S, A) to next states and rewards. Base environments are
/// deterministic and ignore `rng`; wrappers may draw from it. Episode
/// bookkeeping (time step, reset at the horizon) lives in EpisodeRunner.
class Environment {
 public:
  virtual ~Environment() = default;

  virtual const EnvSpec& spec() const = 0;
  virtual Vector sample_initial_state(Rng& rng) const = 0;
  virtual void step(const Tensor& states, const Tensor& actions, Tensor& next_states, Vector& rewards,
                    Rng& rng) const = 0;
  // Analytic reward r(s, a) of the noiseless task.
  virtual Vector reward(const Tensor& states, const Tensor& actions) const = 0;

  Tensor clip_actions(const Tensor& actions) const;
};

struct Point2DConfig {
  double goal_x = 0.0;
  double goal_y = 0.0;
  double reward_scale = 0.05;     // c
  double reward_bandwidth = 5.0;  // alpha_env
  int horizon = 50;
  double state_bound = 2.0;
  double action_bound = 1.0;
};

/// 2-D point mass: s' = clip(s + a, -2, 2), r = c * exp(-|s' - g|^2 / alpha_env).
class Point2D final : public Environment {
 public:
  explicit Point2D(Point2DConfig config = {});

  const EnvSpec& spec() const override { return spec_; }
  const Point2DConfig& config() const { return config_; }
  Vector sample_initial_state(Rng& rng) const override;
  void step(const Tensor& states, const Tensor& actions, Tensor& next_states, Vector& rewards,
            Rng& rng) const override;
  Vector reward(const Tensor& states, const Tensor& actions) const override;

 private:
  Point2DConfig config_;
  EnvSpec spec_;
};

struct PendulumConfig {
  double gravity = 10.0;
  double mass = 1.0;
  double length = 1.0;
  double dt = 0.05;
  double max_speed = 8.0;
  double max_torque = 2.0;
  int horizon = 200;
};

/// Torque-limited pendulum with observation (cos th, sin th, thdot); th = 0 is
/// upright. Reward -(th^2 + 0.1 thdot^2 + 0.001 u^2) on the current state.
class Pendulum final : public Environment {
 public:
  explicit Pendulum(PendulumConfig config = {});

  const EnvSpec& spec() const override { return spec_; }
  const PendulumConfig& config() const { return config_; }
  Vector sample_initial_state(Rng& rng) const override;
  void step(const Tensor& states, const Tensor& actions, Tensor& next_states, Vector& rewards,
            Rng& rng) const override;
  Vector reward(const Tensor& states, const Tensor& actions) const override;

 private:
  PendulumConfig config_;
  EnvSpec spec_;
};

/// Adds N(0, sigma^2 I) to every executed action, then clips to the action box.
class NoisyAction final : public Environment {
 public:
  NoisyAction(std::unique_ptr<Environment> base, double sigma);

  const EnvSpec& spec() const override { return spec_; }
  double sigma() const { return sigma_; }
  const Environment& base() const { return *base_; }
  Vector sample_initial_state(Rng& rng) const override { return base_->sample_initial_state(rng); }
  void step(const Tensor& states, const Tensor& actions, Tensor& next_states, Vector& rewards,
            Rng& rng) const override;
  Vector reward(const Tensor& states, const Tensor& actions) const override {
    return base_->reward(states, actions);
  }

 private:
  std::unique_ptr<Environment> base_;
  double sigma_;
  EnvSpec spec_;
};

// Row-wise a + eps, eps ~ N(0, sigma^2 I), clipped to [low, high].
Tensor noisy_action(const Tensor& actions, double sigma, const Vector& low, const Vector& high, Rng& rng);

// Greedy oracle for Point2D: a = clip(g - s, -1, 1).
Tensor scripted_point_policy(const Tensor& states, const Point2DConfig& config = {});

// Single-sample helpers mirroring the batched step.
struct StepResult {
  Vector next_state;
  double reward = 0.0;
};
StepResult point2d_step(const Vector& s, const Vector& a, const Point2DConfig& config = {});
StepResult pendulum_step(const Vector& s, const Vector& a, const PendulumConfig& config = {});

/// Builds `point2d`, `pendulum`, `point2d-noisy` or `pendulum-noisy`.
std::unique_ptr<Environment> make_env(const std::string& name, double noise_sigma = 0.1);

/// Tracks the current state and time step of one episode.
class EpisodeRunner {
 public:
  struct Transition {
    Vector state;
    Vector action;
    double reward = 0.0;
    Vector next_state;
    bool done = false;  // true on the step that reaches the horizon
  };

  explicit EpisodeRunner(const Environment& env) : env_(&env) {}

  void reset(Rng& rng);
  Transition step(const Vector& action, Rng& rng);

  const Vector& state() const { return state_; }
  int time_step() const { return t_; }
  double episode_return() const { return return_; }
  bool started() const { return state_.size() > 0; }

  void restore(Vector state, int t, double episode_return) {
    state_ = std::move(state);
    t_ = t;
    return_ = episode_return;
  }

 private:
  const Environment* env_;
  Vector state_;
  int t_ = 0;
  double return_ = 0.0;
};

}  // namespace cmbac::envs
