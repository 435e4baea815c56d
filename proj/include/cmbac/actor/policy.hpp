#pragma once

#include <vector>

#include "cmbac/nn/adam.hpp"
#include "cmbac/nn/mlp.hpp"
#include "cmbac/nn/serialize.hpp"

namespace cmbac::actor {

using nn::Tape;
using nn::Tensor;
using nn::Var;
using nn::Vector;

inline constexpr double kLogStdMin = -20.0;
inline constexpr double kLogStdMax = 2.0;

/// Gaussian policy squashed through tanh and rescaled to the action box.
///
/// u = mu(s) + sigma(s) * eps, a = center + scale * tanh(u), and
///   log pi(a|s) = sum_d [ log N(u_d; mu_d, sigma_d) - log(1 - tanh(u_d)^2) - log(scale_d) ]
/// where log(1 - tanh(u)^2) = 2 (log 2 - u - softplus(-2u)).
class SquashedGaussianPolicy {
 public:
  struct Sample {
    Tensor actions;
    Vector log_prob;
  };
  struct TapedSample {
    Var actions;
    Var log_prob;  // B x 1
  };

  SquashedGaussianPolicy() = default;
  SquashedGaussianPolicy(int state_dim, std::vector<double> action_low, std::vector<double> action_high,
                         std::vector<int> hidden, nn::Activation act, Rng& rng);

  int state_dim() const { return net_.shape.input_dim; }
  int action_dim() const { return static_cast<int>(center_.cols()); }

  // Mean and clamped log-std of u, each B x dim(A).
  void distribution(const Tensor& states, Tensor& mean, Tensor& log_std) const;

  Sample sample(const Tensor& states, Rng& rng) const;  // noise drawn row by row
  Sample sample_with_noise(const Tensor& states, const Tensor& noise) const;
  Tensor deterministic(const Tensor& states) const;    // center + scale * tanh(mu)

  TapedSample forward(Tape& tape, Var states, const Tensor& noise, bool trainable = true);

  Tensor draw_noise(Eigen::Index rows, Rng& rng) const;

  nn::MlpParams& params() { return net_; }
  const nn::MlpParams& params() const { return net_; }

 private:
  nn::MlpParams net_;
  Tensor center_;  // 1 x dim(A)
  Tensor scale_;   // 1 x dim(A)
};

/// Entropy temperature alpha = exp(log_alpha).
///
/// Learnable mode takes Adam steps on J(log_alpha) = -log_alpha * mean(log pi + H_target)
/// with H_target = -dim(A) by default; fixed mode never moves.
class Temperature {
 public:
  Temperature() = default;
  Temperature(double initial_alpha, double target_entropy, bool learnable, double lr);

  double alpha() const;
  double log_alpha() const { return log_alpha_.value(0, 0); }
  double target_entropy() const { return target_entropy_; }
  bool learnable() const { return learnable_; }

  // Returns d J / d log_alpha for the batch (0 in fixed mode).
  double update(const Vector& log_prob);

  void save(nn::BinaryWriter& w) const;
  void load(nn::BinaryReader& r);

 private:
  nn::Parameter log_alpha_;
  double target_entropy_ = 0.0;
  bool learnable_ = false;
  nn::AdamState adam_;
};

}  // namespace cmbac::actor
