#pragma once

#include <vector>

#include "cmbac/common/rng.hpp"
#include "cmbac/model/buffers.hpp"
#include "cmbac/nn/adam.hpp"
#include "cmbac/nn/mlp.hpp"
#include "cmbac/nn/serialize.hpp"

namespace cmbac::model {

using nn::Parameter;
using nn::Tape;
using nn::Var;

/// Per-column standardization. Columns with (near) zero spread keep scale 1.
struct Normalizer {
  Tensor mean;  // 1 x d
  Tensor std;   // 1 x d

  static Normalizer identity(int dim);
  static Normalizer fit(const Tensor& data);
  Tensor normalize(const Tensor& x) const;
  Tensor denormalize(const Tensor& x) const;
};

/// Mean over rows of sum over columns of
///   0.5 * [ (target - mean)^2 / exp(logvar) + logvar + log(2 pi) ].
Var gaussian_nll(Tape& tape, Var mean, Var logvar, const Tensor& target);

/// Probabilistic network predicting a diagonal Gaussian over (delta s, r) in
/// normalized target units. Log-variances pass through soft clamps with
/// trainable bounds: lv = max - softplus(max - raw); lv = min + softplus(lv - min).
class GaussianDynamicsNet {
 public:
  struct Prediction {
    Tensor mean;
    Tensor logvar;
  };
  struct PredictionVar {
    Var mean;
    Var logvar;
  };

  GaussianDynamicsNet(int input_dim, int output_dim, const std::vector<int>& hidden, nn::Activation activation,
                      Rng& rng);

  Prediction predict(const Tensor& normalized_inputs) const;
  PredictionVar forward(Tape& tape, Var normalized_inputs);

  // 0.01 * (sum(max_logvar) - sum(min_logvar)); keeps the bounds tight.
  Var bound_penalty(Tape& tape, double coef);

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  int output_dim() const { return output_dim_; }

  nn::MlpParams net;
  Parameter max_logvar;
  Parameter min_logvar;

 private:
  int output_dim_;
};

struct EnsembleConfig {
  int ensemble_size = 7;
  int elite_count = 5;
  std::vector<int> hidden{200, 200, 200, 200};
  nn::Activation activation = nn::Activation::Relu;
  double learning_rate = 1e-3;
  int batch_size = 256;
  int train_steps = 1000;  // minibatch steps per network per training call
  double holdout_fraction = 0.2;
  int max_holdout = 5000;
  std::size_t min_buffer = 200;
  double bound_penalty = 0.01;
};

/// Raw-unit Gaussian output of one member: columns [delta s ..., r].
struct MemberPrediction {
  Tensor mean;
  Tensor var;
};

struct TrainReport {
  bool trained = false;
  bool non_finite = false;
  std::vector<double> holdout_nll;  // per network, normalized units
  std::vector<double> holdout_mse;  // per network, mean prediction error
  std::vector<int> elites;
  double mean_elite_nll = 0.0;
  double mean_elite_mse = 0.0;
};

// Indices of the `count` smallest scores (ties by index), sorted ascending.
std::vector<int> select_elites(const std::vector<double>& scores, int count);

/// Bootstrap ensemble of probabilistic dynamics networks with elite subset.
class GaussianEnsemble {
 public:
  GaussianEnsemble(int state_dim, int action_dim, EnsembleConfig config, Rng& init_rng);

  // Trains each member on its own bootstrap resample of the non-holdout part
  // of D_env, then picks elites by holdout NLL. Returns trained=false (and
  // leaves the ensemble untouched) when D_env is below min_buffer. A member
  // whose loss goes non-finite is restored to its pre-call weights and the
  // report is flagged.
  TrainReport train(const EnvBuffer& data, Rng& rng);

  MemberPrediction predict(int member, const Tensor& states, const Tensor& actions) const;
  // Draw from member's Gaussian; returns (next states, rewards).
  void sample(int member, const Tensor& states, const Tensor& actions, Tensor& next_states, Vector& rewards,
              Rng& rng) const;

  bool trained() const { return trained_; }
  const std::vector<int>& elites() const { return elites_; }
  void set_elites(std::vector<int> elites);
  int size() const { return static_cast<int>(nets_.size()); }
  int state_dim() const { return state_dim_; }
  int action_dim() const { return action_dim_; }
  const EnsembleConfig& config() const { return config_; }
  const Normalizer& input_normalizer() const { return input_norm_; }
  const Normalizer& target_normalizer() const { return target_norm_; }
  void set_normalizers(Normalizer in, Normalizer out);

  GaussianDynamicsNet& net(int i) { return nets_[static_cast<std::size_t>(i)]; }
  const GaussianDynamicsNet& net(int i) const { return nets_[static_cast<std::size_t>(i)]; }

  void save(nn::BinaryWriter& w) const;
  void load(nn::BinaryReader& r);

 private:
  int state_dim_;
  int action_dim_;
  EnsembleConfig config_;
  std::vector<GaussianDynamicsNet> nets_;
  std::vector<nn::AdamState> optimizers_;
  std::vector<int> elites_;
  Normalizer input_norm_;
  Normalizer target_norm_;
  bool trained_ = false;
};

}  // namespace cmbac::model
