#pragma once

#include <span>
#include <vector>

#include "cmbac/nn/serialize.hpp"
#include "cmbac/nn/tape.hpp"

namespace cmbac::nn {

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moment accumulators for a fixed parameter list.
struct AdamState {
  AdamConfig config;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  long step = 0;
};

AdamState make_adam(std::span<Parameter* const> params, AdamConfig config);

/// One bias-corrected Adam update using each parameter's `grad`.
///
///   m <- b1 m + (1-b1) g
///   v <- b2 v + (1-b2) g^2
///   p <- p - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
void adam_step(AdamState& state, std::span<Parameter* const> params);

void zero_grad(std::span<Parameter* const> params);

// Moments and step count. `load_adam` checks moment shapes against `params`.
void save_adam(BinaryWriter& w, const AdamState& state);
void load_adam(BinaryReader& r, AdamState& state, std::span<Parameter* const> params);

}  // namespace cmbac::nn
