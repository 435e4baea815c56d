#pragma once

#include <string>
#include <vector>

#include "cmbac/common/rng.hpp"
#include "cmbac/nn/tape.hpp"

namespace cmbac::nn {

enum class Activation { Tanh, Relu };

Activation parse_activation(const std::string& name);
std::string to_string(Activation a);

struct Linear {
  Parameter weight;  // in x out
  Parameter bias;    // 1 x out
};

/// Layer sizes of a multilayer perceptron with one or more linear output heads.
///
/// The heads branch off the last hidden layer. They are stored as one fused
/// output layer whose columns are partitioned by `head_widths`, which is the
/// same function as separate linear heads.
struct MlpShape {
  int input_dim = 0;
  std::vector<int> hidden;
  Activation activation = Activation::Relu;
  std::vector<int> head_widths{1};

  int output_dim() const;
};

/// Weights of an MLP; `layers.back()` is the fused head layer.
struct MlpParams {
  MlpShape shape;
  std::vector<Linear> layers;

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  std::size_t parameter_count() const;
};

// Weights and biases uniform in +-1/sqrt(fan_in).
MlpParams make_mlp(const MlpShape& shape, Rng& rng);

// Checks consecutive layer dimensions and head partition; throws ConfigError.
void validate(const MlpParams& params);

/// Plain forward pass without recording, returning all head columns.
Tensor mlp_forward(const MlpParams& params, const Tensor& input);

/// Recorded forward pass. With `trainable == false` the weights enter the tape
/// as constants: gradients still flow to the input, never to the weights.
Var mlp_forward(Tape& tape, MlpParams& params, Var input, bool trainable = true);

// Column block of head `h` from a fused output.
Tensor head_block(const MlpShape& shape, const Tensor& output, std::size_t h);
Var head_block(const MlpShape& shape, Var output, std::size_t h);

}  // namespace cmbac::nn
