#include "cmbac/nn/mlp.hpp"

#include <cmath>
#include <numeric>

#include "cmbac/common/errors.hpp"

namespace cmbac::nn {

Activation parse_activation(const std::string& name) {
  if (name == "relu") return Activation::Relu;
  if (name == "tanh") return Activation::Tanh;
  throw ConfigError("unknown activation '" + name + "'");
}

std::string to_string(Activation a) { return a == Activation::Relu ? "relu" : "tanh"; }

int MlpShape::output_dim() const { return std::accumulate(head_widths.begin(), head_widths.end(), 0); }

std::vector<Parameter*> MlpParams::parameters() {
  std::vector<Parameter*> out;
  for (auto& l : layers) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

std::vector<const Parameter*> MlpParams::parameters() const {
  std::vector<const Parameter*> out;
  for (const auto& l : layers) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

std::size_t MlpParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : parameters()) n += static_cast<std::size_t>(p->value.size());
  return n;
}

MlpParams make_mlp(const MlpShape& shape, Rng& rng) {
  if (shape.input_dim <= 0) throw ConfigError("mlp: input_dim must be positive");
  if (shape.head_widths.empty()) throw ConfigError("mlp: at least one output head required");
  for (int w : shape.head_widths) {
    if (w <= 0) throw ConfigError("mlp: head widths must be positive");
  }
  MlpParams p;
  p.shape = shape;
  std::vector<int> dims{shape.input_dim};
  for (int h : shape.hidden) {
    if (h <= 0) throw ConfigError("mlp: hidden widths must be positive");
    dims.push_back(h);
  }
  dims.push_back(shape.output_dim());
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(dims[i]));
    Tensor w(dims[i], dims[i + 1]);
    Tensor b(1, dims[i + 1]);
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = rng.uniform(-bound, bound);
    for (Eigen::Index c = 0; c < b.cols(); ++c) b(0, c) = rng.uniform(-bound, bound);
    p.layers.push_back(Linear{Parameter(std::move(w)), Parameter(std::move(b))});
  }
  return p;
}

void validate(const MlpParams& params) {
  const auto& s = params.shape;
  if (params.layers.size() != s.hidden.size() + 1) throw ConfigError("mlp: layer count mismatch");
  if (s.head_widths.empty()) throw ConfigError("mlp: at least one output head required");
  Eigen::Index in = s.input_dim;
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    const auto& l = params.layers[i];
    const Eigen::Index out = i < s.hidden.size() ? s.hidden[i] : s.output_dim();
    if (l.weight.value.rows() != in || l.weight.value.cols() != out || l.bias.value.rows() != 1 ||
        l.bias.value.cols() != out) {
      throw ConfigError("mlp: layer " + std::to_string(i) + " has inconsistent dimensions");
    }
    in = out;
  }
}

namespace {

void activate(Tensor& h, Activation a) {
  if (a == Activation::Relu) {
    h = h.cwiseMax(0.0);
  } else {
    h = h.array().tanh();
  }
}

}  // namespace

Tensor mlp_forward(const MlpParams& params, const Tensor& input) {
  if (input.cols() != params.shape.input_dim) {
    throw ConfigError("mlp_forward: input width " + std::to_string(input.cols()) + " != " +
                      std::to_string(params.shape.input_dim));
  }
  Tensor h = input;
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    const auto& l = params.layers[i];
    Tensor z;
    z.noalias() = h * l.weight.value;
    z.rowwise() += l.bias.value.row(0);
    if (i + 1 < params.layers.size()) activate(z, params.shape.activation);
    h = std::move(z);
  }
  return h;
}

Var mlp_forward(Tape& tape, MlpParams& params, Var input, bool trainable) {
  if (input.cols() != params.shape.input_dim) {
    throw ConfigError("mlp_forward: input width " + std::to_string(input.cols()) + " != " +
                      std::to_string(params.shape.input_dim));
  }
  Var h = input;
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    auto& l = params.layers[i];
    Var w = trainable ? tape.param(l.weight) : tape.constant(l.weight.value);
    Var b = trainable ? tape.param(l.bias) : tape.constant(l.bias.value);
    h = add(matmul(h, w), b);
    if (i + 1 < params.layers.size()) {
      h = params.shape.activation == Activation::Relu ? relu(h) : tanh(h);
    }
  }
  return h;
}

namespace {

std::pair<Eigen::Index, Eigen::Index> head_range(const MlpShape& shape, std::size_t h) {
  if (h >= shape.head_widths.size()) throw ConfigError("head index out of range");
  Eigen::Index start = 0;
  for (std::size_t i = 0; i < h; ++i) start += shape.head_widths[i];
  return {start, shape.head_widths[h]};
}

}  // namespace

Tensor head_block(const MlpShape& shape, const Tensor& output, std::size_t h) {
  auto [start, count] = head_range(shape, h);
  return output.middleCols(start, count);
}

Var head_block(const MlpShape& shape, Var output, std::size_t h) {
  auto [start, count] = head_range(shape, h);
  return slice_cols(output, start, count);
}

}  // namespace cmbac::nn
