#pragma once

#include <functional>
#include <string>
#include <vector>

#include "cmbac/nn/tensor.hpp"

namespace cmbac::nn {

/// A trainable tensor with an accumulated gradient of the same shape.
struct Parameter {
  Tensor value;
  Tensor grad;

  Parameter() = default;
  explicit Parameter(Tensor v) : value(std::move(v)), grad(Tensor::Zero(value.rows(), value.cols())) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

class Tape;

/// Handle to a node recorded on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// Reverse-mode autodiff tape.
///
/// Operations append nodes in evaluation order; `backward` walks them in
/// reverse and accumulates into `Parameter::grad` for every parameter leaf.
/// Constants and anything computed purely from constants carry no gradient.
/// A tape is single use: record one loss, call `backward` once, discard.
class Tape {
 public:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Parameter* param = nullptr;
    std::function<void(Tape&, const Node&)> backward;
  };

  Var constant(Tensor value);
  Var param(Parameter& p);

  // Seeds d(loss)/d(loss) = 1 and propagates. Throws UsageError unless the
  // node is 1x1.
  void backward(Var loss);

  Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }
  const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
  std::size_t size() const { return nodes_.size(); }

  // Used by op implementations.
  Var push(Tensor value, bool requires_grad, std::function<void(Tape&, const Node&)> backward);
  void accumulate(int id, const Tensor& g);

 private:
  std::vector<Node> nodes_;
};

// Elementwise binary ops accept equal shapes, or a right operand that is a
// 1xC row (broadcast down rows), an Rx1 column (broadcast across columns), or
// 1x1 scalar. The result has the left operand's shape.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var minimum(Var a, Var b);  // equal shapes; ties route the gradient to `a`

Var matmul(Var a, Var b);
Var scale(Var a, double k);
Var shift(Var a, double k);
Var tanh(Var a);
Var relu(Var a);
Var exp(Var a);
Var log(Var a);
Var square(Var a);
Var sqrt(Var a);  // gradient taken as 0 where the value is 0
Var softplus(Var a);
Var clip(Var a, double lo, double hi);

Var sum(Var a);      // -> 1x1
Var mean(Var a);     // -> 1x1
Var row_sum(Var a);  // -> Rx1

Var slice_cols(Var a, Eigen::Index start, Eigen::Index count);
Var concat_cols(Var a, Var b);

}  // namespace cmbac::nn
