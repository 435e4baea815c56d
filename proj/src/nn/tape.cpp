#include "cmbac/nn/tape.hpp"

#include <cmath>

#include "cmbac/common/errors.hpp"

namespace cmbac::nn {

const Tensor& Var::value() const { return tape_->node(id_).value; }

Tensor hcat(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows()) throw ConfigError("hcat: row mismatch");
  Tensor out(a.rows(), a.cols() + b.cols());
  out << a, b;
  return out;
}

Var Tape::push(Tensor value, bool requires_grad, std::function<void(Tape&, const Node&)> backward) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::constant(Tensor value) { return push(std::move(value), false, nullptr); }

Var Tape::param(Parameter& p) {
  Var v = push(p.value, true, nullptr);
  node(v.id()).param = &p;
  return v;
}

void Tape::accumulate(int id, const Tensor& g) {
  Node& n = node(id);
  if (!n.requires_grad) return;
  if (n.grad.size() == 0) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

void Tape::backward(Var loss) {
  if (loss.tape() != this) throw UsageError("backward: node belongs to another tape");
  const Node& root = node(loss.id());
  if (root.value.rows() != 1 || root.value.cols() != 1) {
    throw UsageError("backward: loss must be a 1x1 scalar");
  }
  if (!root.requires_grad) return;
  accumulate(loss.id(), Tensor::Ones(1, 1));
  for (int id = loss.id(); id >= 0; --id) {
    Node& n = node(id);
    if (!n.requires_grad || n.grad.size() == 0) continue;
    if (n.param != nullptr) {
      if (n.param->grad.rows() != n.value.rows() || n.param->grad.cols() != n.value.cols()) {
        n.param->zero_grad();
      }
      n.param->grad += n.grad;
    } else if (n.backward) {
      n.backward(*this, n);
    }
  }
}

namespace {

enum class Bcast { Same, Row, Col, Scalar };

Bcast classify(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) return Bcast::Same;
  if (b.rows() == 1 && b.cols() == 1) return Bcast::Scalar;
  if (b.rows() == 1 && b.cols() == a.cols()) return Bcast::Row;
  if (b.cols() == 1 && b.rows() == a.rows()) return Bcast::Col;
  throw ConfigError(std::string(op) + ": incompatible shapes " + std::to_string(a.rows()) + "x" +
                    std::to_string(a.cols()) + " and " + std::to_string(b.rows()) + "x" +
                    std::to_string(b.cols()));
}

Tensor expand(const Tensor& b, Bcast k, Eigen::Index rows, Eigen::Index cols) {
  switch (k) {
    case Bcast::Same:
      return b;
    case Bcast::Row:
      return b.replicate(rows, 1);
    case Bcast::Col:
      return b.replicate(1, cols);
    case Bcast::Scalar:
      return Tensor::Constant(rows, cols, b(0, 0));
  }
  return b;
}

Tensor reduce(const Tensor& g, Bcast k) {
  switch (k) {
    case Bcast::Same:
      return g;
    case Bcast::Row:
      return g.colwise().sum();
    case Bcast::Col:
      return g.rowwise().sum();
    case Bcast::Scalar:
      return Tensor::Constant(1, 1, g.sum());
  }
  return g;
}

bool needs(const Tape& t, Var v) { return t.node(v.id()).requires_grad; }

template <typename Fwd, typename Bwd>
Var unary(Var a, Fwd fwd, Bwd bwd) {
  Tape& t = *a.tape();
  Tensor out = fwd(a.value());
  const int ia = a.id();
  return t.push(std::move(out), needs(t, a), [ia, bwd](Tape& tp, const Tape::Node& self) {
    tp.accumulate(ia, bwd(tp.node(ia).value, self.value, self.grad));
  });
}

}  // namespace

Var add(Var a, Var b) {
  Tape& t = *a.tape();
  const Bcast k = classify(a.value(), b.value(), "add");
  Tensor out = a.value() + expand(b.value(), k, a.rows(), a.cols());
  const int ia = a.id(), ib = b.id();
  return t.push(std::move(out), needs(t, a) || needs(t, b), [ia, ib, k](Tape& tp, const Tape::Node& self) {
    tp.accumulate(ia, self.grad);
    if (tp.node(ib).requires_grad) tp.accumulate(ib, reduce(self.grad, k));
  });
}

Var sub(Var a, Var b) {
  Tape& t = *a.tape();
  const Bcast k = classify(a.value(), b.value(), "sub");
  Tensor out = a.value() - expand(b.value(), k, a.rows(), a.cols());
  const int ia = a.id(), ib = b.id();
  return t.push(std::move(out), needs(t, a) || needs(t, b), [ia, ib, k](Tape& tp, const Tape::Node& self) {
    tp.accumulate(ia, self.grad);
    if (tp.node(ib).requires_grad) tp.accumulate(ib, reduce(-self.grad, k));
  });
}

Var mul(Var a, Var b) {
  Tape& t = *a.tape();
  const Bcast k = classify(a.value(), b.value(), "mul");
  Tensor out = a.value().cwiseProduct(expand(b.value(), k, a.rows(), a.cols()));
  const int ia = a.id(), ib = b.id();
  return t.push(std::move(out), needs(t, a) || needs(t, b), [ia, ib, k](Tape& tp, const Tape::Node& self) {
    const Tensor& av = tp.node(ia).value;
    const Tensor& bv = tp.node(ib).value;
    if (tp.node(ia).requires_grad) {
      tp.accumulate(ia, self.grad.cwiseProduct(expand(bv, k, av.rows(), av.cols())));
    }
    if (tp.node(ib).requires_grad) tp.accumulate(ib, reduce(self.grad.cwiseProduct(av), k));
  });
}

Var minimum(Var a, Var b) {
  Tape& t = *a.tape();
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ConfigError("minimum: shape mismatch");
  Tensor out = a.value().cwiseMin(b.value());
  const int ia = a.id(), ib = b.id();
  return t.push(std::move(out), needs(t, a) || needs(t, b), [ia, ib](Tape& tp, const Tape::Node& self) {
    const Tensor& av = tp.node(ia).value;
    const Tensor& bv = tp.node(ib).value;
    Tensor mask = (av.array() <= bv.array()).cast<double>();
    if (tp.node(ia).requires_grad) tp.accumulate(ia, self.grad.cwiseProduct(mask));
    if (tp.node(ib).requires_grad) {
      tp.accumulate(ib, self.grad.cwiseProduct((1.0 - mask.array()).matrix()));
    }
  });
}

Var matmul(Var a, Var b) {
  Tape& t = *a.tape();
  if (a.cols() != b.rows()) {
    throw ConfigError("matmul: inner dimensions differ (" + std::to_string(a.cols()) + " vs " +
                      std::to_string(b.rows()) + ")");
  }
  Tensor out;
  out.noalias() = a.value() * b.value();
  const int ia = a.id(), ib = b.id();
  return t.push(std::move(out), needs(t, a) || needs(t, b), [ia, ib](Tape& tp, const Tape::Node& self) {
    if (tp.node(ia).requires_grad) {
      Tensor g;
      g.noalias() = self.grad * tp.node(ib).value.transpose();
      tp.accumulate(ia, g);
    }
    if (tp.node(ib).requires_grad) {
      Tensor g;
      g.noalias() = tp.node(ia).value.transpose() * self.grad;
      tp.accumulate(ib, g);
    }
  });
}

Var scale(Var a, double k) {
  return unary(
      a, [k](const Tensor& x) -> Tensor { return x * k; },
      [k](const Tensor&, const Tensor&, const Tensor& g) -> Tensor { return g * k; });
}

Var shift(Var a, double k) {
  return unary(
      a, [k](const Tensor& x) -> Tensor { return x.array() + k; },
      [](const Tensor&, const Tensor&, const Tensor& g) -> Tensor { return g; });
}

Var tanh(Var a) {
  return unary(
      a, [](const Tensor& x) -> Tensor { return x.array().tanh(); },
      [](const Tensor&, const Tensor& y, const Tensor& g) -> Tensor {
        return g.array() * (1.0 - y.array().square());
      });
}

Var relu(Var a) {
  return unary(
      a, [](const Tensor& x) -> Tensor { return x.cwiseMax(0.0); },
      [](const Tensor& x, const Tensor&, const Tensor& g) -> Tensor {
        return g.array() * (x.array() > 0.0).cast<double>();
      });
}

Var exp(Var a) {
  return unary(
      a, [](const Tensor& x) -> Tensor { return x.array().exp(); },
      [](const Tensor&, const Tensor& y, const Tensor& g) -> Tensor { return g.cwiseProduct(y); });
}

Var log(Var a) {
  return unary(
      a, [](const Tensor& x) -> Tensor { return x.array().log(); },
      [](const Tensor& x, const Tensor&, const Tensor& g) -> Tensor { return g.array() / x.array(); });
}

Var square(Var a) {
  return unary(
      a, [](const Tensor& x) -> Tensor { return x.array().square(); },
      [](const Tensor& x, const Tensor&, const Tensor& g) -> Tensor { return 2.0 * g.array() * x.array(); });
}

Var sqrt(Var a) {
  return unary(
      a, [](const Tensor& x) -> Tensor { return x.array().sqrt(); },
      [](const Tensor&, const Tensor& y, const Tensor& g) -> Tensor {
        return (y.array() > 0.0).select(0.5 * g.array() / y.array(), 0.0);
      });
}

Var softplus(Var a) {
  return unary(
      a,
      [](const Tensor& x) -> Tensor {
        // log(1 + e^x) = max(x, 0) + log1p(e^{-|x|})
        return x.array().max(0.0) + (-x.array().abs()).exp().log1p();
      },
      [](const Tensor& x, const Tensor&, const Tensor& g) -> Tensor {
        return g.array() / (1.0 + (-x.array()).exp());
      });
}

Var clip(Var a, double lo, double hi) {
  return unary(
      a, [lo, hi](const Tensor& x) -> Tensor { return x.cwiseMax(lo).cwiseMin(hi); },
      [lo, hi](const Tensor& x, const Tensor&, const Tensor& g) -> Tensor {
        return g.array() * ((x.array() >= lo) && (x.array() <= hi)).cast<double>();
      });
}

Var sum(Var a) {
  return unary(
      a, [](const Tensor& x) -> Tensor { return Tensor::Constant(1, 1, x.sum()); },
      [](const Tensor& x, const Tensor&, const Tensor& g) -> Tensor {
        return Tensor::Constant(x.rows(), x.cols(), g(0, 0));
      });
}

Var mean(Var a) {
  return unary(
      a, [](const Tensor& x) -> Tensor { return Tensor::Constant(1, 1, x.mean()); },
      [](const Tensor& x, const Tensor&, const Tensor& g) -> Tensor {
        return Tensor::Constant(x.rows(), x.cols(), g(0, 0) / static_cast<double>(x.size()));
      });
}

Var row_sum(Var a) {
  return unary(
      a, [](const Tensor& x) -> Tensor { return x.rowwise().sum(); },
      [](const Tensor& x, const Tensor&, const Tensor& g) -> Tensor { return g.replicate(1, x.cols()); });
}

Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) throw ConfigError("slice_cols: out of range");
  return unary(
      a, [start, count](const Tensor& x) -> Tensor { return x.middleCols(start, count); },
      [start, count](const Tensor& x, const Tensor&, const Tensor& g) -> Tensor {
        Tensor full = Tensor::Zero(x.rows(), x.cols());
        full.middleCols(start, count) = g;
        return full;
      });
}

Var concat_cols(Var a, Var b) {
  Tape& t = *a.tape();
  Tensor out = hcat(a.value(), b.value());
  const int ia = a.id(), ib = b.id();
  const Eigen::Index ca = a.cols(), cb = b.cols();
  return t.push(std::move(out), needs(t, a) || needs(t, b), [ia, ib, ca, cb](Tape& tp, const Tape::Node& self) {
    if (tp.node(ia).requires_grad) tp.accumulate(ia, self.grad.leftCols(ca));
    if (tp.node(ib).requires_grad) tp.accumulate(ib, self.grad.rightCols(cb));
  });
}

}  // namespace cmbac::nn
