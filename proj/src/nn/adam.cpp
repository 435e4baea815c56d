#include "cmbac/nn/adam.hpp"

#include <cmath>

#include "cmbac/common/errors.hpp"

namespace cmbac::nn {

AdamState make_adam(std::span<Parameter* const> params, AdamConfig config) {
  AdamState s;
  s.config = config;
  for (const Parameter* p : params) {
    s.m.push_back(Tensor::Zero(p->value.rows(), p->value.cols()));
    s.v.push_back(Tensor::Zero(p->value.rows(), p->value.cols()));
  }
  return s;
}

void adam_step(AdamState& state, std::span<Parameter* const> params) {
  if (params.size() != state.m.size()) throw ConfigError("adam_step: parameter count mismatch");
  state.step += 1;
  const auto& c = state.config;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    Tensor& m = state.m[i];
    Tensor& v = state.v[i];
    if (p.grad.rows() != m.rows() || p.grad.cols() != m.cols() || p.value.rows() != m.rows() ||
        p.value.cols() != m.cols()) {
      throw ConfigError("adam_step: shape mismatch at parameter " + std::to_string(i));
    }
    m = c.beta1 * m + (1.0 - c.beta1) * p.grad;
    v = c.beta2 * v + (1.0 - c.beta2) * p.grad.cwiseProduct(p.grad);
    p.value.array() -= c.lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + c.eps);
  }
}

void zero_grad(std::span<Parameter* const> params) {
  for (Parameter* p : params) p->zero_grad();
}

void save_adam(BinaryWriter& w, const AdamState& state) {
  w.i64(state.step);
  w.u64(state.m.size());
  for (std::size_t i = 0; i < state.m.size(); ++i) {
    w.tensor(state.m[i]);
    w.tensor(state.v[i]);
  }
}

void load_adam(BinaryReader& r, AdamState& state, std::span<Parameter* const> params) {
  const long step = static_cast<long>(r.i64());
  if (r.u64() != params.size()) throw SerializationError("adam: parameter count mismatch");
  std::vector<Tensor> m(params.size()), v(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    m[i] = r.tensor();
    v[i] = r.tensor();
    const auto& p = params[i]->value;
    if (m[i].rows() != p.rows() || m[i].cols() != p.cols() || v[i].rows() != p.rows() || v[i].cols() != p.cols()) {
      throw SerializationError("adam: moment shape mismatch");
    }
  }
  state.step = step;
  state.m = std::move(m);
  state.v = std::move(v);
}

}  // namespace cmbac::nn
