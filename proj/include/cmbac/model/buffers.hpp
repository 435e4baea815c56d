#pragma once

#include <cstddef>
#include <vector>

#include "cmbac/common/rng.hpp"
#include "cmbac/nn/serialize.hpp"
#include "cmbac/nn/tensor.hpp"

namespace cmbac::model {

using nn::Tensor;
using nn::Vector;

struct EnvBatch {
  Tensor states;
  Tensor actions;
  Vector rewards;
  Tensor next_states;
  Vector dones;
};

/// D_env: FIFO ring buffer of real transitions, sampled uniformly.
class EnvBuffer {
 public:
  EnvBuffer(std::size_t capacity, int state_dim, int action_dim);

  void add(const Vector& s, const Vector& a, double r, const Vector& s2, bool done);

  std::size_t size() const { return size_; }
  std::size_t capacity() const { return capacity_; }
  int state_dim() const { return state_dim_; }
  int action_dim() const { return action_dim_; }

  EnvBatch sample(std::size_t batch, Rng& rng) const;
  // Every stored transition, oldest first.
  EnvBatch all() const;
  Tensor sample_states(std::size_t n, Rng& rng) const;

  void save(nn::BinaryWriter& w) const;
  static EnvBuffer load(nn::BinaryReader& r);

 private:
  std::size_t slot(std::size_t i) const;  // i-th oldest -> storage row
  EnvBatch gather(const std::vector<std::size_t>& rows) const;

  std::size_t capacity_;
  int state_dim_;
  int action_dim_;
  std::size_t head_ = 0;  // next write position
  std::size_t size_ = 0;
  Tensor s_, a_, s2_;
  Vector r_, d_;
};

/// One imagined transition plus the next state and reward produced by every
/// model combination at the same (s, a).
struct ModelTransition {
  Vector state;
  Vector action;
  double reward = 0.0;
  Vector next_state;
  bool done = false;
  Tensor branch_next_states;  // K x state_dim, row j from combination j
  Vector branch_rewards;      // K
};

struct ModelBatch {
  Tensor states;              // B x ds
  Tensor actions;             // B x da
  Vector rewards;             // B
  Tensor next_states;         // B x ds
  Vector dones;               // B
  Tensor branch_next_states;  // (B*K) x ds, row i*K + j
  Tensor branch_rewards;      // B x K
  int heads = 1;

  std::size_t size() const { return static_cast<std::size_t>(states.rows()); }
};

/// D_model: FIFO ring buffer of ModelTransition with a fixed branch count K.
class ModelBuffer {
 public:
  ModelBuffer(std::size_t capacity, int state_dim, int action_dim, int heads);

  void add(const ModelTransition& t);
  // Appends row-wise; branch_next_states is (n*K) x ds in row i*K + j order.
  void add_batch(const Tensor& states, const Tensor& actions, const Vector& rewards, const Tensor& next_states,
                 const Vector& dones, const Tensor& branch_next_states, const Tensor& branch_rewards);

  ModelBatch sample(std::size_t batch, Rng& rng) const;
  ModelTransition at(std::size_t i) const;  // i-th oldest

  // Keeps the newest min(size, capacity) transitions.
  void set_capacity(std::size_t capacity);

  std::size_t size() const { return size_; }
  std::size_t capacity() const { return capacity_; }
  int heads() const { return heads_; }
  int state_dim() const { return state_dim_; }
  int action_dim() const { return action_dim_; }

  void save(nn::BinaryWriter& w) const;
  static ModelBuffer load(nn::BinaryReader& r);

 private:
  std::size_t slot(std::size_t i) const;

  std::size_t capacity_;
  int state_dim_;
  int action_dim_;
  int heads_;
  std::size_t head_ = 0;
  std::size_t size_ = 0;
  Tensor s_, a_, s2_, bs_, br_;
  Vector r_, d_;
};

}  // namespace cmbac::model
