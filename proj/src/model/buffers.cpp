#include "cmbac/model/buffers.hpp"

#include "cmbac/common/errors.hpp"

namespace cmbac::model {

// ---------------------------------------------------------------- EnvBuffer

EnvBuffer::EnvBuffer(std::size_t capacity, int state_dim, int action_dim)
    : capacity_(capacity), state_dim_(state_dim), action_dim_(action_dim) {
  if (capacity == 0) throw ConfigError("env buffer: capacity must be positive");
  const auto cap = static_cast<Eigen::Index>(capacity);
  s_.resize(cap, state_dim);
  a_.resize(cap, action_dim);
  s2_.resize(cap, state_dim);
  r_.resize(cap);
  d_.resize(cap);
}

void EnvBuffer::add(const Vector& s, const Vector& a, double r, const Vector& s2, bool done) {
  if (s.size() != state_dim_ || s2.size() != state_dim_ || a.size() != action_dim_) {
    throw ConfigError("env buffer: transition shape mismatch");
  }
  const auto row = static_cast<Eigen::Index>(head_);
  s_.row(row) = s.transpose();
  a_.row(row) = a.transpose();
  s2_.row(row) = s2.transpose();
  r_(row) = r;
  d_(row) = done ? 1.0 : 0.0;
  head_ = (head_ + 1) % capacity_;
  if (size_ < capacity_) ++size_;
}

std::size_t EnvBuffer::slot(std::size_t i) const {
  return size_ < capacity_ ? i : (head_ + i) % capacity_;
}

EnvBatch EnvBuffer::gather(const std::vector<std::size_t>& rows) const {
  const auto n = static_cast<Eigen::Index>(rows.size());
  EnvBatch b{Tensor(n, state_dim_), Tensor(n, action_dim_), Vector(n), Tensor(n, state_dim_), Vector(n)};
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto r = static_cast<Eigen::Index>(rows[static_cast<std::size_t>(i)]);
    b.states.row(i) = s_.row(r);
    b.actions.row(i) = a_.row(r);
    b.rewards(i) = r_(r);
    b.next_states.row(i) = s2_.row(r);
    b.dones(i) = d_(r);
  }
  return b;
}

EnvBatch EnvBuffer::sample(std::size_t batch, Rng& rng) const {
  if (size_ == 0) throw UsageError("env buffer: sample from empty buffer");
  std::vector<std::size_t> rows(batch);
  for (auto& r : rows) r = rng.uniform_int(size_);
  return gather(rows);
}

EnvBatch EnvBuffer::all() const {
  std::vector<std::size_t> rows(size_);
  for (std::size_t i = 0; i < size_; ++i) rows[i] = slot(i);
  return gather(rows);
}

Tensor EnvBuffer::sample_states(std::size_t n, Rng& rng) const {
  if (size_ == 0) throw UsageError("env buffer: sample from empty buffer");
  Tensor out(static_cast<Eigen::Index>(n), state_dim_);
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    out.row(i) = s_.row(static_cast<Eigen::Index>(rng.uniform_int(size_)));
  }
  return out;
}

void EnvBuffer::save(nn::BinaryWriter& w) const {
  w.u64(capacity_);
  w.u64(static_cast<std::uint64_t>(state_dim_));
  w.u64(static_cast<std::uint64_t>(action_dim_));
  w.u64(head_);
  w.u64(size_);
  const auto n = static_cast<Eigen::Index>(size_);
  w.tensor(s_.topRows(n));
  w.tensor(a_.topRows(n));
  w.tensor(s2_.topRows(n));
  w.tensor(r_.head(n).transpose());
  w.tensor(d_.head(n).transpose());
}

EnvBuffer EnvBuffer::load(nn::BinaryReader& r) {
  const auto cap = r.u64();
  const auto ds = static_cast<int>(r.u64());
  const auto da = static_cast<int>(r.u64());
  if (cap == 0 || cap > (std::uint64_t{1} << 32) || ds <= 0 || da <= 0) {
    throw SerializationError("env buffer: bad header");
  }
  const auto head = r.u64();
  const auto size = r.u64();
  if (size > cap || head >= cap) throw SerializationError("env buffer: inconsistent payload");
  const Tensor s = r.tensor(), a = r.tensor(), s2 = r.tensor(), rew = r.tensor(), done = r.tensor();
  const auto n = static_cast<Eigen::Index>(size);
  if (s.rows() != n || s.cols() != ds || a.rows() != n || a.cols() != da || s2.rows() != n || s2.cols() != ds ||
      rew.size() != n || done.size() != n) {
    throw SerializationError("env buffer: inconsistent payload");
  }
  EnvBuffer b(cap, ds, da);
  b.head_ = head;
  b.size_ = size;
  b.s_.topRows(n) = s;
  b.a_.topRows(n) = a;
  b.s2_.topRows(n) = s2;
  b.r_.head(n) = rew.transpose();
  b.d_.head(n) = done.transpose();
  return b;
}

// ---------------------------------------------------------------- ModelBuffer

ModelBuffer::ModelBuffer(std::size_t capacity, int state_dim, int action_dim, int heads)
    : capacity_(capacity), state_dim_(state_dim), action_dim_(action_dim), heads_(heads) {
  if (capacity == 0) throw ConfigError("model buffer: capacity must be positive");
  if (heads <= 0) throw ConfigError("model buffer: head count must be positive");
  const auto cap = static_cast<Eigen::Index>(capacity);
  s_.resize(cap, state_dim);
  a_.resize(cap, action_dim);
  s2_.resize(cap, state_dim);
  bs_.resize(cap, static_cast<Eigen::Index>(heads) * state_dim);
  br_.resize(cap, heads);
  r_.resize(cap);
  d_.resize(cap);
}

std::size_t ModelBuffer::slot(std::size_t i) const {
  return size_ < capacity_ ? i : (head_ + i) % capacity_;
}

void ModelBuffer::add(const ModelTransition& t) {
  if (t.branch_next_states.rows() != heads_ || t.branch_rewards.size() != heads_) {
    throw ConfigError("model buffer: transition carries " + std::to_string(t.branch_rewards.size()) +
                      " branches, buffer expects " + std::to_string(heads_));
  }
  Vector r(1), d(1);
  r(0) = t.reward;
  d(0) = t.done ? 1.0 : 0.0;
  add_batch(t.state.transpose(), t.action.transpose(), r, t.next_state.transpose(), d, t.branch_next_states,
            t.branch_rewards.transpose());
}

void ModelBuffer::add_batch(const Tensor& states, const Tensor& actions, const Vector& rewards,
                            const Tensor& next_states, const Vector& dones, const Tensor& branch_next_states,
                            const Tensor& branch_rewards) {
  const Eigen::Index n = states.rows();
  if (states.cols() != state_dim_ || actions.cols() != action_dim_ || actions.rows() != n ||
      rewards.size() != n || next_states.rows() != n || dones.size() != n ||
      branch_next_states.rows() != n * heads_ || branch_next_states.cols() != state_dim_ ||
      branch_rewards.rows() != n || branch_rewards.cols() != heads_) {
    throw ConfigError("model buffer: batch shape mismatch");
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto row = static_cast<Eigen::Index>(head_);
    s_.row(row) = states.row(i);
    a_.row(row) = actions.row(i);
    s2_.row(row) = next_states.row(i);
    r_(row) = rewards(i);
    d_(row) = dones(i);
    for (int j = 0; j < heads_; ++j) {
      bs_.row(row).segment(static_cast<Eigen::Index>(j) * state_dim_, state_dim_) =
          branch_next_states.row(i * heads_ + j);
    }
    br_.row(row) = branch_rewards.row(i);
    head_ = (head_ + 1) % capacity_;
    if (size_ < capacity_) ++size_;
  }
}

ModelBatch ModelBuffer::sample(std::size_t batch, Rng& rng) const {
  if (size_ == 0) throw UsageError("model buffer: sample from empty buffer");
  const auto n = static_cast<Eigen::Index>(batch);
  ModelBatch b;
  b.heads = heads_;
  b.states.resize(n, state_dim_);
  b.actions.resize(n, action_dim_);
  b.rewards.resize(n);
  b.next_states.resize(n, state_dim_);
  b.dones.resize(n);
  b.branch_next_states.resize(n * heads_, state_dim_);
  b.branch_rewards.resize(n, heads_);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto row = static_cast<Eigen::Index>(rng.uniform_int(size_));
    b.states.row(i) = s_.row(row);
    b.actions.row(i) = a_.row(row);
    b.rewards(i) = r_(row);
    b.next_states.row(i) = s2_.row(row);
    b.dones(i) = d_(row);
    for (int j = 0; j < heads_; ++j) {
      b.branch_next_states.row(i * heads_ + j) =
          bs_.row(row).segment(static_cast<Eigen::Index>(j) * state_dim_, state_dim_);
    }
    b.branch_rewards.row(i) = br_.row(row);
  }
  return b;
}

ModelTransition ModelBuffer::at(std::size_t i) const {
  if (i >= size_) throw UsageError("model buffer: index out of range");
  const auto row = static_cast<Eigen::Index>(slot(i));
  ModelTransition t;
  t.state = s_.row(row).transpose();
  t.action = a_.row(row).transpose();
  t.reward = r_(row);
  t.next_state = s2_.row(row).transpose();
  t.done = d_(row) != 0.0;
  t.branch_next_states.resize(heads_, state_dim_);
  for (int j = 0; j < heads_; ++j) {
    t.branch_next_states.row(j) = bs_.row(row).segment(static_cast<Eigen::Index>(j) * state_dim_, state_dim_);
  }
  t.branch_rewards = br_.row(row).transpose();
  return t;
}

void ModelBuffer::set_capacity(std::size_t capacity) {
  if (capacity == capacity_) return;
  ModelBuffer resized(capacity, state_dim_, action_dim_, heads_);
  const std::size_t keep = std::min(size_, capacity);
  for (std::size_t i = size_ - keep; i < size_; ++i) resized.add(at(i));
  *this = std::move(resized);
}

void ModelBuffer::save(nn::BinaryWriter& w) const {
  w.u64(capacity_);
  w.u64(static_cast<std::uint64_t>(state_dim_));
  w.u64(static_cast<std::uint64_t>(action_dim_));
  w.u64(static_cast<std::uint64_t>(heads_));
  w.u64(head_);
  w.u64(size_);
  const auto n = static_cast<Eigen::Index>(size_);
  w.tensor(s_.topRows(n));
  w.tensor(a_.topRows(n));
  w.tensor(s2_.topRows(n));
  w.tensor(bs_.topRows(n));
  w.tensor(br_.topRows(n));
  w.tensor(r_.head(n).transpose());
  w.tensor(d_.head(n).transpose());
}

ModelBuffer ModelBuffer::load(nn::BinaryReader& r) {
  const auto cap = r.u64();
  const auto ds = static_cast<int>(r.u64());
  const auto da = static_cast<int>(r.u64());
  const auto k = static_cast<int>(r.u64());
  if (cap == 0 || cap > (std::uint64_t{1} << 32) || ds <= 0 || da <= 0 || k <= 0) {
    throw SerializationError("model buffer: bad header");
  }
  const auto head = r.u64();
  const auto size = r.u64();
  if (size > cap || head >= cap) throw SerializationError("model buffer: inconsistent payload");
  const Tensor s = r.tensor(), a = r.tensor(), s2 = r.tensor(), bs = r.tensor(), br = r.tensor(),
               rew = r.tensor(), done = r.tensor();
  const auto n = static_cast<Eigen::Index>(size);
  if (s.rows() != n || s.cols() != ds || a.rows() != n || a.cols() != da || s2.rows() != n || s2.cols() != ds ||
      bs.rows() != n || bs.cols() != static_cast<Eigen::Index>(k) * ds || br.rows() != n || br.cols() != k ||
      rew.size() != n || done.size() != n) {
    throw SerializationError("model buffer: inconsistent payload");
  }
  ModelBuffer b(cap, ds, da, k);
  b.head_ = head;
  b.size_ = size;
  b.s_.topRows(n) = s;
  b.a_.topRows(n) = a;
  b.s2_.topRows(n) = s2;
  b.bs_.topRows(n) = bs;
  b.br_.topRows(n) = br;
  b.r_.head(n) = rew.transpose();
  b.d_.head(n) = done.transpose();
  return b;
}

}  // namespace cmbac::model
