#pragma once

#include "d2r/routing/mask.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <mutex>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace d2r::sacmt {

using ad::Matrix;
using routing::RoutingMask;

/// Which network a stored routing mask belongs to.
enum NetworkSlot { kActorSlot = 0, kQ1Slot = 1, kQ2Slot = 2, kSlots = 3 };

struct Transition {
  Eigen::RowVectorXd state;
  Eigen::RowVectorXd action;
  double reward = 0.0;
  Eigen::RowVectorXd next_state;
  bool done = false;
  int task = 0;
  /// Behaviour routing at the state, one mask per network.
  RoutingMask masks[kSlots];

  bool operator==(const Transition& o) const {
    return state == o.state && action == o.action && reward == o.reward && next_state == o.next_state &&
           done == o.done && task == o.task && masks[0] == o.masks[0] && masks[1] == o.masks[1] &&
           masks[2] == o.masks[2];
  }
};

/// Stratified mini-batch, rows grouped by task.
struct Batch {
  Matrix states;
  Matrix actions;
  Matrix rewards;  // (B x 1)
  Matrix next_states;
  Matrix dones;  // (B x 1), 1 for terminal
  std::vector<int> tasks;
  std::vector<RoutingMask> masks[kSlots];

  Eigen::Index size() const { return states.rows(); }
};

/// One ring buffer per task. Appends are serialised internally; sampling
/// draws the same number of transitions from every task.
class ReplayBuffer {
 public:
  ReplayBuffer(int tasks, std::size_t capacity_per_task, int state_dim, int action_dim, int modules)
      : state_dim_(state_dim), action_dim_(action_dim), modules_(modules), capacity_(capacity_per_task) {
    if (tasks < 1 || capacity_per_task < 1) throw std::invalid_argument("ReplayBuffer: tasks and capacity must be positive");
    rings_.resize(static_cast<std::size_t>(tasks));
    for (auto& r : rings_) {
      r.states = Matrix(static_cast<Eigen::Index>(capacity_), state_dim);
      r.next_states = Matrix(static_cast<Eigen::Index>(capacity_), state_dim);
      r.actions = Matrix(static_cast<Eigen::Index>(capacity_), action_dim);
      r.rewards.assign(capacity_, 0.0);
      r.dones.assign(capacity_, 0);
      r.mask_bits.assign(capacity_ * kSlots * static_cast<std::size_t>(modules), 0u);
    }
  }

  int tasks() const { return static_cast<int>(rings_.size()); }
  std::size_t capacity_per_task() const { return capacity_; }

  std::size_t size(int task) const {
    std::lock_guard lock(mutex_);
    return ring(task).size;
  }
  std::size_t size() const {
    std::lock_guard lock(mutex_);
    std::size_t s = 0;
    for (const auto& r : rings_) s += r.size;
    return s;
  }
  std::size_t min_task_size() const {
    std::lock_guard lock(mutex_);
    std::size_t s = capacity_;
    for (const auto& r : rings_) s = std::min(s, r.size);
    return s;
  }

  void add(const Transition& t) {
    if (t.state.size() != state_dim_ || t.next_state.size() != state_dim_ || t.action.size() != action_dim_)
      throw std::invalid_argument("ReplayBuffer::add: transition dimensions do not match the buffer");
    for (const auto& m : t.masks)
      if (m.modules() != modules_) throw std::invalid_argument("ReplayBuffer::add: routing mask has wrong module count");
    std::lock_guard lock(mutex_);
    auto& r = ring(t.task);
    const std::size_t slot = r.next;
    const auto row = static_cast<Eigen::Index>(slot);
    r.states.row(row) = t.state;
    r.actions.row(row) = t.action;
    r.next_states.row(row) = t.next_state;
    r.rewards[slot] = t.reward;
    r.dones[slot] = t.done ? 1 : 0;
    for (int s = 0; s < kSlots; ++s)
      for (int i = 1; i < modules_; ++i) r.mask_bits[bit_index(slot, s, i)] = t.masks[s].bits(i);
    r.next = (r.next + 1) % capacity_;
    r.size = std::min(r.size + 1, capacity_);
  }

  /// Transition `index` of a task in insertion order among those retained
  /// (0 = oldest).
  Transition at(int task, std::size_t index) const {
    std::lock_guard lock(mutex_);
    const auto& r = ring(task);
    if (index >= r.size) throw std::out_of_range("ReplayBuffer::at: index beyond stored transitions");
    const std::size_t oldest = r.size < capacity_ ? 0 : r.next;
    return load(r, task, (oldest + index) % capacity_);
  }

  /// `per_task` transitions drawn uniformly with replacement from each task.
  template <class Rng>
  Batch sample(std::size_t per_task, Rng& rng) const {
    std::lock_guard lock(mutex_);
    for (std::size_t t = 0; t < rings_.size(); ++t)
      if (rings_[t].size == 0) throw std::logic_error("ReplayBuffer::sample: task " + std::to_string(t) + " has no transitions");
    const auto rows = static_cast<Eigen::Index>(per_task * rings_.size());
    Batch b;
    b.states = Matrix(rows, state_dim_);
    b.next_states = Matrix(rows, state_dim_);
    b.actions = Matrix(rows, action_dim_);
    b.rewards = Matrix(rows, 1);
    b.dones = Matrix(rows, 1);
    b.tasks.reserve(static_cast<std::size_t>(rows));
    for (auto& m : b.masks) m.reserve(static_cast<std::size_t>(rows));
    Eigen::Index row = 0;
    for (std::size_t t = 0; t < rings_.size(); ++t) {
      const auto& r = rings_[t];
      std::uniform_int_distribution<std::size_t> pick(0, r.size - 1);
      for (std::size_t k = 0; k < per_task; ++k, ++row) {
        const std::size_t slot = pick(rng);
        const auto src = static_cast<Eigen::Index>(slot);
        b.states.row(row) = r.states.row(src);
        b.actions.row(row) = r.actions.row(src);
        b.next_states.row(row) = r.next_states.row(src);
        b.rewards(row, 0) = r.rewards[slot];
        b.dones(row, 0) = r.dones[slot];
        b.tasks.push_back(static_cast<int>(t));
        for (int s = 0; s < kSlots; ++s) b.masks[s].push_back(load_mask(r, slot, s));
      }
    }
    return b;
  }

 private:
  struct Ring {
    Matrix states, actions, next_states;
    std::vector<double> rewards;
    std::vector<std::uint8_t> dones;
    std::vector<std::uint32_t> mask_bits;
    std::size_t next = 0;
    std::size_t size = 0;
  };

  const Ring& ring(int task) const {
    if (task < 0 || task >= static_cast<int>(rings_.size()))
      throw std::out_of_range("ReplayBuffer: task id " + std::to_string(task) + " out of range");
    return rings_[static_cast<std::size_t>(task)];
  }
  Ring& ring(int task) { return const_cast<Ring&>(std::as_const(*this).ring(task)); }

  std::size_t bit_index(std::size_t slot, int net, int module) const {
    return (slot * kSlots + static_cast<std::size_t>(net)) * static_cast<std::size_t>(modules_) +
           static_cast<std::size_t>(module);
  }

  RoutingMask load_mask(const Ring& r, std::size_t slot, int net) const {
    RoutingMask m(modules_);
    for (int i = 1; i < modules_; ++i) m.set_bits(i, r.mask_bits[bit_index(slot, net, i)]);
    return m;
  }

  Transition load(const Ring& r, int task, std::size_t slot) const {
    Transition t;
    const auto row = static_cast<Eigen::Index>(slot);
    t.state = r.states.row(row);
    t.action = r.actions.row(row);
    t.reward = r.rewards[slot];
    t.next_state = r.next_states.row(row);
    t.done = r.dones[slot] != 0;
    t.task = task;
    for (int s = 0; s < kSlots; ++s) t.masks[s] = load_mask(r, slot, s);
    return t;
  }

  int state_dim_;
  int action_dim_;
  int modules_;
  std::size_t capacity_;
  std::vector<Ring> rings_;
  mutable std::mutex mutex_;
};

}  // namespace d2r::sacmt
