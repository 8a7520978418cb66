#pragma once

#include "d2r/envsuite/vector_env.hpp"
#include "d2r/rng.hpp"
#include "d2r/sacmt/agent.hpp"

#include <cmath>
#include <numeric>
#include <string>
#include <vector>

namespace d2r::sacmt {

/// Outcome of collecting from every task environment.
struct RolloutResult {
  std::vector<Transition> transitions;
  std::vector<int> faults;  // per task
  std::vector<int> episodes_finished;
  std::vector<int> episodes_succeeded;
};

inline std::vector<int> iota_tasks(std::size_t n) {
  std::vector<int> t(n);
  std::iota(t.begin(), t.end(), 0);
  return t;
}

/// `steps` vectorised steps over all task environments with the exploring
/// behaviour policy. A task whose environment raises loses that step's
/// transition and is reset; the others proceed.
template <class Rng>
RolloutResult collect_rollouts(env::VectorEnv& envs, const Agent& agent, int steps, Rng& rng,
                               bool uniform_actions = false) {
  const auto tasks = iota_tasks(envs.size());
  RolloutResult out;
  out.faults.assign(envs.size(), 0);
  out.episodes_finished.assign(envs.size(), 0);
  out.episodes_succeeded.assign(envs.size(), 0);
  for (int s = 0; s < steps; ++s) {
    const Matrix obs = envs.observations();
    auto b = agent.act(obs, tasks, true, rng, uniform_actions);
    const auto results = envs.step(b.actions);
    for (std::size_t i = 0; i < envs.size(); ++i) {
      const auto& r = results[i];
      if (r.fault) {
        ++out.faults[i];
        log().warn("task {} environment fault: {}", i, *r.fault);
        continue;
      }
      Transition t;
      t.state = obs.row(static_cast<Eigen::Index>(i));
      t.action = b.actions.row(static_cast<Eigen::Index>(i));
      t.reward = r.reward;
      t.next_state = r.next_observation;
      t.done = r.success;  // horizon truncation still bootstraps
      t.task = static_cast<int>(i);
      for (int slot = 0; slot < kSlots; ++slot) t.masks[slot] = b.masks[slot][i];
      out.transitions.push_back(std::move(t));
      if (r.done) {
        ++out.episodes_finished[i];
        out.episodes_succeeded[i] += r.success ? 1 : 0;
      }
    }
  }
  return out;
}

struct EvalResult {
  std::vector<int> episodes;
  std::vector<int> successes;
  std::vector<double> mean_modules;  // effective actor modules per step
  std::vector<double> std_modules;

  double success_rate(std::size_t task) const {
    return episodes[task] ? static_cast<double>(successes[task]) / episodes[task] : 0.0;
  }
  double mean_success() const {
    if (episodes.empty()) return 0.0;
    double s = 0.0;
    for (std::size_t t = 0; t < episodes.size(); ++t) s += success_rate(t);
    return s / static_cast<double>(episodes.size());
  }
};

/// Deterministic evaluation (top-k routing, tanh(mean) actions), all tasks
/// stepped together, `episodes` per task.
template <class Rng>
EvalResult evaluate(const Agent& agent, const std::vector<env::TaskSpec>& suite, int episodes, Rng& rng) {
  EvalResult out;
  const std::size_t n = suite.size();
  out.episodes.assign(n, 0);
  out.successes.assign(n, 0);
  out.mean_modules.assign(n, 0.0);
  out.std_modules.assign(n, 0.0);
  if (episodes <= 0) return out;
  std::vector<env::Environment> envs;
  for (const auto& s : suite) envs.emplace_back(s);
  Matrix obs(static_cast<Eigen::Index>(n), env::kObservationDim);
  for (std::size_t i = 0; i < n; ++i) obs.row(static_cast<Eigen::Index>(i)) = envs[i].reset(rng);
  std::vector<double> sum(n, 0.0), sq(n, 0.0);
  std::vector<long> count(n, 0);
  std::vector<int> active;
  for (std::size_t i = 0; i < n; ++i) active.push_back(static_cast<int>(i));
  while (!active.empty()) {
    Matrix batch(static_cast<Eigen::Index>(active.size()), env::kObservationDim);
    for (std::size_t r = 0; r < active.size(); ++r)
      batch.row(static_cast<Eigen::Index>(r)) = obs.row(active[r]);
    const auto b = agent.act(batch, active, false, rng);
    std::vector<int> still;
    for (std::size_t r = 0; r < active.size(); ++r) {
      const auto task = static_cast<std::size_t>(active[r]);
      const double used = static_cast<double>(routing::effective_modules(b.masks[kActorSlot][r]).size());
      sum[task] += used;
      sq[task] += used * used;
      ++count[task];
      const auto res = envs[task].step(b.actions.row(static_cast<Eigen::Index>(r)));
      if (res.done) {
        ++out.episodes[task];
        out.successes[task] += res.success ? 1 : 0;
        if (out.episodes[task] >= episodes) continue;
        obs.row(static_cast<Eigen::Index>(task)) = envs[task].reset(rng);
      } else {
        obs.row(static_cast<Eigen::Index>(task)) = res.observation;
      }
      still.push_back(static_cast<int>(task));
    }
    active = std::move(still);
  }
  for (std::size_t t = 0; t < n; ++t) {
    if (!count[t]) continue;
    const double m = sum[t] / static_cast<double>(count[t]);
    out.mean_modules[t] = m;
    out.std_modules[t] = std::sqrt(std::max(0.0, sq[t] / static_cast<double>(count[t]) - m * m));
  }
  return out;
}

/// Running means of the per-task train metrics between evaluation points.
struct MetricAccumulator {
  std::vector<double> actor, critic;
  std::vector<int> n;

  explicit MetricAccumulator(int tasks = 0) { reset(tasks); }
  void reset(int tasks) {
    actor.assign(static_cast<std::size_t>(tasks), 0.0);
    critic.assign(static_cast<std::size_t>(tasks), 0.0);
    n.assign(static_cast<std::size_t>(tasks), 0);
  }
  void add(const TrainMetrics& m) {
    if (!m.updated) return;
    for (std::size_t t = 0; t < n.size(); ++t) {
      if (std::isnan(m.actor_loss[t]) || std::isnan(m.critic_loss[t])) continue;
      actor[t] += m.actor_loss[t];
      critic[t] += m.critic_loss[t];
      ++n[t];
    }
  }
  double mean_actor(std::size_t t) const { return n[t] ? actor[t] / n[t] : std::nan(""); }
  double mean_critic(std::size_t t) const { return n[t] ? critic[t] / n[t] : std::nan(""); }
};

/// Sample/train loop state: agent, environments, replay and random streams.
/// One iteration steps every task environment once and then takes one
/// gradient step, so env steps and train steps advance together.
class Trainer {
 public:
  Trainer(std::vector<env::TaskSpec> suite, NetworkConfig net, SacConfig sac, std::uint64_t seed, int env_threads = 1)
      : suite_(std::move(suite)), seed_(seed) {
    if (suite_.empty()) throw std::invalid_argument("trainer: empty task suite");
    Rng init = named_stream(seed, "init");
    const int tasks = static_cast<int>(suite_.size());
    agent_ = Agent(std::move(net), std::move(sac), tasks, env::kObservationDim, env::kActionDim, init);
    std::vector<Rng> env_rngs;
    for (int i = 0; i < tasks; ++i) env_rngs.push_back(named_stream(seed, "env/" + std::to_string(i)));
    envs_ = std::make_unique<env::VectorEnv>(suite_, std::move(env_rngs), env_threads);
    const auto& sc = agent_.sac_config();
    replay_ = std::make_unique<ReplayBuffer>(tasks, std::max<std::size_t>(1, sc.buffer_capacity / suite_.size()),
                                             env::kObservationDim, env::kActionDim, agent_.network_config().modules);
    behaviour_rng_ = named_stream(seed, "routing");
    train_rng_ = named_stream(seed, "train");
    accum_.reset(tasks);
  }

  Agent& agent() { return agent_; }
  const Agent& agent() const { return agent_; }
  const std::vector<env::TaskSpec>& suite() const { return suite_; }
  const ReplayBuffer& replay() const { return *replay_; }
  long env_steps() const { return env_steps_; }
  void set_env_steps(long s) { env_steps_ = s; }
  MetricAccumulator& accumulator() { return accum_; }
  const TrainMetrics& last_metrics() const { return last_; }

  /// One vectorised env step plus one train step once warm-up is over.
  void iterate() {
    const auto& sc = agent_.sac_config();
    const bool warm = env_steps_ < sc.warmup_steps;
    auto r = collect_rollouts(*envs_, agent_, 1, behaviour_rng_, warm);
    for (const auto& t : r.transitions) replay_->add(t);
    env_steps_ += static_cast<long>(suite_.size());
    if (warm) return;
    if (replay_->min_task_size() < 1) {
      log().debug("train step skipped: replay buffer not filled for every task");
      return;
    }
    const auto batch = replay_->sample(static_cast<std::size_t>(sc.batch_per_task), train_rng_);
    last_ = agent_.train_step(batch, train_rng_);
    accum_.add(last_);
  }

  Rng eval_rng(long step) const { return named_stream(seed_, "eval/" + std::to_string(step)); }

 private:
  std::vector<env::TaskSpec> suite_;
  std::uint64_t seed_;
  Agent agent_;
  std::unique_ptr<env::VectorEnv> envs_;
  std::unique_ptr<ReplayBuffer> replay_;
  Rng behaviour_rng_, train_rng_;
  long env_steps_ = 0;
  MetricAccumulator accum_;
  TrainMetrics last_;
};

}  // namespace d2r::sacmt
