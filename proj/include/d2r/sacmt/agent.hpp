#pragma once

#include "d2r/diffcore/adam.hpp"
#include "d2r/log.hpp"
#include "d2r/modnet/forward.hpp"
#include "d2r/modnet/heads.hpp"
#include "d2r/sacmt/losses.hpp"
#include "d2r/sacmt/replay.hpp"
#include "d2r/sacmt/temperatures.hpp"

#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace d2r::sacmt {

using modnet::Binder;
using modnet::Blocking;
using modnet::HeadKind;
using modnet::ModulePolicy;
using modnet::NetworkConfig;

/// How stored behaviour routing is used when training.
///  - kRsg: stored paths, residual stop-gradient on unsuitable sources.
///  - kSgOnly: stored paths, plain stop-gradient on unsuitable sources.
///  - kTargetRouting: paths re-sampled from the current routing, no blocking.
///  - kOff: stored paths, no blocking.
enum class ResRoutingMode { kRsg, kSgOnly, kTargetRouting, kOff };

inline const char* to_string(ResRoutingMode m) {
  switch (m) {
    case ResRoutingMode::kRsg: return "rsg";
    case ResRoutingMode::kSgOnly: return "sg-only";
    case ResRoutingMode::kTargetRouting: return "target-routing";
    case ResRoutingMode::kOff: return "off";
  }
  return "?";
}

inline ResRoutingMode resrouting_mode_from_string(const std::string& s) {
  if (s == "rsg") return ResRoutingMode::kRsg;
  if (s == "sg-only") return ResRoutingMode::kSgOnly;
  if (s == "target-routing") return ResRoutingMode::kTargetRouting;
  if (s == "off") return ResRoutingMode::kOff;
  throw std::invalid_argument("unknown resrouting mode '" + s + "' (expected rsg|sg-only|target-routing|off)");
}

inline Blocking blocking_for(ResRoutingMode m) {
  switch (m) {
    case ResRoutingMode::kRsg: return Blocking::kResidual;
    case ResRoutingMode::kSgOnly: return Blocking::kFull;
    default: return Blocking::kNone;
  }
}

struct SacConfig {
  double actor_lr = 3e-4;
  double critic_lr = 3e-4;
  double alpha_lr = 3e-4;
  double gamma = 0.99;
  double reward_scale = 0.1;
  double polyak = 0.995;
  double init_alpha = 1.0;
  /// Defaults to -(action dimension).
  std::optional<double> target_entropy;
  int batch_per_task = 32;
  std::size_t buffer_capacity = 100000;
  /// Env steps (summed over tasks) taken with uniform random actions first.
  long warmup_steps = 4000;
  bool route_balancing = true;
  bool loss_weighting = true;
  /// Apply the route-balancing temperature to critic path sampling as well.
  bool balance_critics = true;
  double maskout_threshold = kDefaultMaskoutThreshold;
  ResRoutingMode resrouting = ResRoutingMode::kRsg;

  void validate() const {
    auto positive = [](double v, const char* key) {
      if (!(v > 0.0)) throw std::invalid_argument(std::string(key) + " must be > 0");
    };
    if (actor_lr < 0 || critic_lr < 0 || alpha_lr < 0) throw std::invalid_argument("sac learning rates must be >= 0");
    if (gamma < 0 || gamma > 1) throw std::invalid_argument("sac.gamma must be in [0, 1]");
    if (polyak < 0 || polyak > 1) throw std::invalid_argument("sac.polyak must be in [0, 1]");
    positive(reward_scale, "sac.reward_scale");
    positive(init_alpha, "sac.init_alpha");
    positive(maskout_threshold, "sac.maskout_threshold");
    if (batch_per_task < 1) throw std::invalid_argument("sac.batch_per_task must be >= 1");
    if (buffer_capacity < 1) throw std::invalid_argument("sac.buffer_capacity must be >= 1");
    if (warmup_steps < 0) throw std::invalid_argument("sac.warmup_steps must be >= 0");
  }

  bool operator==(const SacConfig&) const = default;
};

/// Actions and the behaviour routing that produced them.
struct BehaviourStep {
  Matrix actions;
  std::vector<RoutingMask> masks[kSlots];  // critic slots empty when not exploring
};

struct TrainMetrics {
  bool updated = false;
  bool critic_skipped = false;
  bool actor_skipped = false;
  std::vector<double> critic_loss;  // per task
  std::vector<double> actor_loss;   // per task
  std::vector<double> alpha_loss;   // per task
  TaskTemperatures temperatures;
};

/// Actor, twin critics with Polyak targets, and per-task SAC temperatures.
class Agent {
 public:
  Agent() = default;

  template <class InitRng>
  Agent(NetworkConfig net, SacConfig sac, int tasks, int obs_dim, int action_dim, InitRng& init)
      : net_(std::move(net)), sac_(std::move(sac)), tasks_(tasks), obs_dim_(obs_dim), action_dim_(action_dim) {
    sac_.validate();
    actor_ = ModulePolicy(net_, HeadKind::kActor, obs_dim, 2 * action_dim, tasks, init);
    q1_ = ModulePolicy(net_, HeadKind::kCritic, obs_dim + action_dim, 1, tasks, init);
    q2_ = ModulePolicy(net_, HeadKind::kCritic, obs_dim + action_dim, 1, tasks, init);
    q1_target_ = q1_;
    q2_target_ = q2_;
    log_alpha_.add("log_alpha", Matrix::Constant(tasks, 1, std::log(sac_.init_alpha)));
    reset_optimizers();
  }

  const NetworkConfig& network_config() const { return net_; }
  const SacConfig& sac_config() const { return sac_; }
  SacConfig& sac_config() { return sac_; }
  int tasks() const { return tasks_; }
  int obs_dim() const { return obs_dim_; }
  int action_dim() const { return action_dim_; }
  double target_entropy() const { return sac_.target_entropy.value_or(-static_cast<double>(action_dim_)); }

  ModulePolicy& actor() { return actor_; }
  const ModulePolicy& actor() const { return actor_; }
  ModulePolicy& q1() { return q1_; }
  ModulePolicy& q2() { return q2_; }
  ModulePolicy& q1_target() { return q1_target_; }
  ModulePolicy& q2_target() { return q2_target_; }
  const ModulePolicy& q1() const { return q1_; }
  const ModulePolicy& q2() const { return q2_; }
  const ModulePolicy& q1_target() const { return q1_target_; }
  const ModulePolicy& q2_target() const { return q2_target_; }
  ad::ParameterStore& log_alpha() { return log_alpha_; }
  const ad::ParameterStore& log_alpha() const { return log_alpha_; }

  ad::Adam& actor_optimizer() { return actor_opt_; }
  ad::Adam& q1_optimizer() { return q1_opt_; }
  ad::Adam& q2_optimizer() { return q2_opt_; }
  ad::Adam& alpha_optimizer() { return alpha_opt_; }

  void reset_optimizers() {
    actor_opt_ = ad::Adam(actor_.parameters(), {sac_.actor_lr});
    q1_opt_ = ad::Adam(q1_.parameters(), {sac_.critic_lr});
    q2_opt_ = ad::Adam(q2_.parameters(), {sac_.critic_lr});
    alpha_opt_ = ad::Adam(log_alpha_, {sac_.alpha_lr});
  }

  std::vector<double> log_alphas() const {
    const Matrix& la = log_alpha_.value(0);
    return std::vector<double>(la.data(), la.data() + la.size());
  }

  TaskTemperatures temperatures() const {
    const auto la = log_alphas();
    return TaskTemperatures::from_log_alpha(la, sac_.route_balancing, sac_.loss_weighting);
  }

  /// Per-row sampling temperatures for one network.
  std::vector<double> row_taus(std::span<const int> tasks, const TaskTemperatures& temps, bool critic) const {
    std::vector<double> out(tasks.size(), 1.0);
    if (critic && !sac_.balance_critics) return out;
    for (std::size_t r = 0; r < tasks.size(); ++r) out[r] = temps.tau[static_cast<std::size_t>(tasks[r])];
    return out;
  }

  /// Behaviour forward. When exploring, paths are sampled (route-balanced)
  /// and the action is drawn from the squashed Gaussian; critic paths at the
  /// taken action are sampled too, for storage. Otherwise routing is top-k
  /// and the action is tanh(mean).
  template <class Rng>
  BehaviourStep act(const Matrix& obs, std::span<const int> tasks, bool explore, Rng& rng,
                    bool uniform_actions = false) const {
    const auto temps = temperatures();
    BehaviourStep out;
    {
      Tape t;
      Binder b(t, actor_, false);
      const auto pass = modnet::route(b, t.constant(obs), tasks);
      out.masks[kActorSlot] = choose(t, pass, explore, row_taus(tasks, temps, false), rng);
      const auto comp = modnet::compose(b, pass, out.masks[kActorSlot]);
      const auto head = modnet::gaussian_head(t, comp.head, action_dim_);
      if (!explore) {
        out.actions = t.value(modnet::deterministic_action(t, head));
      } else {
        const auto sample = modnet::sample_action(t, head, normal_noise(obs.rows(), rng));
        out.actions = t.value(sample.action);
      }
    }
    if (uniform_actions) {
      std::uniform_real_distribution<double> u(-1.0, 1.0);
      for (Eigen::Index i = 0; i < out.actions.size(); ++i) out.actions.data()[i] = u(rng);
    }
    if (explore) {
      Matrix sa(obs.rows(), obs_dim_ + action_dim_);
      sa << obs, out.actions;
      const auto taus = row_taus(tasks, temps, true);
      out.masks[kQ1Slot] = route_only(q1_, sa, tasks, true, taus, rng);
      out.masks[kQ2Slot] = route_only(q2_, sa, tasks, true, taus, rng);
    }
    return out;
  }

  /// One critic, actor and temperature update on a stratified batch,
  /// followed by the target Polyak step.
  template <class Rng>
  TrainMetrics train_step(const Batch& batch, Rng& rng) {
    TrainMetrics m;
    m.temperatures = temperatures();
    const auto& temps = m.temperatures;
    const std::span<const int> tasks = batch.tasks;
    const Matrix alpha_rows = per_row(tasks, temps.alpha);
    const auto actor_taus = row_taus(tasks, temps, false);
    const auto critic_taus = row_taus(tasks, temps, true);
    const Blocking blocking = blocking_for(sac_.resrouting);
    const bool fresh = sac_.resrouting == ResRoutingMode::kTargetRouting;

    // Soft Bellman targets: next action from the current actor and all
    // target-critic paths freshly sampled.
    Matrix target;
    {
      Tape t;
      Binder a(t, actor_, false);
      const auto pass = modnet::route(a, t.constant(batch.next_states), tasks);
      const auto masks = choose(t, pass, true, actor_taus, rng);
      const auto comp = modnet::compose(a, pass, masks);
      const auto sample = modnet::sample_action(t, modnet::gaussian_head(t, comp.head, action_dim_),
                                                normal_noise(batch.size(), rng));
      Matrix sa(batch.size(), obs_dim_ + action_dim_);
      sa << batch.next_states, t.value(sample.action);
      const Matrix q1n = critic_values(q1_target_, sa, tasks, critic_taus, rng);
      const Matrix q2n = critic_values(q2_target_, sa, tasks, critic_taus, rng);
      target = soft_bellman_target(sac_.reward_scale * batch.rewards, batch.dones, sac_.gamma, q1n.cwiseMin(q2n),
                                   alpha_rows, t.value(sample.log_prob));
    }

    // Critics.
    {
      Tape t;
      Binder b1(t, q1_), b2(t, q2_);
      const NodeId s = t.constant(batch.states);
      const NodeId a = t.constant(batch.actions);
      const auto q1m = fresh ? resample(q1_, batch, critic_taus, rng) : batch.masks[kQ1Slot];
      const auto q2m = fresh ? resample(q2_, batch, critic_taus, rng) : batch.masks[kQ2Slot];
      const NodeId q1 = modnet::critic_forward(b1, s, a, tasks, q1m, blocking).head;
      const NodeId q2 = modnet::critic_forward(b2, s, a, tasks, q2m, blocking).head;
      const NodeId rows = critic_rows(t, q1, q2, target);
      m.critic_loss = per_task_means(t.value(rows), tasks, tasks_);
      const auto include = loss_maskout(m.critic_loss, sac_.maskout_threshold);
      if (!any_included(include)) {
        m.critic_skipped = true;
        log().warn("critic update skipped: every task loss exceeds {}", sac_.maskout_threshold);
      } else {
        const auto grads = t.backward(t.weighted_sum(rows, task_row_weights(tasks, temps.weight, include)));
        q1_opt_.step(q1_.parameters(), grads);
        q2_opt_.step(q2_.parameters(), grads);
      }
    }

    // Actor, on the stored behaviour paths.
    Matrix log_prob;
    {
      Tape t;
      Binder pa(t, actor_);
      const NodeId s = t.constant(batch.states);
      modnet::Composition comp;
      if (fresh) {
        const auto pass = modnet::route(pa, s, tasks);
        const auto masks = choose(t, pass, true, actor_taus, rng);
        comp = modnet::compose(pa, pass, masks, {blocking, true});
      } else {
        comp = modnet::forward_resrouting(pa, s, tasks, batch.masks[kActorSlot], blocking);
      }
      const auto sample = modnet::sample_action(t, modnet::gaussian_head(t, comp.head, action_dim_),
                                                normal_noise(batch.size(), rng));
      log_prob = t.value(sample.log_prob);
      Binder c1(t, q1_, false), c2(t, q2_, false);
      const auto q1m = fresh ? resample_at(q1_, batch.states, t.value(sample.action), tasks, critic_taus, rng)
                             : batch.masks[kQ1Slot];
      const auto q2m = fresh ? resample_at(q2_, batch.states, t.value(sample.action), tasks, critic_taus, rng)
                             : batch.masks[kQ2Slot];
      const NodeId q1 = modnet::critic_forward(c1, s, sample.action, tasks, q1m).head;
      const NodeId q2 = modnet::critic_forward(c2, s, sample.action, tasks, q2m).head;
      const NodeId rows = actor_rows(t, sample.log_prob, t.min(q1, q2), alpha_rows);
      m.actor_loss = per_task_means(t.value(rows), tasks, tasks_);
      const auto include = loss_maskout(m.actor_loss, sac_.maskout_threshold);
      if (!any_included(include)) {
        m.actor_skipped = true;
        log().warn("actor update skipped: every task loss exceeds {}", sac_.maskout_threshold);
      } else {
        const auto grads = t.backward(t.weighted_sum(rows, task_row_weights(tasks, temps.weight, include)));
        actor_opt_.step(actor_.parameters(), grads);
      }
    }

    // Temperatures: only tasks present in the batch move.
    {
      Tape t;
      const NodeId la = t.gather_rows(t.parameter(log_alpha_, 0), std::vector<int>(tasks.begin(), tasks.end()));
      const NodeId loss = alpha_objective(t, la, log_prob, target_entropy());
      const Matrix rows = (-(alpha_rows.array() * (log_prob.array() + target_entropy()))).matrix();
      m.alpha_loss = per_task_means(rows, tasks, tasks_);
      std::vector<std::uint8_t> present(static_cast<std::size_t>(tasks_), 0);
      for (int task : tasks) present[static_cast<std::size_t>(task)] = 1;
      alpha_opt_.step(log_alpha_, t.backward(loss).for_store(log_alpha_), present);
    }

    ad::polyak_update(q1_target_.parameters(), q1_.parameters(), sac_.polyak);
    ad::polyak_update(q2_target_.parameters(), q2_.parameters(), sac_.polyak);
    m.updated = true;
    return m;
  }

 private:
  template <class Rng>
  std::vector<RoutingMask> choose(const Tape& t, const modnet::RoutingPass& pass, bool explore,
                                  std::span<const double> taus, Rng& rng) const {
    return routing::choose_masks(net_.function, net_.k, modnet::logit_values(t, pass), explore, taus, rng);
  }

  template <class Rng>
  std::vector<RoutingMask> route_only(const ModulePolicy& net, const Matrix& input, std::span<const int> tasks,
                                      bool explore, std::span<const double> taus, Rng& rng) const {
    Tape t;
    Binder b(t, net, false);
    const auto pass = modnet::route(b, t.constant(input), tasks);
    return choose(t, pass, explore, taus, rng);
  }

  template <class Rng>
  std::vector<RoutingMask> resample(const ModulePolicy& net, const Batch& batch, std::span<const double> taus,
                                    Rng& rng) const {
    return resample_at(net, batch.states, batch.actions, batch.tasks, taus, rng);
  }

  template <class Rng>
  std::vector<RoutingMask> resample_at(const ModulePolicy& net, const Matrix& states, const Matrix& actions,
                                       std::span<const int> tasks, std::span<const double> taus, Rng& rng) const {
    Matrix sa(states.rows(), obs_dim_ + action_dim_);
    sa << states, actions;
    return route_only(net, sa, tasks, true, taus, rng);
  }

  /// Q values with freshly sampled paths, no gradient.
  template <class Rng>
  Matrix critic_values(const ModulePolicy& net, const Matrix& sa, std::span<const int> tasks,
                       std::span<const double> taus, Rng& rng) const {
    Tape t;
    Binder b(t, net, false);
    const auto pass = modnet::route(b, t.constant(sa), tasks);
    const auto masks = choose(t, pass, true, taus, rng);
    return t.value(modnet::compose(b, pass, masks).head);
  }

  template <class Rng>
  Matrix normal_noise(Eigen::Index rows, Rng& rng) const {
    std::normal_distribution<double> n(0.0, 1.0);
    Matrix out(rows, action_dim_);
    for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] = n(rng);
    return out;
  }

  NetworkConfig net_;
  SacConfig sac_;
  int tasks_ = 0;
  int obs_dim_ = 0;
  int action_dim_ = 0;
  ModulePolicy actor_, q1_, q2_, q1_target_, q2_target_;
  ad::ParameterStore log_alpha_;
  ad::Adam actor_opt_, q1_opt_, q2_opt_, alpha_opt_;
};

}  // namespace d2r::sacmt
