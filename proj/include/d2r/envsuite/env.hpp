#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace d2r::env {

using Vec2 = Eigen::Vector2d;
using Observation = Eigen::RowVectorXd;

inline constexpr int kObservationDim = 7;  // agent(2), object-or-zeros(2), latch(1), goal(2)
inline constexpr int kActionDim = 2;
inline constexpr double kDt = 0.05;
inline constexpr double kContactRadius = 0.1;
inline constexpr double kLatchRadius = 0.05;
inline constexpr double kSuccessRadius = 0.05;
inline constexpr double kSuccessBonus = 1.0;
inline constexpr double kStagePenalty = 1.0;
inline constexpr int kDefaultHorizon = 200;

enum class TaskKind { kReach, kPush, kTwoStageFetch, kToggle };
enum class GoalRule { kFixed, kRandom };

inline const char* to_string(TaskKind k) {
  switch (k) {
    case TaskKind::kReach: return "reach";
    case TaskKind::kPush: return "push";
    case TaskKind::kTwoStageFetch: return "two-stage-fetch";
    case TaskKind::kToggle: return "toggle";
  }
  return "?";
}

inline TaskKind task_kind_from_string(const std::string& s) {
  if (s == "reach") return TaskKind::kReach;
  if (s == "push") return TaskKind::kPush;
  if (s == "two-stage-fetch") return TaskKind::kTwoStageFetch;
  if (s == "toggle") return TaskKind::kToggle;
  throw std::invalid_argument("unknown task kind '" + s + "' (expected reach|push|two-stage-fetch|toggle)");
}

inline const char* to_string(GoalRule g) { return g == GoalRule::kFixed ? "fixed" : "random"; }

inline GoalRule goal_rule_from_string(const std::string& s) {
  if (s == "fixed") return GoalRule::kFixed;
  if (s == "random") return GoalRule::kRandom;
  throw std::invalid_argument("unknown goal rule '" + s + "' (expected fixed|random)");
}

struct TaskSpec {
  std::string name;
  TaskKind kind = TaskKind::kReach;
  GoalRule goal = GoalRule::kFixed;
  int difficulty = 1;
  int horizon = kDefaultHorizon;

  bool has_object() const { return kind != TaskKind::kReach; }
  bool operator==(const TaskSpec&) const = default;
};

/// reach-fixed, reach-random, push, two-stage-fetch.
inline std::vector<TaskSpec> default_suite() {
  return {
      {"reach-fixed", TaskKind::kReach, GoalRule::kFixed, 1, kDefaultHorizon},
      {"reach-random", TaskKind::kReach, GoalRule::kRandom, 2, kDefaultHorizon},
      {"push", TaskKind::kPush, GoalRule::kFixed, 3, kDefaultHorizon},
      {"two-stage-fetch", TaskKind::kTwoStageFetch, GoalRule::kFixed, 4, kDefaultHorizon},
  };
}

struct EnvState {
  Vec2 agent = Vec2::Zero();
  Vec2 velocity = Vec2::Zero();
  Vec2 object = Vec2::Zero();  // object for push/fetch, switch for toggle
  bool latched = false;        // fetch: object attached; toggle: switch pressed
  Vec2 goal = Vec2::Zero();
  int steps = 0;

  bool operator==(const EnvState&) const = default;
};

struct StepResult {
  Observation observation;
  double reward = 0.0;
  bool done = false;
  bool success = false;
};

inline Vec2 clamp_arena(Vec2 p) { return p.cwiseMax(-1.0).cwiseMin(1.0); }

class Environment {
 public:
  Environment() = default;
  explicit Environment(TaskSpec spec) : spec_(std::move(spec)) {
    if (spec_.horizon < 1) throw std::invalid_argument("task '" + spec_.name + "': horizon must be >= 1");
  }

  const TaskSpec& spec() const { return spec_; }
  const EnvState& state() const { return state_; }
  void set_state(const EnvState& s) { state_ = s; }

  template <class Rng>
  Observation reset(Rng& rng) {
    std::uniform_real_distribution<double> jitter(-0.1, 0.1);
    state_ = EnvState{};
    state_.agent = Vec2(-0.5 + jitter(rng), -0.5 + jitter(rng));
    if (spec_.has_object()) state_.object = Vec2(0.5 + jitter(rng), -0.5 + jitter(rng));
    if (spec_.goal == GoalRule::kFixed) {
      state_.goal = Vec2(0.5, 0.5);
    } else {
      std::uniform_real_distribution<double> gx(-0.2, 0.7), gy(0.1, 0.7);
      state_.goal = Vec2(gx(rng), gy(rng));
    }
    return observe();
  }

  Observation observe() const {
    Observation o(kObservationDim);
    o << state_.agent.x(), state_.agent.y(), spec_.has_object() ? state_.object.x() : 0.0,
        spec_.has_object() ? state_.object.y() : 0.0, state_.latched ? 1.0 : 0.0, state_.goal.x(), state_.goal.y();
    return o;
  }

  StepResult step(const Eigen::Ref<const Eigen::RowVectorXd>& action) {
    if (action.size() != kActionDim)
      throw std::invalid_argument("step: action has " + std::to_string(action.size()) + " entries, expected 2");
    if (!action.allFinite()) throw std::invalid_argument("step: non-finite action for task '" + spec_.name + "'");
    if (state_.steps >= spec_.horizon) throw std::logic_error("step: episode of task '" + spec_.name + "' is over");

    const Vec2 a(std::clamp(action(0), -1.0, 1.0), std::clamp(action(1), -1.0, 1.0));
    const Vec2 before = state_.agent;
    const bool contact = (state_.agent - state_.object).norm() < kContactRadius;
    state_.agent = clamp_arena(state_.agent + a * kDt);
    const Vec2 moved = state_.agent - before;
    state_.velocity = moved / kDt;

    switch (spec_.kind) {
      case TaskKind::kReach: break;
      case TaskKind::kPush:
        if (contact) state_.object = clamp_arena(state_.object + moved);
        break;
      case TaskKind::kTwoStageFetch:
        if (state_.latched) state_.object = clamp_arena(state_.object + moved);
        if ((state_.agent - state_.object).norm() < kLatchRadius) state_.latched = true;
        break;
      case TaskKind::kToggle:
        if ((state_.agent - state_.object).norm() < kContactRadius) state_.latched = true;
        break;
    }
    ++state_.steps;

    StepResult r;
    r.success = success();
    r.reward = shaped_reward() + (r.success ? kSuccessBonus : 0.0);
    r.done = r.success || state_.steps >= spec_.horizon;
    r.observation = observe();
    return r;
  }

  /// Distance that decides success for the task's final stage.
  double final_distance() const {
    switch (spec_.kind) {
      case TaskKind::kPush:
      case TaskKind::kTwoStageFetch: return (state_.object - state_.goal).norm();
      default: return (state_.agent - state_.goal).norm();
    }
  }

  bool success() const {
    if (spec_.kind == TaskKind::kToggle && !state_.latched) return false;
    return final_distance() < kSuccessRadius;
  }

  /// Negative distance to the current subgoal, minus a fixed penalty while
  /// a later stage is still pending.
  double shaped_reward() const {
    const double to_object = (state_.agent - state_.object).norm();
    switch (spec_.kind) {
      case TaskKind::kReach: return -final_distance();
      case TaskKind::kPush:
        return to_object < kContactRadius ? -final_distance() : -to_object - kStagePenalty;
      case TaskKind::kTwoStageFetch:
      case TaskKind::kToggle:
        return state_.latched ? -final_distance() : -to_object - kStagePenalty;
    }
    return 0.0;
  }

 private:
  TaskSpec spec_;
  EnvState state_;
};

/// Hand-coded controller: head for the current subgoal at full speed.
inline Eigen::RowVectorXd scripted_action(const Environment& env) {
  const auto& s = env.state();
  Vec2 target = s.goal;
  switch (env.spec().kind) {
    case TaskKind::kReach: break;
    case TaskKind::kPush:
      target = (s.agent - s.object).norm() < kContactRadius ? Vec2(s.goal + (s.agent - s.object)) : s.object;
      break;
    case TaskKind::kTwoStageFetch:
      target = s.latched ? Vec2(s.goal + (s.agent - s.object)) : s.object;
      break;
    case TaskKind::kToggle:
      target = s.latched ? s.goal : s.object;
      break;
  }
  const Vec2 a = ((target - s.agent) / kDt).cwiseMax(-1.0).cwiseMin(1.0);
  Eigen::RowVectorXd out(kActionDim);
  out << a.x(), a.y();
  return out;
}

}  // namespace d2r::env
