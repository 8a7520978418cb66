#include "d2r/envsuite/vector_env.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

namespace {

using namespace d2r::env;

TaskSpec spec_of(TaskKind kind, GoalRule goal = GoalRule::kFixed) { return {to_string(kind), kind, goal, 1, 200}; }

Eigen::RowVectorXd act(double x, double y) {
  Eigen::RowVectorXd a(2);
  a << x, y;
  return a;
}

struct ExpertStats {
  double success_rate = 0.0;
  double mean_steps = 0.0;
};

ExpertStats run_expert(const TaskSpec& spec, int episodes, std::uint64_t seed) {
  Environment env(spec);
  std::mt19937_64 rng(seed);
  int wins = 0;
  double steps = 0.0;
  for (int e = 0; e < episodes; ++e) {
    env.reset(rng);
    StepResult r;
    do r = env.step(scripted_action(env));
    while (!r.done);
    if (r.success) {
      ++wins;
      steps += env.state().steps;
    }
  }
  return {static_cast<double>(wins) / episodes, wins ? steps / wins : 0.0};
}

TEST(Reset, FixedGoalRepeatsAndRandomGoalIsSeeded) {
  Environment fixed(spec_of(TaskKind::kReach));
  std::mt19937_64 rng(1);
  const auto a = fixed.reset(rng);
  const auto b = fixed.reset(rng);
  EXPECT_EQ(a.tail(2), b.tail(2));

  Environment random(spec_of(TaskKind::kReach, GoalRule::kRandom));
  std::mt19937_64 r1(9), r2(9);
  for (int i = 0; i < 5; ++i) EXPECT_EQ(random.reset(r1), random.reset(r2));
}

TEST(Reset, ObservationLengthIsSharedAcrossKinds) {
  std::mt19937_64 rng(2);
  for (auto k : {TaskKind::kReach, TaskKind::kPush, TaskKind::kTwoStageFetch, TaskKind::kToggle}) {
    Environment e(spec_of(k));
    EXPECT_EQ(e.reset(rng).size(), kObservationDim);
  }
  Environment reach(spec_of(TaskKind::kReach));
  const auto o = reach.reset(rng);
  EXPECT_EQ(o(2), 0.0);
  EXPECT_EQ(o(3), 0.0);
}

TEST(Step, ZeroActionKeepsPositionAndReward) {
  std::mt19937_64 rng(3);
  for (auto k : {TaskKind::kReach, TaskKind::kPush, TaskKind::kTwoStageFetch, TaskKind::kToggle}) {
    Environment e(spec_of(k));
    e.reset(rng);
    const auto first = e.step(act(0.3, -0.2));
    const Vec2 pos = e.state().agent;
    const auto second = e.step(act(0.0, 0.0));
    EXPECT_EQ(e.state().agent, pos);
    EXPECT_EQ(second.reward, first.reward);
  }
}

TEST(Step, ReachRewardIncreasesTowardGoal) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-0.9, 0.9);
  Environment e(spec_of(TaskKind::kReach));
  for (int trial = 0; trial < 1000; ++trial) {
    e.reset(rng);
    EnvState s = e.state();
    s.agent = Vec2(u(rng), u(rng));
    s.goal = Vec2(u(rng), u(rng));
    if ((s.agent - s.goal).norm() < 0.1) continue;
    e.set_state(s);
    const double before = e.shaped_reward();
    const Vec2 dir = (s.goal - s.agent).normalized();
    const auto r = e.step(act(dir.x(), dir.y()));
    EXPECT_GT(r.reward, before);
  }
}

TEST(Step, FetchObjectImmobileBeforeLatch) {
  std::mt19937_64 rng(5);
  Environment e(spec_of(TaskKind::kTwoStageFetch));
  e.reset(rng);
  EnvState s = e.state();
  s.agent = s.object + Vec2(0.08, 0.0);  // inside push contact, outside latch radius
  e.set_state(s);
  const Vec2 obj = s.object;
  e.step(act(0.0, 1.0));
  EXPECT_EQ(e.state().object, obj);
  EXPECT_FALSE(e.state().latched);
}

TEST(Step, PushMovesObjectInContact) {
  std::mt19937_64 rng(6);
  Environment e(spec_of(TaskKind::kPush));
  e.reset(rng);
  EnvState s = e.state();
  s.agent = s.object + Vec2(0.05, 0.0);
  e.set_state(s);
  e.step(act(0.0, 1.0));
  EXPECT_NEAR(e.state().object.y(), s.object.y() + kDt, 1e-15);
}

TEST(Step, RejectsNonFiniteAction) {
  std::mt19937_64 rng(7);
  Environment e(spec_of(TaskKind::kReach));
  e.reset(rng);
  EXPECT_THROW(e.step(act(std::nan(""), 0.0)), std::invalid_argument);
  EXPECT_THROW(e.step(act(INFINITY, 0.0)), std::invalid_argument);
}

TEST(Step, DeterministicGivenSeedAndActions) {
  for (auto k : {TaskKind::kPush, TaskKind::kTwoStageFetch}) {
    Environment a(spec_of(k, GoalRule::kRandom)), b(spec_of(k, GoalRule::kRandom));
    std::mt19937_64 ra(8), rb(8), act_rng(3);
    a.reset(ra);
    b.reset(rb);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int t = 0; t < 200; ++t) {
      const auto action = act(u(act_rng), u(act_rng));
      const auto x = a.step(action);
      const auto y = b.step(action);
      EXPECT_EQ(x.observation, y.observation);
      EXPECT_EQ(x.reward, y.reward);
      if (x.done) break;
    }
    EXPECT_EQ(a.state(), b.state());
  }
}

TEST(Step, RewardBounded) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  for (auto k : {TaskKind::kReach, TaskKind::kPush, TaskKind::kTwoStageFetch, TaskKind::kToggle}) {
    Environment e(spec_of(k, GoalRule::kRandom));
    for (int ep = 0; ep < 20; ++ep) {
      e.reset(rng);
      StepResult r;
      do {
        r = e.step(act(u(rng), u(rng)));
        EXPECT_LE(std::abs(r.reward), 4.0);
        EXPECT_LE(e.state().agent.cwiseAbs().maxCoeff(), 1.0);
      } while (!r.done);
    }
  }
}

TEST(Expert, SolvesEveryKind) {
  for (auto k : {TaskKind::kReach, TaskKind::kPush, TaskKind::kTwoStageFetch, TaskKind::kToggle})
    for (auto g : {GoalRule::kFixed, GoalRule::kRandom})
      EXPECT_GE(run_expert(spec_of(k, g), 100, 10).success_rate, 0.95) << to_string(k) << " " << to_string(g);
}

TEST(Expert, DifficultyOrdering) {
  const double reach = run_expert(spec_of(TaskKind::kReach), 100, 11).mean_steps;
  const double push = run_expert(spec_of(TaskKind::kPush), 100, 11).mean_steps;
  const double fetch = run_expert(spec_of(TaskKind::kTwoStageFetch), 100, 11).mean_steps;
  EXPECT_LT(reach, push);
  EXPECT_LT(push, fetch);
}

TEST(RandomPolicy, RarelySolvesFetch) {
  Environment e(spec_of(TaskKind::kTwoStageFetch));
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  int wins = 0;
  for (int ep = 0; ep < 100; ++ep) {
    e.reset(rng);
    StepResult r;
    do r = e.step(act(u(rng), u(rng)));
    while (!r.done);
    wins += r.success;
  }
  EXPECT_LE(wins, 20);
}

TEST(VectorEnv, AutoResetsAndIsolatesFaults) {
  std::vector<std::mt19937_64> rngs{std::mt19937_64(1), std::mt19937_64(2)};
  VectorEnv v({spec_of(TaskKind::kReach), spec_of(TaskKind::kPush)}, rngs);
  Eigen::MatrixXd actions = Eigen::MatrixXd::Zero(2, 2);
  actions(0, 0) = std::nan("");
  const auto out = v.step(actions);
  EXPECT_TRUE(out[0].fault.has_value());
  EXPECT_FALSE(out[1].fault.has_value());
  EXPECT_EQ(v.env(1).state().steps, 1);

  int dones = 0;
  for (int t = 0; t < 200; ++t) dones += v.step(Eigen::MatrixXd::Zero(2, 2))[1].done;
  EXPECT_EQ(dones, 1);
  EXPECT_EQ(v.env(1).state().steps, 1);
}

TEST(VectorEnv, ThreadedMatchesSerial) {
  auto make = [](int threads) {
    std::vector<std::mt19937_64> rngs;
    for (int i = 0; i < 4; ++i) rngs.emplace_back(i);
    return VectorEnv(default_suite(), rngs, threads);
  };
  auto a = make(1);
  auto b = make(3);
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int t = 0; t < 300; ++t) {
    Eigen::MatrixXd actions(4, 2);
    for (Eigen::Index i = 0; i < actions.size(); ++i) actions.data()[i] = u(rng);
    a.step(actions);
    b.step(actions);
  }
  EXPECT_EQ(a.observations(), b.observations());
}

}  // namespace
