#pragma once

#include "d2r/envsuite/env.hpp"

#include <cstdint>
#include <exception>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

namespace d2r::env {

struct VectorStep {
  Observation next_observation;  // observation reached by the action (before any reset)
  double reward = 0.0;
  bool done = false;
  bool success = false;
  bool truncated = false;              // horizon reached without success
  std::optional<std::string> fault;    // set when the environment raised; no transition produced
};

/// One environment per task, stepped together. Finished episodes are reset
/// automatically; `observations()` always holds the state to act from.
class VectorEnv {
 public:
  VectorEnv(std::vector<TaskSpec> suite, std::vector<std::mt19937_64> rngs, int threads = 1)
      : rngs_(std::move(rngs)), threads_(threads) {
    if (suite.empty()) throw std::invalid_argument("VectorEnv: empty task suite");
    if (rngs_.size() != suite.size()) throw std::invalid_argument("VectorEnv: one rng stream per task required");
    for (auto& s : suite) envs_.emplace_back(std::move(s));
    obs_ = Eigen::MatrixXd(static_cast<Eigen::Index>(envs_.size()), kObservationDim);
    for (std::size_t i = 0; i < envs_.size(); ++i) obs_.row(static_cast<Eigen::Index>(i)) = envs_[i].reset(rngs_[i]);
  }

  std::size_t size() const { return envs_.size(); }
  const Eigen::MatrixXd& observations() const { return obs_; }
  const Environment& env(std::size_t i) const { return envs_.at(i); }
  Environment& env(std::size_t i) { return envs_.at(i); }

  std::vector<VectorStep> step(const Eigen::MatrixXd& actions) {
    if (actions.rows() != static_cast<Eigen::Index>(envs_.size()) || actions.cols() != kActionDim)
      throw std::invalid_argument("VectorEnv::step: actions must be (" + std::to_string(envs_.size()) + "x2)");
    std::vector<VectorStep> out(envs_.size());
    auto work = [&](std::size_t i) {
      auto& e = envs_[i];
      const auto row = static_cast<Eigen::Index>(i);
      try {
        auto r = e.step(actions.row(row));
        out[i].next_observation = r.observation;
        out[i].reward = r.reward;
        out[i].done = r.done;
        out[i].success = r.success;
        out[i].truncated = r.done && !r.success;
        if (r.done) obs_.row(row) = e.reset(rngs_[i]);
        else obs_.row(row) = r.observation;
      } catch (const std::exception& ex) {
        out[i].fault = ex.what();
        obs_.row(row) = e.reset(rngs_[i]);
      }
    };
    if (threads_ <= 1 || envs_.size() < 2) {
      for (std::size_t i = 0; i < envs_.size(); ++i) work(i);
    } else {
      std::vector<std::jthread> pool;
      const std::size_t t = std::min<std::size_t>(static_cast<std::size_t>(threads_), envs_.size());
      for (std::size_t w = 0; w < t; ++w)
        pool.emplace_back([&, w] {
          for (std::size_t i = w; i < envs_.size(); i += t) work(i);
        });
    }
    return out;
  }

 private:
  std::vector<Environment> envs_;
  std::vector<std::mt19937_64> rngs_;
  int threads_ = 1;
  Eigen::MatrixXd obs_;
};

}  // namespace d2r::env
