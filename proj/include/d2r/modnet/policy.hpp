#pragma once

#include "d2r/diffcore/parameters.hpp"
#include "d2r/routing/selection.hpp"

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace d2r::modnet {

using ad::Matrix;
using ad::ParameterStore;

struct NetworkConfig {
  int modules = 8;
  int k = 2;
  routing::RoutingFunction function = routing::RoutingFunction::kSampleK;
  int module_width = 64;
  std::vector<int> encoder_widths{64};
  std::vector<int> routing_widths{32};
  /// When false the routing networks see only the task embedding.
  bool state_routing = true;

  int representation_width() const { return encoder_widths.back(); }

  void validate() const {
    if (modules < 2 || modules > routing::RoutingMask::kMaxModules)
      throw std::invalid_argument("network.modules must be in [2, 32], got " + std::to_string(modules));
    if (k < 1) throw std::invalid_argument("network.k must be >= 1, got " + std::to_string(k));
    if (module_width < 1) throw std::invalid_argument("network.module_width must be >= 1");
    if (encoder_widths.empty()) throw std::invalid_argument("network.encoder must list at least one width");
    for (int w : encoder_widths)
      if (w < 1) throw std::invalid_argument("network.encoder widths must be >= 1");
    for (int w : routing_widths)
      if (w < 1) throw std::invalid_argument("network.routing widths must be >= 1");
  }

  bool operator==(const NetworkConfig&) const = default;
};

enum class HeadKind { kActor, kCritic };

struct Linear {
  std::size_t weight = 0;
  std::size_t bias = 0;
};

/// Parameters of one modular network: state encoder F, task embedding H,
/// base modules M_0..M_{n-1} and routing sub-networks G_1..G_{n-1}.
///
/// Module 0 maps F(x) to the module width; modules 1..n-2 keep the width;
/// module n-1 maps to the head (actor: mean and raw log-std; critic: Q).
class ModulePolicy {
 public:
  ModulePolicy() = default;

  template <class Rng>
  ModulePolicy(NetworkConfig config, HeadKind head, int input_dim, int output_dim, int tasks, Rng& rng)
      : config_(std::move(config)), head_(head), input_dim_(input_dim), output_dim_(output_dim), tasks_(tasks) {
    config_.validate();
    if (input_dim < 1 || output_dim < 1 || tasks < 1)
      throw std::invalid_argument("ModulePolicy: input, output and task counts must be positive");

    int in = input_dim;
    for (std::size_t l = 0; l < config_.encoder_widths.size(); ++l) {
      const int out = config_.encoder_widths[l];
      encoder_.push_back(linear("encoder." + std::to_string(l), in, out, rng));
      in = out;
    }
    const int rep = config_.representation_width();
    task_embedding_ = store_.add("task_embedding", ad::glorot_uniform(tasks, rep, rng));

    const int width = config_.module_width;
    const int n = config_.modules;
    for (int i = 0; i < n; ++i) {
      const int fan_in = i == 0 ? rep : width;
      const bool last = i == n - 1;
      const int fan_out = last ? output_dim : width;
      modules_.push_back(linear("module." + std::to_string(i), fan_in, fan_out, rng, last ? 0.1 : 1.0));
    }

    routing_.resize(static_cast<std::size_t>(n));
    for (int i = 1; i < n; ++i) {
      int rin = rep;
      const std::string prefix = "routing." + std::to_string(i) + ".";
      for (std::size_t l = 0; l < config_.routing_widths.size(); ++l) {
        const int rout = config_.routing_widths[l];
        routing_[static_cast<std::size_t>(i)].push_back(linear(prefix + std::to_string(l), rin, rout, rng));
        rin = rout;
      }
      routing_[static_cast<std::size_t>(i)].push_back(
          linear(prefix + std::to_string(config_.routing_widths.size()), rin, i, rng));
    }
  }

  const NetworkConfig& config() const { return config_; }
  HeadKind head() const { return head_; }
  int input_dim() const { return input_dim_; }
  int output_dim() const { return output_dim_; }
  int tasks() const { return tasks_; }
  int modules() const { return config_.modules; }

  ParameterStore& parameters() { return store_; }
  const ParameterStore& parameters() const { return store_; }

  const std::vector<Linear>& encoder() const { return encoder_; }
  std::size_t task_embedding() const { return task_embedding_; }
  const Linear& module(int i) const { return modules_.at(static_cast<std::size_t>(i)); }
  const std::vector<Linear>& router(int i) const {
    if (i < 1 || i >= config_.modules) throw std::out_of_range("router index " + std::to_string(i));
    return routing_[static_cast<std::size_t>(i)];
  }

  /// Sets the output layer of every routing sub-network to zero.
  void zero_routing_outputs() {
    for (int i = 1; i < config_.modules; ++i) {
      const auto& last = routing_[static_cast<std::size_t>(i)].back();
      store_.value(last.weight).setZero();
      store_.value(last.bias).setZero();
    }
  }

 private:
  template <class Rng>
  Linear linear(const std::string& name, int in, int out, Rng& rng, double gain = 1.0) {
    Linear l;
    l.weight = store_.add(name + ".weight", ad::glorot_uniform(in, out, rng, gain));
    l.bias = store_.add(name + ".bias", Matrix::Zero(1, out));
    return l;
  }

  NetworkConfig config_;
  HeadKind head_ = HeadKind::kActor;
  int input_dim_ = 0;
  int output_dim_ = 0;
  int tasks_ = 0;
  ParameterStore store_;
  std::vector<Linear> encoder_;
  std::size_t task_embedding_ = 0;
  std::vector<Linear> modules_;
  std::vector<std::vector<Linear>> routing_;
};

}  // namespace d2r::modnet
