#pragma once

#include "d2r/envsuite/env.hpp"
#include "d2r/modnet/policy.hpp"
#include "d2r/rng.hpp"
#include "d2r/sacmt/agent.hpp"

#include "json.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace d2r::cli {

using json = nlohmann::json;
using ad::Matrix;

/// Invalid configuration; the message starts with the offending key path.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct RunConfig {
  std::vector<env::TaskSpec> suite = env::default_suite();
  modnet::NetworkConfig network;
  sacmt::SacConfig sac;
  long total_steps = 200000;  // env steps summed over tasks
  long eval_interval = 10000;
  int eval_episodes = 10;
  long checkpoint_interval = 50000;
  std::uint64_t seed = 1;
  int env_threads = 1;
  std::string output_dir = "runs/d2r";

  void validate() const {
    if (suite.empty()) throw ConfigError("suite: at least one task is required");
    std::set<std::string> names;
    for (std::size_t i = 0; i < suite.size(); ++i) {
      const auto at = "suite[" + std::to_string(i) + "]";
      if (suite[i].name.empty()) throw ConfigError(at + ".name: must not be empty");
      if (!names.insert(suite[i].name).second) throw ConfigError(at + ".name: duplicate task '" + suite[i].name + "'");
      if (suite[i].horizon < 1) throw ConfigError(at + ".horizon: must be >= 1");
    }
    if (total_steps < 0) throw ConfigError("total_steps: must be >= 0");
    if (eval_interval < 1) throw ConfigError("eval_interval: must be >= 1");
    if (eval_episodes < 0) throw ConfigError("eval_episodes: must be >= 0");
    if (checkpoint_interval < 1) throw ConfigError("checkpoint_interval: must be >= 1");
    if (env_threads < 1) throw ConfigError("env_threads: must be >= 1");
    try {
      network.validate();
      sac.validate();
    } catch (const ConfigError&) {
      throw;
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }

  bool operator==(const RunConfig&) const = default;
};

namespace detail {

/// Reads an object field by field, remembering the path for messages and
/// rejecting keys nobody asked for.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + ": expected an object");
  }

  std::string key(const std::string& k) const { return path_.empty() ? k : path_ + "." + k; }
  std::string where() const { return path_.empty() ? "<root>" : path_; }

  const json* find(const std::string& k) {
    seen_.insert(k);
    const auto it = j_.find(k);
    return it == j_.end() ? nullptr : &*it;
  }

  template <class T>
  void read(const std::string& k, T& out) {
    const json* v = find(k);
    if (!v) return;
    out = convert<T>(*v, key(k));
  }

  template <class T>
  static T convert(const json& v, const std::string& at) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(at + ": expected true or false");
      return v.get<bool>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError(at + ": expected an integer");
      if constexpr (std::is_unsigned_v<T>) {
        if (v.is_number_unsigned()) return v.get<T>();
        if (v.get<long long>() < 0) throw ConfigError(at + ": expected a non-negative integer");
      }
      return v.get<T>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(at + ": expected a number");
      return v.get<T>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(at + ": expected a string");
      return v.get<std::string>();
    } else {
      if (!v.is_array()) throw ConfigError(at + ": expected an array");
      T out;
      for (std::size_t i = 0; i < v.size(); ++i)
        out.push_back(convert<typename T::value_type>(v[i], at + "[" + std::to_string(i) + "]"));
      return out;
    }
  }

  /// Enumerations given as strings.
  template <class T, class Parse>
  void read_enum(const std::string& k, T& out, Parse parse) {
    const json* v = find(k);
    if (!v) return;
    const auto s = convert<std::string>(*v, key(k));
    try {
      out = parse(s);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(key(k) + ": " + e.what());
    }
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError(key(it.key()) + ": unknown key");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace detail

inline json to_json(const env::TaskSpec& t) {
  return {{"name", t.name},
          {"kind", env::to_string(t.kind)},
          {"goal", env::to_string(t.goal)},
          {"difficulty", t.difficulty},
          {"horizon", t.horizon}};
}

inline json to_json(const RunConfig& c) {
  json suite = json::array();
  for (const auto& t : c.suite) suite.push_back(to_json(t));
  const auto& n = c.network;
  const auto& s = c.sac;
  return {
      {"seed", c.seed},
      {"total_steps", c.total_steps},
      {"eval_interval", c.eval_interval},
      {"eval_episodes", c.eval_episodes},
      {"checkpoint_interval", c.checkpoint_interval},
      {"env_threads", c.env_threads},
      {"output_dir", c.output_dir},
      {"suite", suite},
      {"network",
       {{"modules", n.modules},
        {"k", n.k},
        {"routing_function", routing::to_string(n.function)},
        {"module_width", n.module_width},
        {"encoder", n.encoder_widths},
        {"routing", n.routing_widths},
        {"state_routing", n.state_routing}}},
      {"sac",
       {{"actor_lr", s.actor_lr},
        {"critic_lr", s.critic_lr},
        {"alpha_lr", s.alpha_lr},
        {"gamma", s.gamma},
        {"reward_scale", s.reward_scale},
        {"polyak", s.polyak},
        {"init_alpha", s.init_alpha},
        {"target_entropy", s.target_entropy ? json(*s.target_entropy) : json(nullptr)},
        {"batch_per_task", s.batch_per_task},
        {"buffer_capacity", s.buffer_capacity},
        {"warmup_steps", s.warmup_steps},
        {"route_balancing", s.route_balancing},
        {"loss_weighting", s.loss_weighting},
        {"balance_critics", s.balance_critics},
        {"maskout_threshold", s.maskout_threshold},
        {"resrouting", sacmt::to_string(s.resrouting)}}},
  };
}

inline env::TaskSpec task_from_json(const json& j, const std::string& path) {
  detail::Reader r(j, path);
  env::TaskSpec t;
  r.read("name", t.name);
  r.read_enum("kind", t.kind, [](const std::string& s) { return env::task_kind_from_string(s); });
  r.read_enum("goal", t.goal, [](const std::string& s) { return env::goal_rule_from_string(s); });
  r.read("difficulty", t.difficulty);
  r.read("horizon", t.horizon);
  r.finish();
  return t;
}

/// Missing keys keep their defaults; unknown keys and wrong types are errors.
inline RunConfig config_from_json(const json& j) {
  RunConfig c;
  detail::Reader r(j, "");
  r.read("seed", c.seed);
  r.read("total_steps", c.total_steps);
  r.read("eval_interval", c.eval_interval);
  r.read("eval_episodes", c.eval_episodes);
  r.read("checkpoint_interval", c.checkpoint_interval);
  r.read("env_threads", c.env_threads);
  r.read("output_dir", c.output_dir);
  if (const json* suite = r.find("suite")) {
    if (!suite->is_array()) throw ConfigError("suite: expected an array of tasks");
    c.suite.clear();
    for (std::size_t i = 0; i < suite->size(); ++i)
      c.suite.push_back(task_from_json((*suite)[i], "suite[" + std::to_string(i) + "]"));
  }
  if (const json* net = r.find("network")) {
    detail::Reader n(*net, "network");
    n.read("modules", c.network.modules);
    n.read("k", c.network.k);
    n.read_enum("routing_function", c.network.function, routing::routing_function_from_string);
    n.read("module_width", c.network.module_width);
    n.read("encoder", c.network.encoder_widths);
    n.read("routing", c.network.routing_widths);
    n.read("state_routing", c.network.state_routing);
    n.finish();
  }
  if (const json* sac = r.find("sac")) {
    detail::Reader s(*sac, "sac");
    auto& o = c.sac;
    s.read("actor_lr", o.actor_lr);
    s.read("critic_lr", o.critic_lr);
    s.read("alpha_lr", o.alpha_lr);
    s.read("gamma", o.gamma);
    s.read("reward_scale", o.reward_scale);
    s.read("polyak", o.polyak);
    s.read("init_alpha", o.init_alpha);
    if (const json* te = s.find("target_entropy")) {
      if (te->is_null())
        o.target_entropy.reset();
      else
        o.target_entropy = detail::Reader::convert<double>(*te, "sac.target_entropy");
    }
    s.read("batch_per_task", o.batch_per_task);
    s.read("buffer_capacity", o.buffer_capacity);
    s.read("warmup_steps", o.warmup_steps);
    s.read("route_balancing", o.route_balancing);
    s.read("loss_weighting", o.loss_weighting);
    s.read("balance_critics", o.balance_critics);
    s.read("maskout_threshold", o.maskout_threshold);
    s.read_enum("resrouting", o.resrouting, sacmt::resrouting_mode_from_string);
    s.finish();
  }
  r.finish();
  c.validate();
  return c;
}

inline RunConfig parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return config_from_json(j);
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

inline std::string serialize(const RunConfig& c) { return to_json(c).dump(2); }

/// Identifies a configuration in every artifact it produces. Where output
/// goes and how many threads step the environments do not change results.
inline std::string config_hash(const RunConfig& c) {
  json j = to_json(c);
  j.erase("output_dir");
  j.erase("env_threads");
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(j.dump())));
  return buf;
}

/// Whether a run of `b` may continue from a checkpoint of `a`.
inline bool resumable(RunConfig a, const RunConfig& b) {
  a.total_steps = b.total_steps;
  return config_hash(a) == config_hash(b);
}

}  // namespace d2r::cli
