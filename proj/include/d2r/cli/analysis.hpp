#pragma once

#include "d2r/envsuite/env.hpp"
#include "d2r/rng.hpp"
#include "d2r/routing/selection.hpp"
#include "d2r/sacmt/agent.hpp"

#include "json.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace d2r::cli {

using ad::Matrix;
using routing::RoutingMask;

inline constexpr double kSparsityCutoff = 0.01;

/// Deterministic routing of one network for one input row: the top-k paths,
/// the routing probabilities over each module's selected sources and the
/// modules that reach the output.
struct RoutingSnapshot {
  RoutingMask mask;
  std::vector<std::vector<double>> probabilities;  // [i] has i entries; zero where unselected
  std::vector<bool> effective;
};

inline std::vector<RoutingSnapshot> routing_snapshots(const modnet::ModulePolicy& net, const Matrix& inputs,
                                                      std::span<const int> tasks) {
  ad::Tape t;
  modnet::Binder b(t, net, false);
  const auto pass = modnet::route(b, t.constant(inputs), tasks);
  const auto logits = modnet::logit_values(t, pass);
  const auto& cfg = net.config();
  Rng unused(0);
  const auto masks = routing::choose_masks(cfg.function, cfg.k, logits, false, {}, unused);
  std::vector<RoutingSnapshot> out;
  for (std::size_t r = 0; r < masks.size(); ++r) {
    RoutingSnapshot s;
    s.mask = masks[r];
    s.effective = routing::effective_module_flags(s.mask);
    s.probabilities.resize(static_cast<std::size_t>(cfg.modules));
    for (int i = 1; i < cfg.modules; ++i) {
      const auto& zi = logits[static_cast<std::size_t>(i)];
      std::vector<double> z(static_cast<std::size_t>(i));
      for (int j = 0; j < i; ++j) z[static_cast<std::size_t>(j)] = zi(static_cast<Eigen::Index>(r), j);
      s.probabilities[static_cast<std::size_t>(i)] = routing::mask_softmax(z, s.mask.sources(i));
    }
    out.push_back(std::move(s));
  }
  return out;
}

/// States visited by the deterministic policy on one task, resetting at
/// episode ends, `samples` rows.
template <class Rng>
Matrix rollout_states(const sacmt::Agent& agent, const env::TaskSpec& spec, int task, int samples, Rng& rng) {
  Matrix out(samples, env::kObservationDim);
  env::Environment e(spec);
  Matrix obs = e.reset(rng);
  const std::vector<int> ids{task};
  for (int s = 0; s < samples; ++s) {
    out.row(s) = obs;
    const auto b = agent.act(obs, ids, false, rng);
    const auto res = e.step(b.actions.row(0));
    obs = res.done ? e.reset(rng) : res.observation;
  }
  return out;
}

inline std::vector<int> repeated(int task, Eigen::Index n) { return std::vector<int>(static_cast<std::size_t>(n), task); }

struct UsageRow {
  int task = 0;
  std::string name;
  int samples = 0;
  double mean = 0.0;
  double std = 0.0;
  std::vector<int> histogram;  // [c] = timesteps with c effective modules
};

template <class Rng>
std::vector<UsageRow> analyze_usage(const sacmt::Agent& agent, const std::vector<env::TaskSpec>& suite, int samples,
                                    Rng& rng) {
  std::vector<UsageRow> out;
  const int n = agent.network_config().modules;
  for (std::size_t t = 0; t < suite.size(); ++t) {
    UsageRow row;
    row.task = static_cast<int>(t);
    row.name = suite[t].name;
    row.samples = samples;
    row.histogram.assign(static_cast<std::size_t>(n + 1), 0);
    if (samples > 0) {
      const Matrix states = rollout_states(agent, suite[t], row.task, samples, rng);
      const auto snaps = routing_snapshots(agent.actor(), states, repeated(row.task, states.rows()));
      double sum = 0.0, sq = 0.0;
      for (const auto& s : snaps) {
        const int c = static_cast<int>(std::count(s.effective.begin(), s.effective.end(), true));
        ++row.histogram[static_cast<std::size_t>(c)];
        sum += c;
        sq += static_cast<double>(c) * c;
      }
      row.mean = sum / samples;
      row.std = std::sqrt(std::max(0.0, sq / samples - row.mean * row.mean));
    }
    out.push_back(std::move(row));
  }
  return out;
}

inline void write_usage_csv(std::ostream& os, const std::vector<UsageRow>& rows, const std::string& hash) {
  os << "task_id,task,samples,mean_modules,std_modules";
  const std::size_t bins = rows.empty() ? 0 : rows.front().histogram.size();
  for (std::size_t c = 0; c < bins; ++c) os << ",count_" << c;
  os << ",config_hash\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.6f,%.6f", r.mean, r.std);
    os << r.task << ',' << r.name << ',' << r.samples << ',' << buf;
    for (int h : r.histogram) os << ',' << h;
    os << ',' << hash << '\n';
  }
}

/// Share of (state, module) pairs by the number of sources with probability
/// above the cutoff. Module 0 reads the state and is not counted.
struct SparsityResult {
  std::vector<long> counts;  // [c] = pairs with c sources
  long total = 0;
  double percent(std::size_t c) const { return total ? 100.0 * static_cast<double>(counts[c]) / total : 0.0; }
};

template <class Rng>
SparsityResult analyze_sparsity(const sacmt::Agent& agent, const std::vector<env::TaskSpec>& suite, int samples,
                                Rng& rng) {
  const int n = agent.network_config().modules;
  SparsityResult out;
  out.counts.assign(static_cast<std::size_t>(n), 0);
  if (samples <= 0) return out;
  for (std::size_t t = 0; t < suite.size(); ++t) {
    const Matrix states = rollout_states(agent, suite[t], static_cast<int>(t), samples, rng);
    for (const auto& s : routing_snapshots(agent.actor(), states, repeated(static_cast<int>(t), states.rows())))
      for (int i = 1; i < n; ++i) {
        const auto& p = s.probabilities[static_cast<std::size_t>(i)];
        const auto c = std::count_if(p.begin(), p.end(), [](double v) { return v > kSparsityCutoff; });
        ++out.counts[static_cast<std::size_t>(c)];
        ++out.total;
      }
  }
  return out;
}

inline void write_sparsity_csv(std::ostream& os, const SparsityResult& r, const std::string& hash) {
  os << "sources,modules,percent,config_hash\n";
  char buf[32];
  for (std::size_t c = 0; c < r.counts.size(); ++c) {
    std::snprintf(buf, sizeof buf, "%.4f", r.percent(c));
    os << c << ',' << r.counts[c] << ',' << buf << ',' << hash << '\n';
  }
}

inline nlohmann::json mask_json(const RoutingMask& m) {
  auto out = nlohmann::json::array();
  for (int i = 1; i < m.modules(); ++i) out.push_back(m.sources(i));
  return out;
}

/// One JSON object per timestep: task, deterministic paths of actor and both
/// critics, effective actor modules and actor routing probabilities.
template <class Rng>
void write_trace(std::ostream& os, const sacmt::Agent& agent, const std::vector<env::TaskSpec>& suite, int samples,
                 Rng& rng, const std::string& hash) {
  for (std::size_t t = 0; t < suite.size(); ++t) {
    if (samples <= 0) break;
    const int task = static_cast<int>(t);
    const Matrix states = rollout_states(agent, suite[t], task, samples, rng);
    const auto ids = repeated(task, states.rows());
    const auto b = agent.act(states, ids, false, rng);
    Matrix sa(states.rows(), states.cols() + b.actions.cols());
    sa << states, b.actions;
    const auto actor = routing_snapshots(agent.actor(), states, ids);
    const auto q1 = routing_snapshots(agent.q1(), sa, ids);
    const auto q2 = routing_snapshots(agent.q2(), sa, ids);
    for (int s = 0; s < samples; ++s) {
      const auto& a = actor[static_cast<std::size_t>(s)];
      nlohmann::json j;
      j["config_hash"] = hash;
      j["task"] = task;
      j["step"] = s;
      j["masks"] = {{"actor", mask_json(a.mask)},
                    {"q1", mask_json(q1[static_cast<std::size_t>(s)].mask)},
                    {"q2", mask_json(q2[static_cast<std::size_t>(s)].mask)}};
      j["effective"] = routing::effective_modules(a.mask);
      j["probabilities"] =
          std::vector<std::vector<double>>(a.probabilities.begin() + 1, a.probabilities.end());
      os << j.dump() << '\n';
    }
  }
}

/// DOT digraph of one routing snapshot. Vertices are modules numbered from 1;
/// each selected source gives an edge whose weight is its routing
/// probability. Modules that do not reach the output are dashed.
inline std::string routing_dot(const RoutingSnapshot& s, const std::string& title, const std::string& hash) {
  std::ostringstream os;
  const int n = s.mask.modules();
  os << "digraph routing {\n";
  os << "  comment=\"config_hash=" << hash << "\";\n";
  os << "  label=\"" << title << "\";\n";
  os << "  rankdir=LR;\n";
  os << "  node [shape=box];\n";
  for (int i = 0; i < n; ++i) {
    os << "  M" << i + 1 << " [label=\"M" << i + 1 << "\"";
    if (!s.effective[static_cast<std::size_t>(i)]) os << ", style=dashed";
    os << "];\n";
  }
  char w[16], alpha[8];
  for (int i = 1; i < n; ++i)
    for (int j = 0; j < i; ++j) {
      if (!s.mask.selected(i, j)) continue;
      const double p = s.probabilities[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
      std::snprintf(w, sizeof w, "%.2f", p);
      std::snprintf(alpha, sizeof alpha, "%02x", static_cast<int>(std::lround(40 + 215 * std::clamp(p, 0.0, 1.0))));
      os << "  M" << j + 1 << " -> M" << i + 1 << " [weight=" << w << ", label=\"" << w << "\", color=\"#1a9641"
         << alpha << "\"";
      if (!s.effective[static_cast<std::size_t>(i)]) os << ", style=dashed";
      os << "];\n";
    }
  os << "}\n";
  return os.str();
}

}  // namespace d2r::cli
