#pragma once

#include "d2r/cli/analysis.hpp"
#include "d2r/cli/checkpoint.hpp"
#include "d2r/cli/config.hpp"
#include "d2r/log.hpp"
#include "d2r/sacmt/metrics.hpp"
#include "d2r/sacmt/trainer.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

namespace d2r::cli {

namespace fs = std::filesystem;

struct TrainPaths {
  fs::path dir, metrics, config, checkpoints, latest, final;

  explicit TrainPaths(const std::string& out)
      : dir(out),
        metrics(dir / "metrics.csv"),
        config(dir / "config.json"),
        checkpoints(dir / "checkpoints"),
        latest(checkpoints / "latest.d2r"),
        final(dir / "final.d2r") {}
};

inline bool crossed(long before, long after, long interval) { return before / interval < after / interval; }

/// Runs the sample/train loop of `config`, writing metrics, periodic and
/// final checkpoints under the output directory. Returns the final eval.
inline std::optional<sacmt::EvalResult> run_train(const RunConfig& config, bool resume) {
  config.validate();
  const TrainPaths paths(config.output_dir);
  fs::create_directories(paths.checkpoints);
  const std::string hash = config_hash(config);
  {
    std::ofstream cfg(paths.config);
    cfg << serialize(config) << '\n';
  }

  sacmt::Trainer trainer(config.suite, config.network, config.sac, config.seed, config.env_threads);
  std::ofstream metrics;
  if (resume && fs::exists(paths.latest)) {
    auto ck = load_checkpoint(paths.latest);
    if (!resumable(ck.config, config))
      throw ConfigError("resume: " + paths.latest.string() + " was written by configuration " + ck.config_hash +
                        ", which differs from " + hash + " in more than total_steps");
    trainer.agent() = std::move(ck.agent);
    trainer.set_env_steps(ck.env_steps);
    metrics.open(paths.metrics, std::ios::app);
    log().info("resuming from {} at step {}", paths.latest.string(), ck.env_steps);
  } else {
    metrics.open(paths.metrics, std::ios::trunc);
    metrics << sacmt::kMetricsHeader << '\n';
    metrics.flush();
    save_checkpoint(paths.checkpoints / "ckpt-0.d2r", config, 0, trainer.agent());
    save_checkpoint(paths.latest, config, 0, trainer.agent());
  }
  if (!metrics) throw std::runtime_error("cannot write " + paths.metrics.string());

  std::optional<sacmt::EvalResult> last;
  long last_eval = trainer.env_steps();
  while (trainer.env_steps() < config.total_steps) {
    const long before = trainer.env_steps();
    trainer.iterate();
    const long now = trainer.env_steps();
    const bool final = now >= config.total_steps;
    if (crossed(before, now, config.eval_interval) || (final && last_eval != now)) {
      auto rng = trainer.eval_rng(now);
      last = sacmt::evaluate(trainer.agent(), config.suite, config.eval_episodes, rng);
      sacmt::write_metrics_rows(metrics, now, *last, trainer.accumulator(), trainer.agent().temperatures(), hash);
      trainer.accumulator().reset(static_cast<int>(config.suite.size()));
      last_eval = now;
      log().info("step {} mean success {:.3f}", now, last->mean_success());
    }
    if (crossed(before, now, config.checkpoint_interval)) {
      save_checkpoint(paths.checkpoints / ("ckpt-" + std::to_string(now) + ".d2r"), config, now, trainer.agent());
      save_checkpoint(paths.latest, config, now, trainer.agent());
    }
  }
  save_checkpoint(paths.final, config, trainer.env_steps(), trainer.agent());
  save_checkpoint(paths.latest, config, trainer.env_steps(), trainer.agent());
  return last;
}

inline void write_eval_table(std::ostream& os, const sacmt::EvalResult& r, const std::vector<env::TaskSpec>& suite,
                             const std::string& hash) {
  os << "task_id,task,episodes,successes,success_rate,config_hash\n";
  bool any = false;
  char buf[32];
  for (std::size_t t = 0; t < suite.size(); ++t) {
    if (!r.episodes[t]) continue;
    any = true;
    std::snprintf(buf, sizeof buf, "%.6f", r.success_rate(t));
    os << t << ',' << suite[t].name << ',' << r.episodes[t] << ',' << r.successes[t] << ',' << buf << ',' << hash
       << '\n';
  }
  if (any) {
    std::snprintf(buf, sizeof buf, "%.6f", r.mean_success());
    os << "mean,all,,," << buf << ',' << hash << '\n';
  }
}

/// Deterministic evaluation of a checkpoint; the table goes to `out` and to
/// the CSV file.
inline sacmt::EvalResult run_eval(const fs::path& ckpt, int episodes, const fs::path& csv, std::ostream& out) {
  if (episodes < 0) throw std::invalid_argument("--episodes must be >= 0");
  const auto ck = load_checkpoint(ckpt);
  auto rng = named_stream(ck.config.seed, "eval/final");
  const auto r = sacmt::evaluate(ck.agent, ck.config.suite, episodes, rng);
  write_eval_table(out, r, ck.config.suite, ck.config_hash);
  std::ofstream f(csv);
  if (!f) throw std::runtime_error("cannot write " + csv.string());
  write_eval_table(f, r, ck.config.suite, ck.config_hash);
  return r;
}

inline void check_task(const RunConfig& c, int task) {
  if (task >= 0 && task < static_cast<int>(c.suite.size())) return;
  std::string valid;
  for (std::size_t t = 0; t < c.suite.size(); ++t)
    valid += (t ? ", " : "") + std::to_string(t) + " (" + c.suite[t].name + ")";
  throw std::invalid_argument("unknown task id " + std::to_string(task) + "; valid ids: " + valid);
}

/// Reads one observation row: comma or whitespace separated numbers.
inline Matrix parse_state(const std::string& text) {
  std::string s = text;
  std::replace(s.begin(), s.end(), ',', ' ');
  std::istringstream in(s);
  std::vector<double> v;
  double x;
  while (in >> x) v.push_back(x);
  if (!in.eof()) throw std::invalid_argument("state: could not parse '" + text + "' as numbers");
  if (static_cast<int>(v.size()) != env::kObservationDim)
    throw std::invalid_argument("state: expected " + std::to_string(env::kObservationDim) + " numbers, got " +
                                std::to_string(v.size()));
  Matrix m(1, env::kObservationDim);
  for (int i = 0; i < env::kObservationDim; ++i) m(0, i) = v[static_cast<std::size_t>(i)];
  return m;
}

/// Routing graph of the actor for one task. The state is given explicitly
/// or taken `rollout_step` deterministic steps into an episode.
inline std::string run_export_dot(const Checkpoint& ck, int task, const std::optional<Matrix>& state, int rollout_step) {
  check_task(ck.config, task);
  Matrix s;
  std::string source;
  if (state) {
    s = *state;
    source = "given state";
  } else {
    if (rollout_step < 0) throw std::invalid_argument("--step must be >= 0");
    auto rng = named_stream(ck.config.seed, "export/" + std::to_string(task));
    s = rollout_states(ck.agent, ck.config.suite[static_cast<std::size_t>(task)], task, rollout_step + 1, rng)
            .row(rollout_step);
    source = "rollout step " + std::to_string(rollout_step);
  }
  const std::vector<int> ids{task};
  const auto snap = routing_snapshots(ck.agent.actor(), s, ids).front();
  return routing_dot(snap, ck.config.suite[static_cast<std::size_t>(task)].name + ", " + source, ck.config_hash);
}

}  // namespace d2r::cli
