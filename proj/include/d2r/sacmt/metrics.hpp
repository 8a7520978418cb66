#pragma once

#include "d2r/sacmt/trainer.hpp"

#include <cstdio>
#include <ostream>
#include <string>

namespace d2r::sacmt {

inline constexpr const char* kMetricsHeader =
    "step,task_id,success_rate,actor_loss,critic_loss,alpha,tau,w,mean_effective_modules,config_hash";

/// One row per task at an evaluation point. Losses are means over the train
/// steps since the previous evaluation.
inline void write_metrics_rows(std::ostream& os, long step, const EvalResult& eval, const MetricAccumulator& acc,
                               const TaskTemperatures& temps, const std::string& hash) {
  char buf[256];
  for (std::size_t t = 0; t < eval.episodes.size(); ++t) {
    std::snprintf(buf, sizeof buf, "%ld,%zu,%.6f,%.9g,%.9g,%.9g,%.9g,%.9g,%.6f,", step, t, eval.success_rate(t),
                  acc.mean_actor(t), acc.mean_critic(t), temps.alpha[t], temps.tau[t], temps.weight[t],
                  eval.mean_modules[t]);
    os << buf << hash << '\n';
  }
  os.flush();
}

}  // namespace d2r::sacmt
