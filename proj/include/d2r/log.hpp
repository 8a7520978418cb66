#pragma once

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <memory>

namespace d2r {

/// Shared stderr logger. Verbosity comes from D2R_LOG_LEVEL
/// (trace|debug|info|warn|error|critical|off), default info.
inline spdlog::logger& log() {
  static std::shared_ptr<spdlog::logger> instance = [] {
    auto l = spdlog::stderr_color_mt("d2r");
    l->set_pattern("[%H:%M:%S] [%^%l%$] %v");
    const char* env = std::getenv("D2R_LOG_LEVEL");
    l->set_level(env ? spdlog::level::from_str(env) : spdlog::level::info);
    return l;
  }();
  return *instance;
}

}  // namespace d2r
