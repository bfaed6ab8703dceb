#pragma once

// Shared stderr logger. Verbosity comes from DIFFGNSS_LOG
// (trace, debug, info, warn, error, off); default warn.

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <memory>

namespace diffgnss {

inline spdlog::logger& logger() {
  static const std::shared_ptr<spdlog::logger> instance = [] {
    auto l = spdlog::stderr_color_mt("diffgnss");
    l->set_pattern("[%l] %v");
    const char* env = std::getenv("DIFFGNSS_LOG");
    l->set_level(env ? spdlog::level::from_str(env) : spdlog::level::warn);
    return l;
  }();
  return *instance;
}

}  // namespace diffgnss
