#include "latcomp/log.hpp"

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

namespace latcomp {

std::shared_ptr<spdlog::logger> logger() {
  static std::shared_ptr<spdlog::logger> instance = [] {
    auto existing = spdlog::get("latcomp");
    if (existing) return existing;
    auto created = spdlog::stderr_color_mt("latcomp");
    created->set_pattern("[%l] %v");
    return created;
  }();
  return instance;
}

}  // namespace latcomp
