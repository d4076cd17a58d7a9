#pragma once

#include <memory>

#include <spdlog/logger.h>

namespace latcomp {

// Library-wide logger named "latcomp" (stderr by default). Callers may add
// sinks or change the level.
std::shared_ptr<spdlog::logger> logger();

}  // namespace latcomp
