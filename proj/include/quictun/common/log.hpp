#pragma once

#include <memory>

#include <spdlog/spdlog.h>

namespace quictun {

// Process-wide logger writing to stderr. The level comes from QUIC_TUN_LOG
// (trace, debug, info, warn, error, critical, off); default is info.
spdlog::logger& log();

void set_log_level(spdlog::level::level_enum level);

}  // namespace quictun
