#include "quictun/common/log.hpp"

#include <cstdlib>
#include <string_view>

#include <spdlog/sinks/stdout_color_sinks.h>

namespace quictun {

namespace {

std::shared_ptr<spdlog::logger> make_logger()
{
    auto logger = spdlog::stderr_color_mt("quic-tun");
    logger->set_pattern("%Y-%m-%dT%H:%M:%S.%e %^%l%$ [%n] %v");
    auto level = spdlog::level::info;
    bool unknown = false;
    if (const char* env = std::getenv("QUIC_TUN_LOG"); env && *env) {
        level = spdlog::level::from_str(env);
        // from_str maps anything it does not know to off
        if (level == spdlog::level::off && std::string_view(env) != "off") {
            level = spdlog::level::info;
            unknown = true;
        }
    }
    logger->set_level(level);
    if (unknown) logger->warn("ignoring unknown QUIC_TUN_LOG level '{}'", std::getenv("QUIC_TUN_LOG"));
    return logger;
}

}  // namespace

spdlog::logger& log()
{
    static std::shared_ptr<spdlog::logger> logger = make_logger();
    return *logger;
}

void set_log_level(spdlog::level::level_enum level)
{
    log().set_level(level);
}

}  // namespace quictun
