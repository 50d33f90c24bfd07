#pragma once

#include <chrono>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace quictun::netem {

using Duration = std::chrono::steady_clock::duration;

struct ImpairmentProfile {
    double loss_rate = 0.0;     // [0, 1]
    Duration delay{0};          // one-way, added to every forwarded datagram
    double reorder_rate = 0.0;  // [0, 1], applied to datagrams that survive loss
    std::optional<Duration> reorder_extra_delay;
    std::optional<std::uint64_t> rate_limit_bytes_per_sec;
    std::uint64_t seed = 0;

    // max(10 ms, 3 x delay) unless set explicitly.
    Duration effective_reorder_extra_delay() const;
    // Token bucket depth: 2 x rate x 100 ms.
    std::uint64_t bucket_depth_bytes() const;
    // Throws ProfileError on out-of-range values.
    void validate() const;

    friend bool operator==(const ImpairmentProfile&, const ImpairmentProfile&) = default;
};

class ProfileError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Flat key=value text; '#' starts a comment. Keys: loss_rate, delay_ms, reorder_rate,
// reorder_extra_delay_ms, rate_limit_bytes_per_sec (0 = unlimited), seed.
// Unknown or repeated keys and malformed values are errors.
ImpairmentProfile parse_profile(std::string_view text);
ImpairmentProfile load_profile(const std::filesystem::path& path);
std::string format_profile(const ImpairmentProfile& profile);

}  // namespace quictun::netem
