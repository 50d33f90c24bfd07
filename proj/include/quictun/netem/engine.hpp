#pragma once

// Deterministic per-datagram impairment decisions. Time is supplied by the
// caller, so identical (profile, seed, arrival sequence) gives identical output.

#include <random>

#include "quictun/common/bytes.hpp"
#include "quictun/netem/profile.hpp"

namespace quictun::netem {

using TimePoint = std::chrono::steady_clock::time_point;

struct PathStats {
    std::uint64_t n_sent = 0;       // datagrams offered to the impairer
    std::uint64_t n_lost = 0;       // dropped (random loss or rate-limiter overflow)
    std::uint64_t n_forwarded = 0;  // scheduled for delivery
    std::uint64_t n_out_of_order = 0;
    std::uint64_t bytes_forwarded = 0;
    std::uint64_t n_rate_dropped = 0;  // subset of n_lost caused by the rate limiter queue

    friend bool operator==(const PathStats&, const PathStats&) = default;
};

class UndefinedStatistic : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

// n_lost / n_sent x 100. Throws UndefinedStatistic when n_sent is 0.
double loss_rate_percent(const PathStats& stats);
// n_out_of_order / n_forwarded x 100. Throws UndefinedStatistic when n_forwarded is 0.
double out_of_order_percent(const PathStats& stats);

struct Decision {
    bool drop = false;
    bool reordered = false;
    TimePoint release{};  // when the datagram leaves the impairer
    std::uint64_t seq = 0;  // arrival index
};

class ImpairmentEngine {
public:
    explicit ImpairmentEngine(const ImpairmentProfile& profile);

    // Decides the fate of the next datagram (arrival order). Arrival times must not decrease.
    Decision decide(std::size_t size, TimePoint now);
    // Records the actual delivery order; counts out-of-order relative to arrival order.
    void on_delivered(const Decision& d);

    const PathStats& stats() const { return stats_; }
    const ImpairmentProfile& profile() const { return profile_; }

private:
    double uniform();

    ImpairmentProfile profile_;
    Duration reorder_extra_;
    std::mt19937_64 rng_;
    PathStats stats_;
    std::uint64_t next_seq_ = 0;
    std::optional<std::uint64_t> max_delivered_;
    // Rate limiter as GCRA: theoretical arrival time and burst tolerance.
    std::optional<TimePoint> tat_;
    Duration tau_{0};
    Duration queue_limit_{0};
};

// Receiving-side counter for test datagrams whose first 8 bytes carry a big-endian
// sequence number. Out of order = lower than the maximum already seen.
class SequenceTap {
public:
    void on_datagram(ByteView data);
    std::uint64_t received() const { return received_; }
    std::uint64_t out_of_order() const { return out_of_order_; }
    // PathStats view with n_forwarded = received.
    PathStats stats() const;

private:
    std::uint64_t received_ = 0;
    std::uint64_t out_of_order_ = 0;
    std::optional<std::uint64_t> max_seen_;
};

// A datagram of `size` bytes (at least 8) starting with `seq`; the rest is filler.
Bytes make_sequenced_datagram(std::uint64_t seq, std::size_t size);

}  // namespace quictun::netem
