#pragma once

#include <algorithm>
#include <optional>

#include "quictun/quic/types.hpp"

namespace quictun::quic {

inline constexpr Duration kInitialRtt = std::chrono::milliseconds(333);
inline constexpr Duration kGranularity = std::chrono::milliseconds(1);
inline constexpr std::uint64_t kInitialPacketThreshold = 3;
inline constexpr std::uint64_t kPersistentCongestionThreshold = 3;

class RttEstimator {
public:
    void update(Duration latest, Duration ack_delay, bool handshake_confirmed, Duration max_ack_delay);

    bool has_sample() const { return has_sample_; }
    Duration latest() const { return latest_; }
    Duration smoothed() const { return smoothed_; }
    Duration rttvar() const { return rttvar_; }
    Duration min() const { return min_; }
    // srtt + max(4 * rttvar, granularity), without max_ack_delay or backoff.
    Duration pto_base() const { return smoothed_ + std::max(4 * rttvar_, kGranularity); }

private:
    bool has_sample_ = false;
    Duration latest_ = kInitialRtt;
    Duration smoothed_ = kInitialRtt;
    Duration rttvar_ = kInitialRtt / 2;
    Duration min_ = Duration::zero();
};

// NewReno congestion controller with undo of spurious congestion events.
class NewReno {
public:
    explicit NewReno(std::size_t max_datagram_size);

    void set_max_datagram_size(std::size_t size);
    std::uint64_t window() const { return cwnd_; }
    std::uint64_t ssthresh() const { return ssthresh_; }
    std::uint64_t bytes_in_flight() const { return in_flight_; }
    bool can_send(std::size_t bytes) const { return in_flight_ + bytes <= cwnd_; }

    void on_sent(std::size_t bytes) { in_flight_ += bytes; }
    // Removes bytes from flight without congestion response (acked, lost or discarded).
    void remove_in_flight(std::size_t bytes) { in_flight_ -= std::min<std::uint64_t>(in_flight_, bytes); }
    void on_acked(std::size_t bytes, TimePoint time_sent, bool app_limited);
    void on_congestion_event(TimePoint time_sent, TimePoint now);
    void on_persistent_congestion();
    // Called when every packet declared lost in the latest congestion event was acked after all.
    void undo_last_congestion_event();
    bool in_recovery(TimePoint time_sent) const { return recovery_start_ && time_sent <= *recovery_start_; }

private:
    std::uint64_t mds_;
    std::uint64_t cwnd_;
    std::uint64_t ssthresh_ = UINT64_MAX;
    std::uint64_t in_flight_ = 0;
    std::uint64_t bytes_acked_ca_ = 0;
    std::optional<TimePoint> recovery_start_;
    struct Saved {
        std::uint64_t cwnd;
        std::uint64_t ssthresh;
        std::optional<TimePoint> recovery_start;
    };
    std::optional<Saved> before_last_event_;
};

// Token-bucket pacer: rate = 1.25 * cwnd / srtt, burst a few datagrams.
class Pacer {
public:
    // Returns the earliest time a datagram of `bytes` may leave; `now` if immediately.
    TimePoint next_send_time(TimePoint now, std::size_t bytes, std::uint64_t cwnd, Duration srtt,
                             std::size_t mds);
    void on_sent(std::size_t bytes);

private:
    void refill(TimePoint now, std::uint64_t cwnd, Duration srtt, std::size_t mds);
    double tokens_ = 0;
    double capacity_ = 0;
    std::optional<TimePoint> last_;
};

}  // namespace quictun::quic
