#include "quictun/quic/recovery.hpp"

#include <cmath>

namespace quictun::quic {

void RttEstimator::update(Duration latest, Duration ack_delay, bool handshake_confirmed, Duration max_ack_delay)
{
    latest_ = latest;
    if (!has_sample_) {
        has_sample_ = true;
        min_ = latest;
        smoothed_ = latest;
        rttvar_ = latest / 2;
        return;
    }
    min_ = std::min(min_, latest);
    if (handshake_confirmed) ack_delay = std::min(ack_delay, max_ack_delay);
    auto adjusted = latest;
    if (latest >= min_ + ack_delay) adjusted = latest - ack_delay;
    auto diff = smoothed_ > adjusted ? smoothed_ - adjusted : adjusted - smoothed_;
    rttvar_ = (3 * rttvar_ + diff) / 4;
    smoothed_ = (7 * smoothed_ + adjusted) / 8;
}

NewReno::NewReno(std::size_t max_datagram_size) : mds_(max_datagram_size)
{
    cwnd_ = std::min<std::uint64_t>(10 * mds_, std::max<std::uint64_t>(14720, 2 * mds_));
}

void NewReno::set_max_datagram_size(std::size_t size)
{
    mds_ = size;
    cwnd_ = std::max<std::uint64_t>(cwnd_, 2 * mds_);
}

void NewReno::on_acked(std::size_t bytes, TimePoint time_sent, bool app_limited)
{
    if (in_recovery(time_sent) || app_limited) return;
    if (cwnd_ < ssthresh_) {
        cwnd_ += bytes;
        return;
    }
    bytes_acked_ca_ += bytes;
    if (bytes_acked_ca_ >= cwnd_) {
        bytes_acked_ca_ -= cwnd_;
        cwnd_ += mds_;
    }
}

void NewReno::on_congestion_event(TimePoint time_sent, TimePoint now)
{
    if (in_recovery(time_sent)) return;
    before_last_event_ = Saved{cwnd_, ssthresh_, recovery_start_};
    recovery_start_ = now;
    ssthresh_ = std::max<std::uint64_t>(cwnd_ / 2, 2 * mds_);
    cwnd_ = ssthresh_;
    bytes_acked_ca_ = 0;
}

void NewReno::on_persistent_congestion()
{
    cwnd_ = 2 * mds_;
    recovery_start_.reset();
    before_last_event_.reset();
}

void NewReno::undo_last_congestion_event()
{
    if (!before_last_event_) return;
    cwnd_ = std::max(cwnd_, before_last_event_->cwnd);
    ssthresh_ = before_last_event_->ssthresh;
    recovery_start_ = before_last_event_->recovery_start;
    before_last_event_.reset();
}

void Pacer::refill(TimePoint now, std::uint64_t cwnd, Duration srtt, std::size_t mds)
{
    using namespace std::chrono;
    double srtt_s = std::max(duration<double>(srtt).count(), 1e-6);
    // Burst capacity covers ~2 ms of sending at the paced rate, within [10, 64] datagrams.
    capacity_ = std::clamp(static_cast<double>(cwnd) * 0.002 / srtt_s, 10.0 * mds, 64.0 * mds);
    if (!last_) {
        tokens_ = capacity_;
        last_ = now;
        return;
    }
    double rate = 1.25 * static_cast<double>(cwnd) / srtt_s;
    double elapsed = duration<double>(now - *last_).count();
    tokens_ = std::min(capacity_, tokens_ + rate * elapsed);
    last_ = now;
}

TimePoint Pacer::next_send_time(TimePoint now, std::size_t bytes, std::uint64_t cwnd, Duration srtt, std::size_t mds)
{
    refill(now, cwnd, srtt, mds);
    if (tokens_ >= static_cast<double>(bytes)) return now;
    using namespace std::chrono;
    double srtt_s = std::max(duration<double>(srtt).count(), 1e-6);
    double rate = 1.25 * static_cast<double>(cwnd) / srtt_s;
    double wait = (static_cast<double>(bytes) - tokens_) / rate;
    return now + duration_cast<Duration>(duration<double>(wait));
}

void Pacer::on_sent(std::size_t bytes)
{
    tokens_ = std::max(0.0, tokens_ - static_cast<double>(bytes));
}

}  // namespace quictun::quic
