#include "quictun/netem/engine.hpp"

#include <algorithm>

namespace quictun::netem {

using namespace std::chrono_literals;

double loss_rate_percent(const PathStats& stats)
{
    if (stats.n_sent == 0) throw UndefinedStatistic("loss rate undefined: no datagrams sent");
    return static_cast<double>(stats.n_lost) / static_cast<double>(stats.n_sent) * 100.0;
}

double out_of_order_percent(const PathStats& stats)
{
    if (stats.n_forwarded == 0) throw UndefinedStatistic("out-of-order rate undefined: no datagrams forwarded");
    return static_cast<double>(stats.n_out_of_order) / static_cast<double>(stats.n_forwarded) * 100.0;
}

ImpairmentEngine::ImpairmentEngine(const ImpairmentProfile& profile)
    : profile_(profile), reorder_extra_(profile.effective_reorder_extra_delay()), rng_(profile.seed)
{
    profile_.validate();
    if (auto rate = profile_.rate_limit_bytes_per_sec) {
        auto per_byte = std::chrono::duration<double>(1.0 / static_cast<double>(*rate));
        tau_ = std::chrono::duration_cast<Duration>(per_byte * static_cast<double>(profile_.bucket_depth_bytes()));
        // Shaping queue holds at most ~200 ms of traffic beyond the burst; the rest is tail-dropped.
        queue_limit_ = std::max<Duration>(200ms, tau_);
    }
}

double ImpairmentEngine::uniform()
{
    // 53 random bits -> [0, 1), independent of the library's distribution code.
    return static_cast<double>(rng_() >> 11) * 0x1.0p-53;
}

Decision ImpairmentEngine::decide(std::size_t size, TimePoint now)
{
    Decision d;
    d.seq = next_seq_++;
    ++stats_.n_sent;
    if (uniform() < profile_.loss_rate) {
        d.drop = true;
        ++stats_.n_lost;
        return d;
    }
    auto departure = now;
    if (auto rate = profile_.rate_limit_bytes_per_sec) {
        auto tat = std::max(tat_.value_or(now), now);
        departure = std::max(now, tat - tau_);
        if (departure - now > queue_limit_) {
            d.drop = true;
            ++stats_.n_lost;
            ++stats_.n_rate_dropped;
            return d;
        }
        auto cost = std::chrono::duration<double>(static_cast<double>(size) / static_cast<double>(*rate));
        tat_ = tat + std::chrono::duration_cast<Duration>(cost);
    }
    if (profile_.reorder_rate > 0.0 && uniform() < profile_.reorder_rate) d.reordered = true;
    d.release = departure + profile_.delay + (d.reordered ? reorder_extra_ : Duration::zero());
    ++stats_.n_forwarded;
    stats_.bytes_forwarded += size;
    return d;
}

void ImpairmentEngine::on_delivered(const Decision& d)
{
    if (max_delivered_ && d.seq < *max_delivered_) ++stats_.n_out_of_order;
    max_delivered_ = std::max(max_delivered_.value_or(0), d.seq);
}

void SequenceTap::on_datagram(ByteView data)
{
    if (data.size() < 8) return;
    std::uint64_t seq = 0;
    for (int i = 0; i < 8; ++i) seq = (seq << 8) | data[i];
    ++received_;
    if (max_seen_ && seq < *max_seen_) ++out_of_order_;
    max_seen_ = std::max(max_seen_.value_or(0), seq);
}

PathStats SequenceTap::stats() const
{
    PathStats s;
    s.n_forwarded = received_;
    s.n_out_of_order = out_of_order_;
    return s;
}

Bytes make_sequenced_datagram(std::uint64_t seq, std::size_t size)
{
    Bytes b(std::max<std::size_t>(size, 8), 0x5a);
    for (int i = 7; i >= 0; --i) {
        b[i] = static_cast<std::uint8_t>(seq);
        seq >>= 8;
    }
    return b;
}

}  // namespace quictun::netem
