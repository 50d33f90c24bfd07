#include "quictun/quic/range_set.hpp"

#include <algorithm>
#include <iterator>

namespace quictun::quic {

void RangeSet::insert(std::uint64_t start, std::uint64_t end)
{
    if (start >= end) return;
    auto it = ranges_.upper_bound(start);
    if (it != ranges_.begin()) {
        auto prev = std::prev(it);
        if (prev->second >= start) {
            if (prev->second >= end) return;
            start = prev->first;
            it = prev;
        }
    }
    while (it != ranges_.end() && it->first <= end) {
        end = std::max(end, it->second);
        it = ranges_.erase(it);
    }
    ranges_.emplace_hint(it, start, end);
}

void RangeSet::erase(std::uint64_t start, std::uint64_t end)
{
    if (start >= end) return;
    auto it = ranges_.upper_bound(start);
    if (it != ranges_.begin()) --it;
    while (it != ranges_.end() && it->first < end) {
        auto [s, e] = *it;
        if (e <= start) {
            ++it;
            continue;
        }
        it = ranges_.erase(it);
        if (s < start) ranges_.emplace(s, start);
        if (e > end) {
            ranges_.emplace(end, e);
            break;
        }
    }
}

bool RangeSet::contains(std::uint64_t value) const
{
    auto it = ranges_.upper_bound(value);
    if (it == ranges_.begin()) return false;
    --it;
    return value < it->second;
}

bool RangeSet::covers(std::uint64_t start, std::uint64_t end) const
{
    if (start >= end) return true;
    auto it = ranges_.upper_bound(start);
    if (it == ranges_.begin()) return false;
    --it;
    return it->first <= start && it->second >= end;
}

std::uint64_t RangeSet::contiguous_end(std::uint64_t from) const
{
    auto it = ranges_.upper_bound(from);
    if (it == ranges_.begin()) return from;
    --it;
    return it->second > from ? it->second : from;
}

std::optional<std::pair<std::uint64_t, std::uint64_t>> RangeSet::first_gap(std::uint64_t start,
                                                                           std::uint64_t end) const
{
    auto pos = start;
    while (pos < end) {
        auto covered = contiguous_end(pos);
        if (covered == pos) {
            auto next = ranges_.upper_bound(pos);
            auto gap_end = next == ranges_.end() ? end : std::min(end, next->first);
            return std::make_pair(pos, gap_end);
        }
        pos = covered;
    }
    return std::nullopt;
}

void RangeSet::keep_highest(std::size_t n)
{
    while (ranges_.size() > n) ranges_.erase(ranges_.begin());
}

}  // namespace quictun::quic
