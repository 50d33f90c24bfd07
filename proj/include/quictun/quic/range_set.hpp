#pragma once

#include <cstdint>
#include <map>
#include <optional>

namespace quictun::quic {

// Set of disjoint half-open intervals [start, end) over uint64.
class RangeSet {
public:
    using Map = std::map<std::uint64_t, std::uint64_t>;

    void insert(std::uint64_t start, std::uint64_t end);
    void erase(std::uint64_t start, std::uint64_t end);
    bool contains(std::uint64_t value) const;
    // True if [start, end) is entirely covered.
    bool covers(std::uint64_t start, std::uint64_t end) const;
    // End of the range that starts at or covers `from`, or `from` if uncovered.
    std::uint64_t contiguous_end(std::uint64_t from) const;
    // First uncovered sub-interval of [start, end), if any.
    std::optional<std::pair<std::uint64_t, std::uint64_t>> first_gap(std::uint64_t start, std::uint64_t end) const;

    bool empty() const { return ranges_.empty(); }
    std::size_t size() const { return ranges_.size(); }
    std::uint64_t min() const { return ranges_.begin()->first; }
    std::uint64_t max() const { return std::prev(ranges_.end())->second; }  // exclusive
    void clear() { ranges_.clear(); }
    // Drops the lowest ranges until at most `n` remain.
    void keep_highest(std::size_t n);

    const Map& ranges() const { return ranges_; }
    Map::const_iterator begin() const { return ranges_.begin(); }
    Map::const_iterator end() const { return ranges_.end(); }

private:
    Map ranges_;
};

}  // namespace quictun::quic
