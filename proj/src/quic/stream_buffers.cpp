#include "quictun/quic/stream_buffers.hpp"

#include <algorithm>
#include <cstring>

namespace quictun::quic {

void SendBuffer::append(ByteView data)
{
    data_.insert(data_.end(), data.begin(), data.end());
    write_offset_ += data.size();
}

std::optional<std::pair<std::uint64_t, std::uint64_t>> SendBuffer::take_retransmit(std::uint64_t max_len)
{
    while (!lost_.empty()) {
        auto [start, end] = *lost_.begin();
        auto gap = acked_.first_gap(start, end);
        if (!gap) {
            lost_.erase(start, end);
            continue;
        }
        auto len = std::min(max_len, gap->second - gap->first);
        lost_.erase(start, gap->first + len);
        return std::make_pair(gap->first, len);
    }
    return std::nullopt;
}

std::pair<std::uint64_t, std::uint64_t> SendBuffer::take_new(std::uint64_t max_len)
{
    auto len = std::min(max_len, write_offset_ - next_new_);
    auto off = next_new_;
    next_new_ += len;
    return {off, len};
}

ByteView SendBuffer::slice(std::uint64_t offset, std::uint64_t length) const
{
    return ByteView(data_.data() + (offset - base_), length);
}

void SendBuffer::on_ack(std::uint64_t offset, std::uint64_t length)
{
    acked_.insert(offset, offset + length);
    compact();
}

void SendBuffer::on_lost(std::uint64_t offset, std::uint64_t length)
{
    auto pos = offset;
    auto end = offset + length;
    while (auto gap = acked_.first_gap(pos, end)) {
        lost_.insert(gap->first, gap->second);
        pos = gap->second;
    }
}

void SendBuffer::requeue_unacked()
{
    on_lost(acked_prefix(), next_new_ - acked_prefix());
}

void SendBuffer::compact()
{
    auto prefix = acked_prefix();
    if (prefix <= base_) return;
    auto drop = prefix - base_;
    // Erase lazily: only when at least half the buffer is dead weight.
    if (drop >= 64 * 1024 || drop * 2 >= data_.size()) {
        data_.erase(data_.begin(), data_.begin() + static_cast<std::ptrdiff_t>(drop));
        base_ = prefix;
    }
}

std::uint64_t RecvBuffer::insert(std::uint64_t offset, ByteView data)
{
    auto end = offset + data.size();
    std::uint64_t fresh = end > highest_ ? end - highest_ : 0;
    highest_ = std::max(highest_, end);
    if (end <= contiguous_ || data.empty()) return fresh;
    if (offset <= contiguous_) {
        auto skip = contiguous_ - offset;
        ready_.insert(ready_.end(), data.begin() + static_cast<std::ptrdiff_t>(skip), data.end());
        contiguous_ = end;
        drain_pending();
        return fresh;
    }
    auto it = pending_.find(offset);
    if (it == pending_.end() || it->second.size() < data.size()) {
        pending_[offset] = Bytes(data.begin(), data.end());
    }
    return fresh;
}

void RecvBuffer::drain_pending()
{
    auto it = pending_.begin();
    while (it != pending_.end() && it->first <= contiguous_) {
        auto end = it->first + it->second.size();
        if (end > contiguous_) {
            auto skip = contiguous_ - it->first;
            ready_.insert(ready_.end(), it->second.begin() + static_cast<std::ptrdiff_t>(skip), it->second.end());
            contiguous_ = end;
        }
        it = pending_.erase(it);
    }
}

std::size_t RecvBuffer::read(MutableByteView out)
{
    auto n = std::min(out.size(), readable());
    if (n == 0) return 0;
    std::memcpy(out.data(), ready_.data() + ready_pos_, n);
    ready_pos_ += n;
    read_offset_ += n;
    if (ready_pos_ == ready_.size()) {
        ready_.clear();
        ready_pos_ = 0;
    } else if (ready_pos_ >= 64 * 1024 && ready_pos_ * 2 >= ready_.size()) {
        ready_.erase(ready_.begin(), ready_.begin() + static_cast<std::ptrdiff_t>(ready_pos_));
        ready_pos_ = 0;
    }
    return n;
}

}  // namespace quictun::quic
