#pragma once

#include <map>
#include <optional>

#include "quictun/common/bytes.hpp"
#include "quictun/quic/range_set.hpp"

namespace quictun::quic {

// Outgoing byte stream with retransmission bookkeeping. Data is retained
// until acknowledged; offsets are absolute stream offsets.
class SendBuffer {
public:
    void append(ByteView data);

    std::uint64_t write_offset() const { return write_offset_; }
    // Bytes written past the contiguously acknowledged prefix.
    std::uint64_t unacked_bytes() const { return write_offset_ - acked_prefix(); }
    std::uint64_t next_new_offset() const { return next_new_; }
    bool has_new_data() const { return next_new_ < write_offset_; }
    bool has_retransmit() const { return !lost_.empty(); }
    bool all_acked() const { return acked_prefix() == write_offset_; }

    // Next lost range to resend, at most `max_len` bytes, skipping acked data.
    std::optional<std::pair<std::uint64_t, std::uint64_t>> take_retransmit(std::uint64_t max_len);
    // Next new range of at most `max_len` bytes; advances the new-data cursor.
    std::pair<std::uint64_t, std::uint64_t> take_new(std::uint64_t max_len);
    ByteView slice(std::uint64_t offset, std::uint64_t length) const;

    void on_ack(std::uint64_t offset, std::uint64_t length);
    void on_lost(std::uint64_t offset, std::uint64_t length);
    // Marks every unacknowledged sent byte for retransmission (PTO probes).
    void requeue_unacked();

private:
    std::uint64_t acked_prefix() const { return acked_.contiguous_end(0); }
    void compact();

    Bytes data_;
    std::uint64_t base_ = 0;  // stream offset of data_[0]
    std::uint64_t write_offset_ = 0;
    std::uint64_t next_new_ = 0;
    RangeSet acked_;
    RangeSet lost_;
};

// Incoming byte stream reassembly.
class RecvBuffer {
public:
    // Returns the number of previously unseen bytes at or beyond the highest offset
    // (the flow-control credit consumed).
    std::uint64_t insert(std::uint64_t offset, ByteView data);
    std::size_t read(MutableByteView out);

    std::uint64_t read_offset() const { return read_offset_; }
    std::uint64_t highest_offset() const { return highest_; }
    std::size_t readable() const { return ready_.size() - ready_pos_; }

private:
    void drain_pending();

    Bytes ready_;
    std::size_t ready_pos_ = 0;
    std::uint64_t read_offset_ = 0;    // offset of ready_[ready_pos_]
    std::uint64_t contiguous_ = 0;     // end of in-order data
    std::uint64_t highest_ = 0;
    std::map<std::uint64_t, Bytes> pending_;
};

}  // namespace quictun::quic
