#pragma once

#include <array>
#include <variant>
#include <vector>

#include "quictun/quic/types.hpp"

namespace quictun::quic {

namespace frame_type {
inline constexpr std::uint64_t padding = 0x00;
inline constexpr std::uint64_t ping = 0x01;
inline constexpr std::uint64_t ack = 0x02;
inline constexpr std::uint64_t ack_ecn = 0x03;
inline constexpr std::uint64_t reset_stream = 0x04;
inline constexpr std::uint64_t stop_sending = 0x05;
inline constexpr std::uint64_t crypto = 0x06;
inline constexpr std::uint64_t new_token = 0x07;
inline constexpr std::uint64_t stream = 0x08;  // 0x08..0x0f
inline constexpr std::uint64_t max_data = 0x10;
inline constexpr std::uint64_t max_stream_data = 0x11;
inline constexpr std::uint64_t max_streams_bidi = 0x12;
inline constexpr std::uint64_t max_streams_uni = 0x13;
inline constexpr std::uint64_t data_blocked = 0x14;
inline constexpr std::uint64_t stream_data_blocked = 0x15;
inline constexpr std::uint64_t streams_blocked_bidi = 0x16;
inline constexpr std::uint64_t streams_blocked_uni = 0x17;
inline constexpr std::uint64_t new_connection_id = 0x18;
inline constexpr std::uint64_t retire_connection_id = 0x19;
inline constexpr std::uint64_t path_challenge = 0x1a;
inline constexpr std::uint64_t path_response = 0x1b;
inline constexpr std::uint64_t connection_close = 0x1c;
inline constexpr std::uint64_t connection_close_app = 0x1d;
inline constexpr std::uint64_t handshake_done = 0x1e;
}  // namespace frame_type

struct PaddingFrame {
    std::size_t length = 1;
};
struct PingFrame {};

// Inclusive packet-number range.
struct AckRange {
    std::uint64_t smallest;
    std::uint64_t largest;
};

struct AckFrame {
    std::uint64_t ack_delay = 0;     // encoded (before exponent scaling)
    std::vector<AckRange> ranges;    // descending, non-overlapping; ranges[0].largest is the largest acked
    std::uint64_t largest() const { return ranges.front().largest; }
};

struct ResetStreamFrame {
    StreamId stream_id;
    std::uint64_t error_code;
    std::uint64_t final_size;
};

struct StopSendingFrame {
    StreamId stream_id;
    std::uint64_t error_code;
};

struct CryptoFrame {
    std::uint64_t offset;
    ByteView data;
};

struct NewTokenFrame {
    ByteView token;
};

struct StreamFrame {
    StreamId stream_id;
    std::uint64_t offset = 0;
    ByteView data;
    bool fin = false;
};

struct MaxDataFrame {
    std::uint64_t maximum;
};
struct MaxStreamDataFrame {
    StreamId stream_id;
    std::uint64_t maximum;
};
struct MaxStreamsFrame {
    bool bidirectional;
    std::uint64_t maximum;
};
struct DataBlockedFrame {
    std::uint64_t limit;
};
struct StreamDataBlockedFrame {
    StreamId stream_id;
    std::uint64_t limit;
};
struct StreamsBlockedFrame {
    bool bidirectional;
    std::uint64_t limit;
};
struct NewConnectionIdFrame {
    std::uint64_t sequence;
    std::uint64_t retire_prior_to;
    ConnectionId cid;
    std::array<std::uint8_t, 16> reset_token;
};
struct RetireConnectionIdFrame {
    std::uint64_t sequence;
};
struct PathChallengeFrame {
    std::array<std::uint8_t, 8> data;
};
struct PathResponseFrame {
    std::array<std::uint8_t, 8> data;
};
struct ConnectionCloseFrame {
    bool application = false;
    std::uint64_t error_code = 0;
    std::uint64_t frame_type = 0;  // transport variant only
    std::string reason;
};
struct HandshakeDoneFrame {};

using Frame = std::variant<PaddingFrame, PingFrame, AckFrame, ResetStreamFrame, StopSendingFrame, CryptoFrame,
                           NewTokenFrame, StreamFrame, MaxDataFrame, MaxStreamDataFrame, MaxStreamsFrame,
                           DataBlockedFrame, StreamDataBlockedFrame, StreamsBlockedFrame, NewConnectionIdFrame,
                           RetireConnectionIdFrame, PathChallengeFrame, PathResponseFrame, ConnectionCloseFrame,
                           HandshakeDoneFrame>;

// Parses one frame; data views alias the reader's buffer.
// Throws TransportError(frame_encoding_error) on malformed input.
Frame parse_frame(BufferReader& r, std::uint64_t& type_out);
void write_frame(BufferWriter& w, const Frame& frame);

// Whether a frame of `type` elicits an acknowledgement.
bool is_ack_eliciting(std::uint64_t type);

// Encoded size of a STREAM frame header (type, id, offset, explicit length).
std::size_t stream_frame_overhead(StreamId id, std::uint64_t offset, std::size_t length);
std::size_t crypto_frame_overhead(std::uint64_t offset, std::size_t length);

}  // namespace quictun::quic
