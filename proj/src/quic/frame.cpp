#include "quictun/quic/frame.hpp"

namespace quictun::quic {

namespace {

[[noreturn]] void malformed(std::uint64_t type, const std::string& what)
{
    throw TransportError(TransportErrorCode::frame_encoding_error, what, type);
}

template <class... Ts>
struct Overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

AckFrame parse_ack(BufferReader& r, std::uint64_t type)
{
    AckFrame f;
    auto largest = r.varint();
    f.ack_delay = r.varint();
    auto range_count = r.varint();
    auto first = r.varint();
    if (first > largest) malformed(type, "ACK first range underflows");
    f.ranges.push_back({largest - first, largest});
    auto smallest = largest - first;
    if (range_count > 4096) malformed(type, "too many ACK ranges");
    for (std::uint64_t i = 0; i < range_count; ++i) {
        auto gap = r.varint();
        auto len = r.varint();
        if (smallest < gap + 2) malformed(type, "ACK gap underflows");
        auto hi = smallest - gap - 2;
        if (hi < len) malformed(type, "ACK range underflows");
        f.ranges.push_back({hi - len, hi});
        smallest = hi - len;
    }
    if (type == frame_type::ack_ecn) {
        r.varint();
        r.varint();
        r.varint();
    }
    return f;
}

}  // namespace

bool is_ack_eliciting(std::uint64_t type)
{
    return type != frame_type::padding && type != frame_type::ack && type != frame_type::ack_ecn &&
           type != frame_type::connection_close && type != frame_type::connection_close_app;
}

std::size_t stream_frame_overhead(StreamId id, std::uint64_t offset, std::size_t length)
{
    return 1 + varint_size(id) + (offset ? varint_size(offset) : 0) + varint_size(length);
}

std::size_t crypto_frame_overhead(std::uint64_t offset, std::size_t length)
{
    return 1 + varint_size(offset) + varint_size(length);
}

Frame parse_frame(BufferReader& r, std::uint64_t& type)
{
    type = r.varint();
    try {
        if (type >= frame_type::stream && type <= 0x0f) {
            StreamFrame f;
            f.stream_id = r.varint();
            if (type & 0x04) f.offset = r.varint();
            std::size_t len = (type & 0x02) ? r.varint() : r.remaining();
            f.data = r.bytes(len);
            f.fin = (type & 0x01) != 0;
            if (f.offset + f.data.size() > kVarintMax) malformed(type, "stream offset overflow");
            return f;
        }
        switch (type) {
        case frame_type::padding: {
            PaddingFrame p;
            while (!r.empty() && r.rest()[0] == 0) {
                r.skip(1);
                ++p.length;
            }
            return p;
        }
        case frame_type::ping: return PingFrame{};
        case frame_type::ack:
        case frame_type::ack_ecn: return parse_ack(r, type);
        case frame_type::reset_stream: {
            ResetStreamFrame f{};
            f.stream_id = r.varint();
            f.error_code = r.varint();
            f.final_size = r.varint();
            return f;
        }
        case frame_type::stop_sending: {
            StopSendingFrame f{};
            f.stream_id = r.varint();
            f.error_code = r.varint();
            return f;
        }
        case frame_type::crypto: {
            CryptoFrame f{};
            f.offset = r.varint();
            f.data = r.bytes(r.varint());
            return f;
        }
        case frame_type::new_token: {
            NewTokenFrame f;
            f.token = r.bytes(r.varint());
            if (f.token.empty()) malformed(type, "empty NEW_TOKEN");
            return f;
        }
        case frame_type::max_data: return MaxDataFrame{r.varint()};
        case frame_type::max_stream_data: {
            MaxStreamDataFrame f{};
            f.stream_id = r.varint();
            f.maximum = r.varint();
            return f;
        }
        case frame_type::max_streams_bidi:
        case frame_type::max_streams_uni: {
            MaxStreamsFrame f{type == frame_type::max_streams_bidi, r.varint()};
            if (f.maximum > (1ULL << 60)) malformed(type, "MAX_STREAMS above 2^60");
            return f;
        }
        case frame_type::data_blocked: return DataBlockedFrame{r.varint()};
        case frame_type::stream_data_blocked: {
            StreamDataBlockedFrame f{};
            f.stream_id = r.varint();
            f.limit = r.varint();
            return f;
        }
        case frame_type::streams_blocked_bidi:
        case frame_type::streams_blocked_uni:
            return StreamsBlockedFrame{type == frame_type::streams_blocked_bidi, r.varint()};
        case frame_type::new_connection_id: {
            NewConnectionIdFrame f{};
            f.sequence = r.varint();
            f.retire_prior_to = r.varint();
            auto len = r.u8();
            if (len < 1 || len > 20) malformed(type, "bad NEW_CONNECTION_ID length");
            f.cid = ConnectionId(r.bytes(len));
            auto token = r.bytes(16);
            std::copy(token.begin(), token.end(), f.reset_token.begin());
            if (f.retire_prior_to > f.sequence) malformed(type, "retire_prior_to above sequence");
            return f;
        }
        case frame_type::retire_connection_id: return RetireConnectionIdFrame{r.varint()};
        case frame_type::path_challenge:
        case frame_type::path_response: {
            std::array<std::uint8_t, 8> data{};
            auto d = r.bytes(8);
            std::copy(d.begin(), d.end(), data.begin());
            if (type == frame_type::path_challenge) return PathChallengeFrame{data};
            return PathResponseFrame{data};
        }
        case frame_type::connection_close:
        case frame_type::connection_close_app: {
            ConnectionCloseFrame f;
            f.application = type == frame_type::connection_close_app;
            f.error_code = r.varint();
            if (!f.application) f.frame_type = r.varint();
            auto reason = r.bytes(r.varint());
            f.reason.assign(reason.begin(), reason.end());
            return f;
        }
        case frame_type::handshake_done: return HandshakeDoneFrame{};
        default: malformed(type, "unknown frame type");
        }
    } catch (const DecodeError&) {
        malformed(type, "truncated frame");
    }
}

void write_frame(BufferWriter& w, const Frame& frame)
{
    std::visit(Overloaded{
                   [&](const PaddingFrame& f) { w.zeros(f.length); },
                   [&](const PingFrame&) { w.varint(frame_type::ping); },
                   [&](const AckFrame& f) {
                       w.varint(frame_type::ack);
                       w.varint(f.ranges.front().largest);
                       w.varint(f.ack_delay);
                       w.varint(f.ranges.size() - 1);
                       w.varint(f.ranges.front().largest - f.ranges.front().smallest);
                       for (std::size_t i = 1; i < f.ranges.size(); ++i) {
                           w.varint(f.ranges[i - 1].smallest - f.ranges[i].largest - 2);
                           w.varint(f.ranges[i].largest - f.ranges[i].smallest);
                       }
                   },
                   [&](const ResetStreamFrame& f) {
                       w.varint(frame_type::reset_stream);
                       w.varint(f.stream_id);
                       w.varint(f.error_code);
                       w.varint(f.final_size);
                   },
                   [&](const StopSendingFrame& f) {
                       w.varint(frame_type::stop_sending);
                       w.varint(f.stream_id);
                       w.varint(f.error_code);
                   },
                   [&](const CryptoFrame& f) {
                       w.varint(frame_type::crypto);
                       w.varint(f.offset);
                       w.varint(f.data.size());
                       w.bytes(f.data);
                   },
                   [&](const NewTokenFrame& f) {
                       w.varint(frame_type::new_token);
                       w.varint(f.token.size());
                       w.bytes(f.token);
                   },
                   [&](const StreamFrame& f) {
                       std::uint64_t type = frame_type::stream | 0x02;
                       if (f.offset) type |= 0x04;
                       if (f.fin) type |= 0x01;
                       w.varint(type);
                       w.varint(f.stream_id);
                       if (f.offset) w.varint(f.offset);
                       w.varint(f.data.size());
                       w.bytes(f.data);
                   },
                   [&](const MaxDataFrame& f) {
                       w.varint(frame_type::max_data);
                       w.varint(f.maximum);
                   },
                   [&](const MaxStreamDataFrame& f) {
                       w.varint(frame_type::max_stream_data);
                       w.varint(f.stream_id);
                       w.varint(f.maximum);
                   },
                   [&](const MaxStreamsFrame& f) {
                       w.varint(f.bidirectional ? frame_type::max_streams_bidi : frame_type::max_streams_uni);
                       w.varint(f.maximum);
                   },
                   [&](const DataBlockedFrame& f) {
                       w.varint(frame_type::data_blocked);
                       w.varint(f.limit);
                   },
                   [&](const StreamDataBlockedFrame& f) {
                       w.varint(frame_type::stream_data_blocked);
                       w.varint(f.stream_id);
                       w.varint(f.limit);
                   },
                   [&](const StreamsBlockedFrame& f) {
                       w.varint(f.bidirectional ? frame_type::streams_blocked_bidi : frame_type::streams_blocked_uni);
                       w.varint(f.limit);
                   },
                   [&](const NewConnectionIdFrame& f) {
                       w.varint(frame_type::new_connection_id);
                       w.varint(f.sequence);
                       w.varint(f.retire_prior_to);
                       w.u8(static_cast<std::uint8_t>(f.cid.size()));
                       w.bytes(f.cid.view());
                       w.bytes(f.reset_token);
                   },
                   [&](const RetireConnectionIdFrame& f) {
                       w.varint(frame_type::retire_connection_id);
                       w.varint(f.sequence);
                   },
                   [&](const PathChallengeFrame& f) {
                       w.varint(frame_type::path_challenge);
                       w.bytes(f.data);
                   },
                   [&](const PathResponseFrame& f) {
                       w.varint(frame_type::path_response);
                       w.bytes(f.data);
                   },
                   [&](const ConnectionCloseFrame& f) {
                       w.varint(f.application ? frame_type::connection_close_app : frame_type::connection_close);
                       w.varint(f.error_code);
                       if (!f.application) w.varint(f.frame_type);
                       w.varint(f.reason.size());
                       w.bytes(as_bytes(f.reason));
                   },
                   [&](const HandshakeDoneFrame&) { w.varint(frame_type::handshake_done); },
               },
               frame);
}

}  // namespace quictun::quic
