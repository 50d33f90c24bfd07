#include "quictun/quic/transport_params.hpp"

#include <set>

namespace quictun::quic {

namespace {

namespace id {
constexpr std::uint64_t original_destination_connection_id = 0x00;
constexpr std::uint64_t max_idle_timeout = 0x01;
constexpr std::uint64_t stateless_reset_token = 0x02;
constexpr std::uint64_t max_udp_payload_size = 0x03;
constexpr std::uint64_t initial_max_data = 0x04;
constexpr std::uint64_t initial_max_stream_data_bidi_local = 0x05;
constexpr std::uint64_t initial_max_stream_data_bidi_remote = 0x06;
constexpr std::uint64_t initial_max_stream_data_uni = 0x07;
constexpr std::uint64_t initial_max_streams_bidi = 0x08;
constexpr std::uint64_t initial_max_streams_uni = 0x09;
constexpr std::uint64_t ack_delay_exponent = 0x0a;
constexpr std::uint64_t max_ack_delay = 0x0b;
constexpr std::uint64_t disable_active_migration = 0x0c;
constexpr std::uint64_t preferred_address = 0x0d;
constexpr std::uint64_t active_connection_id_limit = 0x0e;
constexpr std::uint64_t initial_source_connection_id = 0x0f;
constexpr std::uint64_t retry_source_connection_id = 0x10;
}  // namespace id

[[noreturn]] void bad(const std::string& what)
{
    throw TransportError(TransportErrorCode::transport_parameter_error, what);
}

void put_int(BufferWriter& w, std::uint64_t key, std::uint64_t value)
{
    w.varint(key);
    w.varint(varint_size(value));
    w.varint(value);
}

void put_bytes(BufferWriter& w, std::uint64_t key, ByteView value)
{
    w.varint(key);
    w.varint(value.size());
    w.bytes(value);
}

std::uint64_t get_int(ByteView value)
{
    BufferReader r(value);
    auto v = r.varint();
    if (!r.empty()) bad("trailing bytes in integer transport parameter");
    return v;
}

ConnectionId get_cid(ByteView value)
{
    if (value.size() > 20) bad("connection id transport parameter too long");
    return ConnectionId(value);
}

}  // namespace

Bytes TransportParameters::encode() const
{
    BufferWriter w;
    if (original_destination_connection_id) {
        put_bytes(w, id::original_destination_connection_id, original_destination_connection_id->view());
    }
    if (max_idle_timeout_ms) put_int(w, id::max_idle_timeout, max_idle_timeout_ms);
    if (stateless_reset_token) put_bytes(w, id::stateless_reset_token, *stateless_reset_token);
    if (max_udp_payload_size != 65527) put_int(w, id::max_udp_payload_size, max_udp_payload_size);
    put_int(w, id::initial_max_data, initial_max_data);
    put_int(w, id::initial_max_stream_data_bidi_local, initial_max_stream_data_bidi_local);
    put_int(w, id::initial_max_stream_data_bidi_remote, initial_max_stream_data_bidi_remote);
    put_int(w, id::initial_max_stream_data_uni, initial_max_stream_data_uni);
    put_int(w, id::initial_max_streams_bidi, initial_max_streams_bidi);
    put_int(w, id::initial_max_streams_uni, initial_max_streams_uni);
    if (ack_delay_exponent != 3) put_int(w, id::ack_delay_exponent, ack_delay_exponent);
    if (max_ack_delay_ms != 25) put_int(w, id::max_ack_delay, max_ack_delay_ms);
    if (disable_active_migration) {
        w.varint(id::disable_active_migration);
        w.varint(0);
    }
    if (active_connection_id_limit != 2) put_int(w, id::active_connection_id_limit, active_connection_id_limit);
    if (initial_source_connection_id) {
        put_bytes(w, id::initial_source_connection_id, initial_source_connection_id->view());
    }
    if (retry_source_connection_id) put_bytes(w, id::retry_source_connection_id, retry_source_connection_id->view());
    return w.take();
}

TransportParameters TransportParameters::decode(ByteView data, bool sent_by_server)
{
    TransportParameters tp;
    std::set<std::uint64_t> seen;
    try {
        BufferReader r(data);
        while (!r.empty()) {
            auto key = r.varint();
            auto value = r.bytes(r.varint());
            if (!seen.insert(key).second) bad("duplicate transport parameter");
            auto server_only = [&] {
                if (!sent_by_server) bad("client sent a server-only transport parameter");
            };
            switch (key) {
            case id::original_destination_connection_id:
                server_only();
                tp.original_destination_connection_id = get_cid(value);
                break;
            case id::max_idle_timeout: tp.max_idle_timeout_ms = get_int(value); break;
            case id::stateless_reset_token:
                server_only();
                if (value.size() != 16) bad("stateless_reset_token must be 16 bytes");
                tp.stateless_reset_token.emplace();
                std::copy(value.begin(), value.end(), tp.stateless_reset_token->begin());
                break;
            case id::max_udp_payload_size:
                tp.max_udp_payload_size = get_int(value);
                if (tp.max_udp_payload_size < 1200) bad("max_udp_payload_size below 1200");
                break;
            case id::initial_max_data: tp.initial_max_data = get_int(value); break;
            case id::initial_max_stream_data_bidi_local: tp.initial_max_stream_data_bidi_local = get_int(value); break;
            case id::initial_max_stream_data_bidi_remote: tp.initial_max_stream_data_bidi_remote = get_int(value); break;
            case id::initial_max_stream_data_uni: tp.initial_max_stream_data_uni = get_int(value); break;
            case id::initial_max_streams_bidi:
                tp.initial_max_streams_bidi = get_int(value);
                if (tp.initial_max_streams_bidi > (1ULL << 60)) bad("initial_max_streams_bidi too large");
                break;
            case id::initial_max_streams_uni:
                tp.initial_max_streams_uni = get_int(value);
                if (tp.initial_max_streams_uni > (1ULL << 60)) bad("initial_max_streams_uni too large");
                break;
            case id::ack_delay_exponent:
                tp.ack_delay_exponent = get_int(value);
                if (tp.ack_delay_exponent > 20) bad("ack_delay_exponent above 20");
                break;
            case id::max_ack_delay:
                tp.max_ack_delay_ms = get_int(value);
                if (tp.max_ack_delay_ms >= (1ULL << 14)) bad("max_ack_delay too large");
                break;
            case id::disable_active_migration:
                if (!value.empty()) bad("disable_active_migration must be empty");
                tp.disable_active_migration = true;
                break;
            case id::preferred_address: server_only(); break;
            case id::active_connection_id_limit:
                tp.active_connection_id_limit = get_int(value);
                if (tp.active_connection_id_limit < 2) bad("active_connection_id_limit below 2");
                break;
            case id::initial_source_connection_id: tp.initial_source_connection_id = get_cid(value); break;
            case id::retry_source_connection_id:
                server_only();
                tp.retry_source_connection_id = get_cid(value);
                break;
            default: break;  // unknown parameters are ignored
            }
        }
    } catch (const DecodeError& e) {
        bad(std::string("malformed transport parameters: ") + e.what());
    }
    if (!tp.initial_source_connection_id) bad("missing initial_source_connection_id");
    if (sent_by_server && !tp.original_destination_connection_id) bad("missing original_destination_connection_id");
    return tp;
}

}  // namespace quictun::quic
