#pragma once

#include <array>
#include <optional>

#include "quictun/quic/types.hpp"

namespace quictun::quic {

// QUIC transport parameters exchanged in the TLS handshake.
struct TransportParameters {
    std::optional<ConnectionId> original_destination_connection_id;
    std::uint64_t max_idle_timeout_ms = 0;
    std::optional<std::array<std::uint8_t, 16>> stateless_reset_token;
    std::uint64_t max_udp_payload_size = 65527;
    std::uint64_t initial_max_data = 0;
    std::uint64_t initial_max_stream_data_bidi_local = 0;
    std::uint64_t initial_max_stream_data_bidi_remote = 0;
    std::uint64_t initial_max_stream_data_uni = 0;
    std::uint64_t initial_max_streams_bidi = 0;
    std::uint64_t initial_max_streams_uni = 0;
    std::uint64_t ack_delay_exponent = 3;
    std::uint64_t max_ack_delay_ms = 25;
    bool disable_active_migration = false;
    std::uint64_t active_connection_id_limit = 2;
    std::optional<ConnectionId> initial_source_connection_id;
    std::optional<ConnectionId> retry_source_connection_id;

    Bytes encode() const;
    // Throws TransportError(transport_parameter_error) on malformed or illegal values.
    static TransportParameters decode(ByteView data, bool sent_by_server);
};

}  // namespace quictun::quic
