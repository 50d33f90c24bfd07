#pragma once

#include <optional>
#include <vector>

#include "quictun/quic/crypto.hpp"
#include "quictun/quic/types.hpp"

namespace quictun::quic {

enum class PacketType { initial, zero_rtt, handshake, retry, one_rtt, version_negotiation };

// Header fields readable without removing protection.
struct PacketHeader {
    PacketType type = PacketType::one_rtt;
    std::uint32_t version = 0;
    ConnectionId dcid;
    ConnectionId scid;
    ByteView token;
    std::size_t pn_offset = 0;      // from the start of the packet
    std::size_t packet_length = 0;  // total bytes of this packet within the datagram
};

// Parses the next packet header in `data`. Short headers use `short_dcid_len`.
// Throws DecodeError on malformed headers.
PacketHeader parse_packet_header(ByteView data, std::size_t short_dcid_len);

// Extracts the destination connection id without validating the rest of the header.
std::optional<ConnectionId> peek_dcid(ByteView datagram, std::size_t short_dcid_len);

struct UnprotectedHeader {
    std::uint8_t first_byte;
    std::uint64_t truncated_pn;
    std::size_t pn_length;
};

// Removes header protection in place. Returns nullopt if the packet is too short to sample.
std::optional<UnprotectedHeader> remove_header_protection(MutableByteView packet, std::size_t pn_offset,
                                                          const HeaderProtection& hp);

// Applies header protection in place over a sealed packet.
void apply_header_protection(MutableByteView packet, std::size_t pn_offset, std::size_t pn_length,
                             const HeaderProtection& hp);

std::uint64_t decode_packet_number(std::uint64_t largest_pn, std::uint64_t truncated_pn, std::size_t pn_length);

// Bytes needed to encode `pn` given the largest acknowledged packet (nullopt: none yet).
std::size_t packet_number_length(std::uint64_t pn, std::optional<std::uint64_t> largest_acked);

// Builds a Version Negotiation packet answering a client packet.
Bytes build_version_negotiation(const ConnectionId& client_dcid, const ConnectionId& client_scid,
                                const std::vector<std::uint32_t>& versions);

}  // namespace quictun::quic
