#include "quictun/quic/packet.hpp"

namespace quictun::quic {

PacketHeader parse_packet_header(ByteView data, std::size_t short_dcid_len)
{
    BufferReader r(data);
    PacketHeader h;
    auto first = r.u8();
    if ((first & 0x80) == 0) {
        h.type = PacketType::one_rtt;
        h.dcid = ConnectionId(r.bytes(short_dcid_len));
        h.pn_offset = r.position();
        h.packet_length = data.size();
        return h;
    }
    h.version = r.u32();
    auto dcid_len = r.u8();
    if (dcid_len > 20 && h.version == kQuicVersion1) throw DecodeError("dcid too long");
    h.dcid = ConnectionId(r.bytes(std::min<std::size_t>(dcid_len, 20)));
    auto scid_len = r.u8();
    if (scid_len > 20 && h.version == kQuicVersion1) throw DecodeError("scid too long");
    h.scid = ConnectionId(r.bytes(std::min<std::size_t>(scid_len, 20)));
    if (h.version == 0) {
        h.type = PacketType::version_negotiation;
        h.packet_length = data.size();
        return h;
    }
    if (h.version != kQuicVersion1) {
        // Unknown version: only the invariant fields are meaningful.
        h.packet_length = data.size();
        h.type = PacketType::initial;
        return h;
    }
    switch ((first >> 4) & 0x03) {
    case 0: h.type = PacketType::initial; break;
    case 1: h.type = PacketType::zero_rtt; break;
    case 2: h.type = PacketType::handshake; break;
    default: h.type = PacketType::retry; break;
    }
    if (h.type == PacketType::retry) {
        h.packet_length = data.size();
        return h;
    }
    if (h.type == PacketType::initial) h.token = r.bytes(r.varint());
    auto length = r.varint();
    h.pn_offset = r.position();
    if (length > r.remaining()) throw DecodeError("packet length exceeds datagram");
    h.packet_length = h.pn_offset + length;
    return h;
}

std::optional<ConnectionId> peek_dcid(ByteView datagram, std::size_t short_dcid_len)
{
    try {
        BufferReader r(datagram);
        auto first = r.u8();
        if ((first & 0x80) == 0) return ConnectionId(r.bytes(short_dcid_len));
        r.u32();
        auto len = r.u8();
        if (len > 20) return std::nullopt;
        return ConnectionId(r.bytes(len));
    } catch (const DecodeError&) {
        return std::nullopt;
    }
}

std::optional<UnprotectedHeader> remove_header_protection(MutableByteView packet, std::size_t pn_offset,
                                                          const HeaderProtection& hp)
{
    if (packet.size() < pn_offset + 4 + 16) return std::nullopt;
    auto mask = hp.mask(ByteView(packet.data() + pn_offset + 4, 16));
    bool long_header = (packet[0] & 0x80) != 0;
    packet[0] ^= mask[0] & (long_header ? 0x0f : 0x1f);
    std::size_t pn_len = (packet[0] & 0x03) + 1;
    std::uint64_t pn = 0;
    for (std::size_t i = 0; i < pn_len; ++i) {
        packet[pn_offset + i] ^= mask[1 + i];
        pn = (pn << 8) | packet[pn_offset + i];
    }
    return UnprotectedHeader{packet[0], pn, pn_len};
}

void apply_header_protection(MutableByteView packet, std::size_t pn_offset, std::size_t pn_length,
                             const HeaderProtection& hp)
{
    auto mask = hp.mask(ByteView(packet.data() + pn_offset + 4, 16));
    bool long_header = (packet[0] & 0x80) != 0;
    packet[0] ^= mask[0] & (long_header ? 0x0f : 0x1f);
    for (std::size_t i = 0; i < pn_length; ++i) packet[pn_offset + i] ^= mask[1 + i];
}

std::uint64_t decode_packet_number(std::uint64_t largest_pn, std::uint64_t truncated_pn, std::size_t pn_length)
{
    const std::uint64_t expected = largest_pn + 1;
    const std::uint64_t pn_win = 1ULL << (pn_length * 8);
    const std::uint64_t pn_hwin = pn_win / 2;
    const std::uint64_t pn_mask = pn_win - 1;
    std::uint64_t candidate = (expected & ~pn_mask) | truncated_pn;
    if (expected >= pn_hwin && candidate + pn_hwin <= expected && candidate < (1ULL << 62) - pn_win) {
        return candidate + pn_win;
    }
    if (candidate > expected + pn_hwin && candidate >= pn_win) return candidate - pn_win;
    return candidate;
}

std::size_t packet_number_length(std::uint64_t pn, std::optional<std::uint64_t> largest_acked)
{
    std::uint64_t unacked = largest_acked ? pn - *largest_acked : pn + 1;
    // At least one bit more than log2 of the unacknowledged range.
    std::size_t bits = 1;
    while ((1ULL << (bits - 1)) <= unacked && bits < 64) ++bits;
    std::size_t bytes = (bits + 7) / 8;
    return std::clamp<std::size_t>(bytes, 1, 4);
}

Bytes build_version_negotiation(const ConnectionId& client_dcid, const ConnectionId& client_scid,
                                const std::vector<std::uint32_t>& versions)
{
    BufferWriter w;
    Bytes rnd(1);
    random_bytes(rnd);
    w.u8(static_cast<std::uint8_t>(0x80 | (rnd[0] & 0x7f)));
    w.u32(0);
    w.u8(static_cast<std::uint8_t>(client_scid.size()));
    w.bytes(client_scid.view());
    w.u8(static_cast<std::uint8_t>(client_dcid.size()));
    w.bytes(client_dcid.view());
    for (auto v : versions) w.u32(v);
    return w.take();
}

}  // namespace quictun::quic
