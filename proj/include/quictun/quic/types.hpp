#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>

#include "quictun/common/bytes.hpp"

namespace quictun::quic {

using Clock = std::chrono::steady_clock;
using TimePoint = Clock::time_point;
using Duration = Clock::duration;

inline constexpr std::uint32_t kQuicVersion1 = 0x00000001;
inline constexpr std::size_t kMinInitialDatagram = 1200;
inline constexpr std::size_t kLocalCidLength = 8;

using StreamId = std::uint64_t;

inline bool is_client_initiated(StreamId id) { return (id & 1) == 0; }
inline bool is_bidirectional(StreamId id) { return (id & 2) == 0; }

class ConnectionId {
public:
    ConnectionId() = default;
    explicit ConnectionId(ByteView bytes);
    static ConnectionId random(std::size_t length);

    ByteView view() const { return {bytes_.data(), len_}; }
    std::size_t size() const { return len_; }
    bool empty() const { return len_ == 0; }
    std::string hex() const { return to_hex(view()); }

    friend bool operator==(const ConnectionId& a, const ConnectionId& b)
    {
        return a.len_ == b.len_ && std::equal(a.bytes_.begin(), a.bytes_.begin() + a.len_, b.bytes_.begin());
    }

private:
    std::array<std::uint8_t, 20> bytes_{};
    std::uint8_t len_ = 0;
};

struct ConnectionIdHash {
    std::size_t operator()(const ConnectionId& cid) const noexcept;
};

enum class TransportErrorCode : std::uint64_t {
    no_error = 0x0,
    internal_error = 0x1,
    connection_refused = 0x2,
    flow_control_error = 0x3,
    stream_limit_error = 0x4,
    stream_state_error = 0x5,
    final_size_error = 0x6,
    frame_encoding_error = 0x7,
    transport_parameter_error = 0x8,
    connection_id_limit_error = 0x9,
    protocol_violation = 0xa,
    invalid_token = 0xb,
    application_error = 0xc,
    crypto_buffer_exceeded = 0xd,
    key_update_error = 0xe,
    aead_limit_reached = 0xf,
    no_viable_path = 0x10,
    crypto_error = 0x100,
};

// Raised while processing peer input; closes the connection with `code`.
class TransportError : public std::runtime_error {
public:
    TransportError(TransportErrorCode code, const std::string& reason, std::uint64_t frame_type = 0)
        : std::runtime_error(reason), code_(static_cast<std::uint64_t>(code)), frame_type_(frame_type)
    {
    }
    TransportError(std::uint64_t raw_code, const std::string& reason) : std::runtime_error(reason), code_(raw_code) {}
    std::uint64_t code() const { return code_; }
    std::uint64_t frame_type() const { return frame_type_; }

private:
    std::uint64_t code_;
    std::uint64_t frame_type_ = 0;
};

// Why a connection ended.
struct ConnectionError {
    enum class Source { local, peer, idle_timeout, handshake_timeout, liveness_timeout };
    Source source = Source::local;
    bool application = false;
    std::uint64_t code = 0;
    std::string reason;

    std::string describe() const;
};

}  // namespace quictun::quic
