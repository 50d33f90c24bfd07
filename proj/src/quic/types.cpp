#include "quictun/quic/types.hpp"

#include <cstdio>

#include "quictun/quic/crypto.hpp"

namespace quictun::quic {

ConnectionId::ConnectionId(ByteView bytes)
{
    if (bytes.size() > bytes_.size()) throw std::invalid_argument("connection id longer than 20 bytes");
    std::copy(bytes.begin(), bytes.end(), bytes_.begin());
    len_ = static_cast<std::uint8_t>(bytes.size());
}

ConnectionId ConnectionId::random(std::size_t length)
{
    Bytes b(length);
    random_bytes(b);
    return ConnectionId(b);
}

std::size_t ConnectionIdHash::operator()(const ConnectionId& cid) const noexcept
{
    std::size_t h = 1469598103934665603ULL;
    for (auto b : cid.view()) h = (h ^ b) * 1099511628211ULL;
    return h;
}

std::string ConnectionError::describe() const
{
    std::string who;
    switch (source) {
    case Source::local: who = "closed locally"; break;
    case Source::peer: who = "closed by peer"; break;
    case Source::idle_timeout: return "idle timeout";
    case Source::handshake_timeout: return "handshake timeout";
    case Source::liveness_timeout: return "peer unresponsive";
    }
    std::string kind = application ? "application" : "transport";
    char code_text[32];
    std::snprintf(code_text, sizeof(code_text), "0x%llx", static_cast<unsigned long long>(code));
    auto text = who + " (" + kind + " error " + code_text + ")";
    if (!reason.empty()) text += ": " + reason;
    return text;
}

}  // namespace quictun::quic
