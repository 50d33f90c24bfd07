#pragma once

// TLS 1.3 handshake carried in QUIC CRYPTO frames. Sans-IO: handshake bytes
// go in and out per encryption level, traffic secrets are handed to the caller.
// Supports TLS_AES_128_GCM_SHA256 with an x25519 key share; no HelloRetryRequest,
// no resumption, no 0-RTT.

#include <array>
#include <deque>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "quictun/common/bytes.hpp"
#include "quictun/quic/crypto.hpp"
#include "quictun/security/certificate.hpp"
#include "quictun/security/trust.hpp"

namespace quictun::quic {

enum class EncryptionLevel : std::uint8_t { initial = 0, handshake = 1, application = 2 };

namespace tls_alert {
inline constexpr std::uint8_t unexpected_message = 10;
inline constexpr std::uint8_t handshake_failure = 40;
inline constexpr std::uint8_t bad_certificate = 42;
inline constexpr std::uint8_t illegal_parameter = 47;
inline constexpr std::uint8_t decode_error = 50;
inline constexpr std::uint8_t decrypt_error = 51;
inline constexpr std::uint8_t protocol_version = 70;
inline constexpr std::uint8_t internal_error = 80;
inline constexpr std::uint8_t missing_extension = 109;
inline constexpr std::uint8_t no_application_protocol = 120;
}  // namespace tls_alert

class TlsError : public std::runtime_error {
public:
    TlsError(std::uint8_t alert, const std::string& what) : std::runtime_error(what), alert_(alert) {}
    std::uint8_t alert() const { return alert_; }

private:
    std::uint8_t alert_;
};

struct TlsServerConfig {
    security::CertificateMaterial certificate;
    std::vector<std::string> alpn;
};

struct TlsClientConfig {
    std::string server_name;
    std::shared_ptr<const security::CertificateVerifier> verifier;
    std::vector<std::string> alpn;
};

struct TrafficSecret {
    EncryptionLevel level;
    bool write;  // false: secret for decrypting peer packets
    Bytes secret;
};

struct HandshakeOutput {
    EncryptionLevel level;
    Bytes data;
};

class TlsHandshake {
public:
    TlsHandshake(TlsClientConfig config, Bytes local_transport_params);
    TlsHandshake(std::shared_ptr<const TlsServerConfig> config, Bytes local_transport_params);
    ~TlsHandshake();
    TlsHandshake(TlsHandshake&&) noexcept;
    TlsHandshake& operator=(TlsHandshake&&) noexcept;

    bool is_client() const;
    // Client: emits the ClientHello. No-op for servers.
    void start();
    // Feeds CRYPTO stream bytes received at `level`. Throws TlsError.
    void receive(EncryptionLevel level, ByteView data);

    std::vector<HandshakeOutput> take_output();
    std::vector<TrafficSecret> take_secrets();

    bool complete() const;
    const std::optional<Bytes>& peer_transport_params() const;
    const std::string& negotiated_alpn() const;
    // Client: leaf certificate presented by the server.
    const std::vector<Bytes>& peer_certificates() const;

private:
    struct State;
    std::unique_ptr<State> s_;
};

}  // namespace quictun::quic
