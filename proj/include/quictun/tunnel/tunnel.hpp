#pragma once

// Stream-mode TCP-over-QUIC tunnel: the server maps each incoming
// bidirectional stream to a TCP connection to a fixed destination, the client
// maps each accepted local TCP connection to a new stream on one shared
// tunnel connection.

#include <atomic>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <vector>

#include <boost/asio/ip/tcp.hpp>

#include "quictun/common/async_event.hpp"
#include "quictun/common/io_thread.hpp"
#include "quictun/quic/endpoint.hpp"
#include "quictun/relay/relay.hpp"
#include "quictun/security/certificate.hpp"
#include "quictun/security/trust.hpp"

namespace quictun::tunnel {

namespace asio = boost::asio;
using tcp = asio::ip::tcp;
using udp = asio::ip::udp;
using namespace std::chrono_literals;

// Application error codes carried by stream resets.
inline constexpr std::uint64_t DIAL_FAILED = 0x01;
inline constexpr std::uint64_t RELAY_ERROR = 0x02;
inline constexpr std::uint64_t SHUTTING_DOWN = 0x03;

inline constexpr const char* kAlpn = "quic-tun/1";

struct CertificateSource {
    // Both set: load from files. Otherwise a self-signed certificate is generated for `names`.
    std::optional<std::filesystem::path> cert_file;
    std::optional<std::filesystem::path> key_file;
    std::vector<std::string> names{"localhost", "127.0.0.1", "::1"};
};

struct TunnelServerConfig {
    udp::endpoint bind_tunnel_addr;
    tcp::endpoint dest_tcp_addr;
    std::uint64_t max_bidi_streams = 100;
    bool unidirectional_streams_allowed = false;
    quic::Duration keep_alive_interval = 2s;
    CertificateSource certificate;
    quic::Duration dial_timeout = 5s;
    quic::Duration idle_timeout = 30s;
    relay::RelayOptions relay;

    // Throws std::invalid_argument on a violated invariant.
    void validate() const;
};

struct TunnelClientConfig {
    tcp::endpoint bind_tcp_addr;
    udp::endpoint dest_tunnel_addr;
    security::TrustMode trust_mode = security::TrustMode::verify_standard;
    std::vector<Bytes> pinned_roots_der;
    // Name checked against the server certificate; empty means the destination IP.
    std::string server_name;
    quic::Duration keep_alive_interval = 2s;
    quic::Duration idle_timeout = 30s;
    quic::Duration handshake_timeout = 5s;
    int handshake_attempts = 3;
    quic::Duration retry_backoff = 500ms;
    // How long a new session waits for stream credit before the TCP connection is refused.
    quic::Duration stream_wait_timeout = 10s;
    relay::RelayOptions relay;

    void validate() const;
};

struct SessionRecord {
    std::uint64_t session_id = 0;
    std::string peer;
    quic::StreamId stream_id = 0;
    std::optional<relay::RelayOutcome> outcome;  // nullopt while pending or if the session never started relaying
    std::string error;
};

// Dials `dest` and relays between it and `stream`. On dial failure the stream is
// aborted with DIAL_FAILED and `record.error` is set.
asio::awaitable<SessionRecord> handle_stream(SessionRecord record, relay::DuplexEndpoint& stream,
                                             tcp::endpoint dest, quic::Duration dial_timeout,
                                             relay::RelayOptions options = {});

// Connects with a deadline; throws boost::system::system_error (timed_out on expiry).
asio::awaitable<tcp::socket> dial(tcp::endpoint dest, quic::Duration timeout);

// Shared bookkeeping of both roles.
class SessionTable {
public:
    std::uint64_t begin(relay::DuplexEndpoint* stream);
    void end(const SessionRecord& record);
    std::vector<SessionRecord> completed() const;
    std::size_t active() const { return active_.load(); }
    // Loop thread only.
    std::vector<relay::DuplexEndpoint*> live_streams() const;

private:
    mutable std::mutex mu_;
    std::uint64_t next_id_ = 1;
    std::map<std::uint64_t, relay::DuplexEndpoint*> live_;
    std::vector<SessionRecord> done_;
    std::atomic<std::size_t> active_{0};
};

class TunnelServer {
public:
    // Binds and starts serving. Throws on bind or certificate failure.
    explicit TunnelServer(TunnelServerConfig config);
    ~TunnelServer();
    TunnelServer(const TunnelServer&) = delete;
    TunnelServer& operator=(const TunnelServer&) = delete;

    udp::endpoint local_endpoint() const { return local_; }
    const security::CertificateMaterial& certificate() const { return tls_->certificate; }

    // Stops accepting, lets active sessions finish for up to `drain`, then resets
    // the rest with SHUTTING_DOWN. Safe from any thread; idempotent.
    void stop(quic::Duration drain = 5s);

    std::vector<SessionRecord> completed_sessions() const { return sessions_.completed(); }
    std::size_t active_sessions() const { return sessions_.active(); }
    std::uint64_t connections_accepted() const { return accepted_.load(); }
    IoThread& io() { return io_; }

private:
    asio::awaitable<void> accept_loop();
    asio::awaitable<void> connection_loop(std::shared_ptr<quic::ConnectionHandle> conn);
    asio::awaitable<void> run_session(std::shared_ptr<quic::ConnectionHandle> conn, quic::StreamId id);
    asio::awaitable<void> shutdown(quic::Duration drain);

    TunnelServerConfig config_;
    std::shared_ptr<const quic::TlsServerConfig> tls_;
    IoThread io_{"tunnel-server"};
    std::shared_ptr<quic::Endpoint> endpoint_;
    udp::endpoint local_;
    SessionTable sessions_;
    std::atomic<std::uint64_t> accepted_{0};
    std::atomic<bool> stopped_{false};
    bool stopping_ = false;
    std::unique_ptr<AsyncEvent> sessions_changed_;
};

class TunnelClient {
public:
    // Binds the local TCP listener and starts accepting. The tunnel connection is
    // established on first demand.
    explicit TunnelClient(TunnelClientConfig config);
    ~TunnelClient();
    TunnelClient(const TunnelClient&) = delete;
    TunnelClient& operator=(const TunnelClient&) = delete;

    tcp::endpoint local_endpoint() const { return local_; }
    void stop(quic::Duration drain = 5s);

    // Loop thread only. A new stream on the shared connection, connecting or
    // reconnecting first when needed. Throws after the handshake attempts are
    // exhausted or when no stream credit arrives within stream_wait_timeout.
    asio::awaitable<std::unique_ptr<quic::QuicStream>> acquire_tunnel_stream();
    IoThread& io() { return io_; }

    std::vector<SessionRecord> completed_sessions() const { return sessions_.completed(); }
    std::size_t active_sessions() const { return sessions_.active(); }
    std::uint64_t handshakes_completed() const { return handshakes_.load(); }
    std::uint64_t sessions_refused() const { return refused_.load(); }

private:
    asio::awaitable<void> accept_loop();
    asio::awaitable<void> run_session(tcp::socket socket);
    asio::awaitable<std::shared_ptr<quic::ConnectionHandle>> ensure_connection();
    asio::awaitable<void> shutdown(quic::Duration drain);

    TunnelClientConfig config_;
    quic::TlsClientConfig tls_;
    IoThread io_{"tunnel-client"};
    tcp::acceptor acceptor_;
    tcp::endpoint local_;
    std::shared_ptr<quic::ConnectionHandle> conn_;
    bool connecting_ = false;
    std::unique_ptr<AsyncEvent> conn_changed_;
    SessionTable sessions_;
    std::unique_ptr<AsyncEvent> sessions_changed_;
    std::atomic<std::uint64_t> handshakes_{0};
    std::atomic<std::uint64_t> refused_{0};
    std::atomic<bool> stopped_{false};
    bool stopping_ = false;
};

}  // namespace quictun::tunnel
