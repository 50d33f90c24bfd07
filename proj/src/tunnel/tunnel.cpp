#include "quictun/tunnel/tunnel.hpp"

#include <boost/asio/detached.hpp>
#include <boost/asio/redirect_error.hpp>
#include <boost/asio/steady_timer.hpp>
#include <boost/asio/this_coro.hpp>
#include <boost/asio/use_awaitable.hpp>

#include "quictun/common/log.hpp"
#include "quictun/relay/tcp_endpoint.hpp"

namespace quictun::tunnel {

namespace {

std::string to_string(const udp::endpoint& ep)
{
    return ep.address().to_string() + ":" + std::to_string(ep.port());
}

std::string to_string(const tcp::endpoint& ep)
{
    return ep.address().to_string() + ":" + std::to_string(ep.port());
}

asio::awaitable<void> sleep_for(quic::Duration d)
{
    asio::steady_timer t(co_await asio::this_coro::executor, d);
    boost::system::error_code ec;
    co_await t.async_wait(asio::redirect_error(asio::use_awaitable, ec));
}

void log_session(const char* role, const SessionRecord& rec)
{
    if (rec.outcome) {
        auto& o = *rec.outcome;
        auto level = o.termination == relay::Termination::clean_eof_both ? spdlog::level::debug : spdlog::level::warn;
        log().log(level, "{} session {} stream {} ({}): {} up={} down={}{}{}", role, rec.session_id, rec.stream_id,
                  rec.peer, relay::to_string(o.termination), o.bytes_a_to_b, o.bytes_b_to_a,
                  o.error.empty() ? "" : " error=", o.error);
    } else {
        log().warn("{} session {} ({}): {}", role, rec.session_id, rec.peer, rec.error);
    }
}

}  // namespace

void TunnelServerConfig::validate() const
{
    if (max_bidi_streams < 1) throw std::invalid_argument("max_bidi_streams must be >= 1");
    if (keep_alive_interval <= quic::Duration::zero()) throw std::invalid_argument("keep_alive_interval must be > 0");
    if (dial_timeout <= quic::Duration::zero()) throw std::invalid_argument("dial_timeout must be > 0");
    if (certificate.cert_file.has_value() != certificate.key_file.has_value()) {
        throw std::invalid_argument("--cert and --key must be given together");
    }
    if (!certificate.cert_file && certificate.names.empty()) {
        throw std::invalid_argument("self-signed certificate needs at least one subject name");
    }
}

void TunnelClientConfig::validate() const
{
    if (keep_alive_interval <= quic::Duration::zero()) throw std::invalid_argument("keep_alive_interval must be > 0");
    if (handshake_attempts < 1) throw std::invalid_argument("handshake_attempts must be >= 1");
    if (stream_wait_timeout < quic::Duration::zero()) throw std::invalid_argument("stream_wait_timeout must be >= 0");
}

// ---- sessions ----

std::uint64_t SessionTable::begin(relay::DuplexEndpoint* stream)
{
    std::lock_guard lock(mu_);
    auto id = next_id_++;
    live_[id] = stream;
    ++active_;
    return id;
}

void SessionTable::end(const SessionRecord& record)
{
    std::lock_guard lock(mu_);
    live_.erase(record.session_id);
    done_.push_back(record);
    --active_;
}

std::vector<SessionRecord> SessionTable::completed() const
{
    std::lock_guard lock(mu_);
    return done_;
}

std::vector<relay::DuplexEndpoint*> SessionTable::live_streams() const
{
    std::lock_guard lock(mu_);
    std::vector<relay::DuplexEndpoint*> out;
    for (auto& [id, s] : live_) out.push_back(s);
    return out;
}

// ---- dialing ----

asio::awaitable<tcp::socket> dial(tcp::endpoint dest, quic::Duration timeout)
{
    auto ex = co_await asio::this_coro::executor;
    struct State {
        explicit State(asio::any_io_executor ex) : socket(ex) {}
        tcp::socket socket;
        bool done = false;
        bool timed_out = false;
    };
    auto st = std::make_shared<State>(ex);
    asio::steady_timer timer(ex, timeout);
    timer.async_wait([st](boost::system::error_code ec) {
        if (ec || st->done) return;
        st->timed_out = true;
        boost::system::error_code ignored;
        st->socket.close(ignored);
    });
    boost::system::error_code ec;
    co_await st->socket.async_connect(dest, asio::redirect_error(asio::use_awaitable, ec));
    st->done = true;
    timer.cancel();
    if (st->timed_out) throw boost::system::system_error(asio::error::timed_out, "connect " + to_string(dest));
    if (ec) throw boost::system::system_error(ec, "connect " + to_string(dest));
    co_return std::move(st->socket);
}

asio::awaitable<SessionRecord> handle_stream(SessionRecord record, relay::DuplexEndpoint& stream,
                                             tcp::endpoint dest, quic::Duration dial_timeout,
                                             relay::RelayOptions options)
{
    std::optional<tcp::socket> socket;
    std::string error;
    try {
        socket.emplace(co_await dial(dest, dial_timeout));
    } catch (const std::exception& e) {
        error = e.what();
    }
    if (!socket) {
        stream.abort(DIAL_FAILED);
        record.error = "dial failed: " + error;
        co_return record;
    }
    relay::TcpEndpoint tcp_side(std::move(*socket));
    options.abort_code = RELAY_ERROR;
    record.outcome = co_await relay::bidirectional_copy(stream, tcp_side, options);
    co_return record;
}

// ---- server ----

TunnelServer::TunnelServer(TunnelServerConfig config) : config_(std::move(config))
{
    config_.validate();
    quic::TlsServerConfig tls;
    if (config_.certificate.cert_file) {
        tls.certificate = security::load_certificate_files(*config_.certificate.cert_file, *config_.certificate.key_file);
    } else {
        tls.certificate = security::generate_self_signed(config_.certificate.names);
    }
    tls.certificate.validate();
    tls.alpn = {kAlpn};
    tls_ = std::make_shared<const quic::TlsServerConfig>(std::move(tls));

    quic::ConnectionConfig cc;
    cc.max_bidi_streams = config_.max_bidi_streams;
    cc.max_uni_streams = config_.unidirectional_streams_allowed ? config_.max_bidi_streams : 0;
    cc.keep_alive_interval = config_.keep_alive_interval;
    cc.idle_timeout = config_.idle_timeout;

    io_.run_sync([&] {
        endpoint_ = quic::Endpoint::server(io_.executor(), config_.bind_tunnel_addr, cc, tls_);
        local_ = endpoint_->local_endpoint();
        sessions_changed_ = std::make_unique<AsyncEvent>(io_.executor());
        asio::co_spawn(io_.executor(), accept_loop(), asio::detached);
    });
    log().info("tunnel server listening on udp {} -> tcp {}", to_string(local_), to_string(config_.dest_tcp_addr));
}

TunnelServer::~TunnelServer()
{
    stop(0s);
}

asio::awaitable<void> TunnelServer::accept_loop()
{
    auto ex = co_await asio::this_coro::executor;
    for (;;) {
        auto conn = co_await endpoint_->accept();
        if (!conn) break;
        if (stopping_) {
            conn->close(SHUTTING_DOWN, "server shutting down");
            continue;
        }
        asio::co_spawn(ex, connection_loop(conn), asio::detached);
    }
}

asio::awaitable<void> TunnelServer::connection_loop(std::shared_ptr<quic::ConnectionHandle> conn)
{
    auto ex = co_await asio::this_coro::executor;
    auto peer = to_string(conn->peer());
    try {
        co_await conn->wait_handshake();
    } catch (const std::exception& e) {
        log().warn("handshake with {} failed: {}", peer, e.what());
        co_return;
    }
    ++accepted_;
    log().info("tunnel connection from {}", peer);
    for (;;) {
        auto id = co_await conn->accept_stream();
        if (!id) break;
        if (stopping_) {
            conn->reset(*id, SHUTTING_DOWN);
            conn->stop_sending(*id, SHUTTING_DOWN);
            conn->release(*id);
            continue;
        }
        asio::co_spawn(ex, run_session(conn, *id), asio::detached);
    }
    auto err = conn->error();
    log().info("tunnel connection from {} ended: {}", peer, err ? err->describe() : "closed");
}

asio::awaitable<void> TunnelServer::run_session(std::shared_ptr<quic::ConnectionHandle> conn, quic::StreamId id)
{
    SessionRecord rec;
    {
        quic::QuicStream stream(conn, id);
        rec.session_id = sessions_.begin(&stream);
        rec.peer = to_string(conn->peer());
        rec.stream_id = id;
        log().debug("server session {} stream {} from {}", rec.session_id, id, rec.peer);
        try {
            rec = co_await handle_stream(rec, stream, config_.dest_tcp_addr, config_.dial_timeout, config_.relay);
        } catch (const std::exception& e) {
            rec.error = e.what();
        }
    }
    log_session("server", rec);
    sessions_.end(rec);
    sessions_changed_->notify_all();
}

asio::awaitable<void> TunnelServer::shutdown(quic::Duration drain)
{
    stopping_ = true;
    auto deadline = quic::Clock::now() + drain;
    while (sessions_.active() > 0 && quic::Clock::now() < deadline) co_await sessions_changed_->wait_until(deadline);
    if (sessions_.active() > 0) {
        log().info("resetting {} active sessions", sessions_.active());
        for (auto* s : sessions_.live_streams()) {
            s->cancel();
            s->abort(SHUTTING_DOWN);
        }
        deadline = quic::Clock::now() + 3s;
        while (sessions_.active() > 0 && quic::Clock::now() < deadline) co_await sessions_changed_->wait_until(deadline);
    }
    endpoint_->close(SHUTTING_DOWN, "server shutting down");
}

void TunnelServer::stop(quic::Duration drain)
{
    if (stopped_.exchange(true)) return;
    if (!io_.in_thread()) {
        try {
            io_.run_sync(shutdown(drain));
        } catch (const std::exception& e) {
            log().warn("server shutdown: {}", e.what());
        }
    }
    io_.stop();
    log().info("tunnel server stopped");
}

// ---- client ----

TunnelClient::TunnelClient(TunnelClientConfig config) : config_(std::move(config)), acceptor_(io_.context())
{
    config_.validate();
    tls_.server_name =
        config_.server_name.empty() ? config_.dest_tunnel_addr.address().to_string() : config_.server_name;
    tls_.verifier = security::build_trust({config_.trust_mode, config_.pinned_roots_der});
    tls_.alpn = {kAlpn};

    io_.run_sync([&] {
        acceptor_.open(config_.bind_tcp_addr.protocol());
        acceptor_.set_option(tcp::acceptor::reuse_address(true));
        acceptor_.bind(config_.bind_tcp_addr);
        acceptor_.listen(asio::socket_base::max_listen_connections);
        local_ = acceptor_.local_endpoint();
        conn_changed_ = std::make_unique<AsyncEvent>(io_.executor());
        sessions_changed_ = std::make_unique<AsyncEvent>(io_.executor());
        asio::co_spawn(io_.executor(), accept_loop(), asio::detached);
    });
    log().info("tunnel client listening on tcp {} -> udp {}", to_string(local_), to_string(config_.dest_tunnel_addr));
}

TunnelClient::~TunnelClient()
{
    stop(0s);
}

asio::awaitable<void> TunnelClient::accept_loop()
{
    auto ex = co_await asio::this_coro::executor;
    for (;;) {
        boost::system::error_code ec;
        auto socket = co_await acceptor_.async_accept(asio::redirect_error(asio::use_awaitable, ec));
        if (stopping_ || ec == asio::error::operation_aborted) break;
        if (ec) {
            log().warn("accept failed: {}", ec.message());
            co_await sleep_for(50ms);
            continue;
        }
        asio::co_spawn(ex, run_session(std::move(socket)), asio::detached);
    }
}

asio::awaitable<void> TunnelClient::run_session(tcp::socket socket)
{
    SessionRecord rec;
    {
        relay::TcpEndpoint local(std::move(socket));
        rec.session_id = sessions_.begin(&local);
        rec.peer = local.label();
        std::unique_ptr<quic::QuicStream> stream;
        try {
            stream = co_await acquire_tunnel_stream();
        } catch (const std::exception& e) {
            rec.error = e.what();
        }
        if (!stream) {
            ++refused_;
            local.abort(0);
        } else {
            rec.stream_id = stream->id();
            log().debug("client session {} stream {} from {}", rec.session_id, rec.stream_id, rec.peer);
            auto options = config_.relay;
            options.abort_code = RELAY_ERROR;
            try {
                rec.outcome = co_await relay::bidirectional_copy(local, *stream, options);
            } catch (const std::exception& e) {
                rec.error = e.what();
            }
        }
    }
    log_session("client", rec);
    sessions_.end(rec);
    sessions_changed_->notify_all();
}

asio::awaitable<std::shared_ptr<quic::ConnectionHandle>> TunnelClient::ensure_connection()
{
    for (;;) {
        if (conn_ && !conn_->is_closing()) co_return conn_;
        if (!connecting_) break;
        co_await conn_changed_->wait();
    }
    if (stopping_) throw std::runtime_error("client is shutting down");
    connecting_ = true;
    conn_.reset();
    struct Done {
        TunnelClient* self;
        ~Done()
        {
            self->connecting_ = false;
            self->conn_changed_->notify_all();
        }
    } done{this};

    auto ex = co_await asio::this_coro::executor;
    quic::ConnectionConfig cc;
    cc.max_bidi_streams = 0;
    cc.keep_alive_interval = config_.keep_alive_interval;
    cc.idle_timeout = config_.idle_timeout;
    cc.handshake_timeout = config_.handshake_timeout;
    const auto& dest = config_.dest_tunnel_addr;
    auto bind = dest.address().is_v6() ? udp::endpoint(udp::v6(), 0) : udp::endpoint(udp::v4(), 0);

    std::string last_error;
    for (int attempt = 1; attempt <= config_.handshake_attempts && !stopping_; ++attempt) {
        if (attempt > 1) co_await sleep_for(config_.retry_backoff);
        std::shared_ptr<quic::ConnectionHandle> h;
        try {
            auto ep = quic::Endpoint::client(ex, bind, cc);
            h = ep->connect(dest, tls_);
            co_await h->wait_handshake();
        } catch (const std::exception& e) {
            last_error = e.what();
            log().warn("tunnel handshake attempt {}/{} to {} failed: {}", attempt, config_.handshake_attempts,
                       to_string(dest), last_error);
            if (h) h->close(0, "handshake abandoned");
            continue;
        }
        ++handshakes_;
        log().info("tunnel connection to {} established", to_string(dest));
        conn_ = h;
        co_return h;
    }
    throw std::runtime_error("tunnel handshake failed after " + std::to_string(config_.handshake_attempts) +
                             " attempts: " + last_error);
}

asio::awaitable<std::unique_ptr<quic::QuicStream>> TunnelClient::acquire_tunnel_stream()
{
    // A second round covers a connection that dies between handshake and open.
    for (int round = 0;; ++round) {
        auto conn = co_await ensure_connection();
        std::optional<quic::StreamId> id;
        try {
            id = co_await conn->open_stream(config_.stream_wait_timeout);
        } catch (const quic::StreamError&) {
            if (round == 0) continue;
            throw;
        }
        if (!id) throw std::runtime_error("no tunnel stream available within the wait timeout");
        co_return std::make_unique<quic::QuicStream>(conn, *id);
    }
}

asio::awaitable<void> TunnelClient::shutdown(quic::Duration drain)
{
    stopping_ = true;
    boost::system::error_code ignored;
    acceptor_.close(ignored);
    auto deadline = quic::Clock::now() + drain;
    while (sessions_.active() > 0 && quic::Clock::now() < deadline) co_await sessions_changed_->wait_until(deadline);
    if (sessions_.active() > 0) {
        for (auto* s : sessions_.live_streams()) {
            s->cancel();
            s->abort(SHUTTING_DOWN);
        }
        deadline = quic::Clock::now() + 3s;
        while (sessions_.active() > 0 && quic::Clock::now() < deadline) co_await sessions_changed_->wait_until(deadline);
    }
    if (conn_) {
        conn_->close(0, "client shutting down");
        // Let the queued flush send CONNECTION_CLOSE.
        co_await sleep_for(10ms);
    }
}

void TunnelClient::stop(quic::Duration drain)
{
    if (stopped_.exchange(true)) return;
    if (!io_.in_thread()) {
        try {
            io_.run_sync(shutdown(drain));
        } catch (const std::exception& e) {
            log().warn("client shutdown: {}", e.what());
        }
    }
    io_.stop();
    log().info("tunnel client stopped");
}

}  // namespace quictun::tunnel
