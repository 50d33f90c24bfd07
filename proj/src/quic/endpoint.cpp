#include "quictun/quic/endpoint.hpp"

#include <boost/asio/co_spawn.hpp>
#include <boost/asio/detached.hpp>
#include <boost/asio/post.hpp>
#include <boost/asio/redirect_error.hpp>
#include <boost/asio/use_awaitable.hpp>

#include "quictun/common/log.hpp"

namespace quictun::quic {

namespace {

constexpr std::size_t kRecvBatch = 64;
constexpr int kSocketBuffer = 4 * 1024 * 1024;

}  // namespace

// ---- ConnectionHandle ----

ConnectionHandle::ConnectionHandle(std::shared_ptr<Endpoint> endpoint, std::unique_ptr<Connection> conn,
                                   udp::endpoint peer)
    : endpoint_(std::move(endpoint)),
      conn_(std::move(conn)),
      peer_(std::move(peer)),
      timer_(endpoint_->executor()),
      conn_event_(endpoint_->executor())
{
}

ConnectionHandle::~ConnectionHandle() = default;

void ConnectionHandle::on_datagram(MutableByteView data, const udp::endpoint& from)
{
    if (finalized_) return;
    conn_->receive(data, Clock::now());
    schedule_process();
}

void ConnectionHandle::schedule_process()
{
    if (process_scheduled_ || finalized_) return;
    process_scheduled_ = true;
    asio::post(endpoint_->executor(), [self = shared_from_this()] {
        self->process_scheduled_ = false;
        self->process();
    });
}

void ConnectionHandle::process()
{
    if (finalized_) return;
    auto self = shared_from_this();
    auto drain_events = [&] {
        while (auto ev = conn_->poll_event()) {
            switch (ev->type) {
            case ConnectionEventType::stream_opened:
                accept_queue_.push_back(ev->stream_id);
                conn_event_.notify_all();
                break;
            case ConnectionEventType::stream_readable:
            case ConnectionEventType::stream_writable:
                notify_stream(ev->stream_id);
                break;
            case ConnectionEventType::handshake_completed:
            case ConnectionEventType::streams_available:
                conn_event_.notify_all();
                break;
            case ConnectionEventType::connection_closed:
                notify_all();
                break;
            }
        }
    };
    drain_events();
    auto now = Clock::now();
    while (conn_->poll_transmit(now, tx_buf_)) endpoint_->send(tx_buf_, peer_);
    drain_events();
    if (conn_->is_closed()) {
        finalize();
        return;
    }
    if (conn_->is_closing()) notify_all();
    arm_timer();
}

void ConnectionHandle::arm_timer()
{
    auto t = conn_->next_timeout();
    if (!t) {
        if (armed_) {
            timer_.cancel();
            armed_.reset();
        }
        return;
    }
    if (armed_ == t) return;
    armed_ = t;
    timer_.expires_at(*t);
    timer_.async_wait([w = weak_from_this()](boost::system::error_code ec) {
        if (ec) return;
        auto self = w.lock();
        if (!self || self->finalized_) return;
        self->armed_.reset();
        self->conn_->on_timeout(Clock::now());
        self->process();
    });
}

void ConnectionHandle::finalize()
{
    if (finalized_) return;
    finalized_ = true;
    if (auto err = conn_->error()) log().debug("connection {} closed: {}", conn_->local_cid().hex(), err->describe());
    timer_.cancel();
    notify_all();
    endpoint_->remove(this);
}

ConnectionHandle::StreamWaiters& ConnectionHandle::waiters(StreamId id)
{
    auto& w = streams_[id];
    if (!w) w = std::make_unique<StreamWaiters>(endpoint_->executor());
    return *w;
}

void ConnectionHandle::notify_stream(StreamId id)
{
    auto it = streams_.find(id);
    if (it != streams_.end()) it->second->event.notify_all();
}

void ConnectionHandle::notify_all()
{
    conn_event_.notify_all();
    for (auto& [id, w] : streams_) w->event.notify_all();
}

void ConnectionHandle::throw_closed() const
{
    std::string why = "connection closed";
    if (auto err = conn_->error()) why = err->describe();
    throw StreamError(StreamError::Kind::connection_closed, 0, why);
}

asio::awaitable<void> ConnectionHandle::wait_handshake()
{
    auto self = shared_from_this();
    for (;;) {
        if (conn_->handshake_complete() && !is_closing()) co_return;
        if (is_closing()) throw_closed();
        co_await conn_event_.wait();
    }
}

asio::awaitable<std::optional<StreamId>> ConnectionHandle::open_stream(Duration wait)
{
    auto self = shared_from_this();
    auto deadline = Clock::now() + wait;
    for (;;) {
        if (is_closing()) throw_closed();
        if (conn_->handshake_complete()) {
            if (auto id = conn_->open_bidi()) co_return id;
        }
        if (Clock::now() >= deadline) co_return std::nullopt;
        co_await conn_event_.wait_until(deadline);
    }
}

asio::awaitable<std::optional<StreamId>> ConnectionHandle::accept_stream()
{
    auto self = shared_from_this();
    for (;;) {
        if (!accept_queue_.empty()) {
            auto id = accept_queue_.front();
            accept_queue_.pop_front();
            co_return id;
        }
        if (is_closing()) co_return std::nullopt;
        co_await conn_event_.wait();
    }
}

asio::awaitable<void> ConnectionHandle::wait_closed()
{
    auto self = shared_from_this();
    while (!finalized_) co_await conn_event_.wait();
}

asio::awaitable<std::size_t> ConnectionHandle::read(StreamId id, MutableByteView buffer)
{
    auto self = shared_from_this();
    auto& w = waiters(id);
    for (;;) {
        if (w.cancelled) throw boost::system::system_error(asio::error::operation_aborted);
        if (finalized_) throw_closed();
        auto r = conn_->stream_recv(id, buffer);
        if (r.n > 0) {
            // Consuming data may open flow-control credit.
            schedule_process();
            co_return r.n;
        }
        if (r.reset) throw StreamError(StreamError::Kind::reset, *r.reset, fmt::format("stream reset by peer (code {:#x})", *r.reset));
        if (r.fin) co_return 0;
        if (is_closing()) throw_closed();
        co_await w.event.wait();
    }
}

asio::awaitable<void> ConnectionHandle::write_all(StreamId id, ByteView data)
{
    auto self = shared_from_this();
    auto& w = waiters(id);
    while (!data.empty()) {
        if (w.cancelled) throw boost::system::system_error(asio::error::operation_aborted);
        if (is_closing()) throw_closed();
        auto r = conn_->stream_send(id, data);
        if (r.stopped) throw StreamError(StreamError::Kind::stopped, *r.stopped, fmt::format("peer stopped the stream (code {:#x})", *r.stopped));
        if (r.n > 0) {
            data = data.subspan(r.n);
            schedule_process();
            continue;
        }
        co_await w.event.wait();
    }
}

void ConnectionHandle::finish(StreamId id)
{
    if (is_closing()) return;
    conn_->stream_finish(id);
    schedule_process();
}

void ConnectionHandle::reset(StreamId id, std::uint64_t code)
{
    if (is_closing()) return;
    conn_->stream_reset(id, code);
    schedule_process();
}

void ConnectionHandle::stop_sending(StreamId id, std::uint64_t code)
{
    if (is_closing()) return;
    conn_->stream_stop_sending(id, code);
    schedule_process();
}

void ConnectionHandle::release(StreamId id)
{
    auto it = streams_.find(id);
    if (it != streams_.end()) {
        if (it->second->event.has_waiters()) {
            it->second->cancelled = true;
            it->second->event.notify_all();
        } else {
            streams_.erase(it);
        }
    }
    if (finalized_) return;
    conn_->stream_release(id);
    schedule_process();
}

void ConnectionHandle::cancel_stream(StreamId id)
{
    auto& w = waiters(id);
    w.cancelled = true;
    w.event.notify_all();
}

void ConnectionHandle::close(std::uint64_t code, const std::string& reason)
{
    if (is_closing()) return;
    conn_->close(code, reason, Clock::now());
    notify_all();
    schedule_process();
}

// ---- Endpoint ----

Endpoint::Endpoint(asio::any_io_executor ex, const udp::endpoint& bind, const ConnectionConfig& config,
                   std::shared_ptr<const TlsServerConfig> tls)
    : ex_(ex), socket_(ex), config_(config), tls_(std::move(tls)), server_(tls_ != nullptr), incoming_event_(ex)
{
    socket_.open(bind.protocol());
    if (server_) socket_.set_option(asio::socket_base::reuse_address(true));
    socket_.bind(bind);
    socket_.non_blocking(true);
    boost::system::error_code ignored;
    socket_.set_option(asio::socket_base::receive_buffer_size(kSocketBuffer), ignored);
    socket_.set_option(asio::socket_base::send_buffer_size(kSocketBuffer), ignored);
    rx_buf_.resize(65536);
}

Endpoint::~Endpoint() = default;

std::shared_ptr<Endpoint> Endpoint::server(asio::any_io_executor ex, const udp::endpoint& bind,
                                           const ConnectionConfig& config,
                                           std::shared_ptr<const TlsServerConfig> tls)
{
    if (!tls) throw std::invalid_argument("server endpoint needs a TLS configuration");
    std::shared_ptr<Endpoint> ep(new Endpoint(ex, bind, config, std::move(tls)));
    ep->start();
    return ep;
}

std::shared_ptr<Endpoint> Endpoint::client(asio::any_io_executor ex, const udp::endpoint& bind,
                                           const ConnectionConfig& config)
{
    std::shared_ptr<Endpoint> ep(new Endpoint(ex, bind, config, nullptr));
    ep->start();
    return ep;
}

void Endpoint::start()
{
    asio::co_spawn(ex_, receive_loop(), asio::detached);
}

udp::endpoint Endpoint::local_endpoint() const
{
    return socket_.local_endpoint();
}

asio::awaitable<void> Endpoint::receive_loop()
{
    auto self = shared_from_this();
    udp::endpoint from;
    while (!closed_) {
        boost::system::error_code ec;
        auto n = co_await socket_.async_receive_from(asio::buffer(rx_buf_), from,
                                                     asio::redirect_error(asio::use_awaitable, ec));
        if (closed_ || ec == asio::error::operation_aborted) break;
        if (ec) continue;
        dispatch(MutableByteView(rx_buf_.data(), n), from);
        for (std::size_t i = 0; i < kRecvBatch && !closed_; ++i) {
            n = socket_.receive_from(asio::buffer(rx_buf_), from, 0, ec);
            if (ec == asio::error::would_block) break;
            if (ec) continue;
            dispatch(MutableByteView(rx_buf_.data(), n), from);
        }
    }
}

void Endpoint::dispatch(MutableByteView data, const udp::endpoint& from)
{
    if (data.empty()) return;
    auto dcid = peek_dcid(data, kLocalCidLength);
    if (!dcid) return;
    if (auto it = routes_.find(*dcid); it != routes_.end()) {
        auto handle = it->second;
        try {
            handle->on_datagram(data, from);
        } catch (const std::exception& e) {
            log().debug("dropping datagram: {}", e.what());
        }
        return;
    }
    if (!server_ || closed_ || (data[0] & 0x80) == 0 || data.size() < 5) return;

    std::uint32_t version = (std::uint32_t(data[1]) << 24) | (std::uint32_t(data[2]) << 16) |
                            (std::uint32_t(data[3]) << 8) | data[4];
    PacketHeader header;
    try {
        header = parse_packet_header(data, kLocalCidLength);
    } catch (const std::exception&) {
        return;
    }
    if (version != kQuicVersion1) {
        if (version != 0 && data.size() >= kMinInitialDatagram) {
            send(build_version_negotiation(header.dcid, header.scid, {kQuicVersion1}), from);
        }
        return;
    }
    if (header.type != PacketType::initial || data.size() < kMinInitialDatagram || header.dcid.size() < 8) return;

    auto conn = Connection::server(config_, tls_, header.dcid, header.scid, Clock::now());
    auto local = conn->local_cid();
    auto handle = std::make_shared<ConnectionHandle>(shared_from_this(), std::move(conn), from);
    routes_[header.dcid] = handle;
    routes_[local] = handle;
    connections_.push_back(handle);
    log().debug("accepted connection {} from {}:{}", local.hex(), from.address().to_string(), from.port());
    try {
        handle->on_datagram(data, from);
    } catch (const std::exception& e) {
        log().debug("bad initial: {}", e.what());
    }
    incoming_.push_back(handle);
    incoming_event_.notify_all();
}

void Endpoint::send(ByteView datagram, const udp::endpoint& to)
{
    if (closed_) return;
    boost::system::error_code ec;
    socket_.send_to(asio::buffer(datagram.data(), datagram.size()), to, 0, ec);
    // A full socket buffer behaves like loss; recovery takes care of it.
    if (ec && ec != asio::error::would_block && ec != asio::error::no_buffer_space) {
        log().debug("send_to failed: {}", ec.message());
    }
}

void Endpoint::remove(ConnectionHandle* handle)
{
    for (auto it = routes_.begin(); it != routes_.end();) {
        if (it->second.get() == handle) it = routes_.erase(it);
        else ++it;
    }
    std::erase_if(connections_, [&](const auto& c) { return c.get() == handle; });
    std::erase_if(incoming_, [&](const auto& c) { return c.get() == handle; });
    // Client endpoints exist for a single connection.
    if (!server_ && connections_.empty() && !closed_) {
        closed_ = true;
        boost::system::error_code ignored;
        socket_.close(ignored);
    }
}

std::shared_ptr<ConnectionHandle> Endpoint::connect(const udp::endpoint& server, TlsClientConfig tls)
{
    if (closed_) throw std::runtime_error("endpoint is closed");
    auto conn = Connection::client(config_, std::move(tls), Clock::now());
    auto local = conn->local_cid();
    auto handle = std::make_shared<ConnectionHandle>(shared_from_this(), std::move(conn), server);
    routes_[local] = handle;
    connections_.push_back(handle);
    handle->process();
    return handle;
}

asio::awaitable<std::shared_ptr<ConnectionHandle>> Endpoint::accept()
{
    auto self = shared_from_this();
    for (;;) {
        if (!incoming_.empty()) {
            auto h = incoming_.front();
            incoming_.pop_front();
            co_return h;
        }
        if (closed_) co_return nullptr;
        co_await incoming_event_.wait();
    }
}

void Endpoint::close(std::uint64_t code, const std::string& reason)
{
    if (closed_) return;
    auto conns = connections_;
    for (auto& c : conns) {
        if (!c->conn_->is_closing()) c->conn_->close(code, reason, Clock::now());
        // Flush the CONNECTION_CLOSE now; no closing period once the socket is gone.
        auto now = Clock::now();
        while (c->conn_->poll_transmit(now, c->tx_buf_)) send(c->tx_buf_, c->peer_);
        c->finalize();
    }
    closed_ = true;
    routes_.clear();
    connections_.clear();
    incoming_.clear();
    incoming_event_.notify_all();
    boost::system::error_code ignored;
    socket_.close(ignored);
}

// ---- QuicStream ----

QuicStream::QuicStream(std::shared_ptr<ConnectionHandle> conn, StreamId id) : conn_(std::move(conn)), id_(id) {}

QuicStream::~QuicStream()
{
    conn_->release(id_);
}

asio::awaitable<std::size_t> QuicStream::read_some(MutableByteView buffer)
{
    if (eof_) co_return 0;
    auto n = co_await conn_->read(id_, buffer);
    if (n == 0) eof_ = true;
    co_return n;
}

asio::awaitable<void> QuicStream::write_all(ByteView data)
{
    co_await conn_->write_all(id_, data);
}

asio::awaitable<void> QuicStream::shutdown_write()
{
    conn_->finish(id_);
    co_return;
}

void QuicStream::cancel()
{
    conn_->cancel_stream(id_);
}

void QuicStream::abort(std::uint64_t code)
{
    conn_->reset(id_, code);
    conn_->stop_sending(id_, code);
}

std::string QuicStream::label() const
{
    return "quic-stream " + std::to_string(id_);
}

}  // namespace quictun::quic
