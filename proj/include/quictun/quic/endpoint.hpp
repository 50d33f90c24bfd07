#pragma once

// Boost.Asio driver for sans-IO connections: one UDP socket, datagram routing
// by connection id, timers and coroutine-friendly stream operations.
// All objects live on a single-threaded executor.

#include <deque>
#include <functional>
#include <memory>
#include <unordered_map>

#include <boost/asio/awaitable.hpp>
#include <boost/asio/io_context.hpp>
#include <boost/asio/ip/udp.hpp>
#include <boost/asio/steady_timer.hpp>

#include "quictun/common/async_event.hpp"
#include "quictun/quic/connection.hpp"
#include "quictun/relay/duplex.hpp"

namespace quictun::quic {

namespace asio = boost::asio;
using udp = asio::ip::udp;

// A stream or connection operation failed. Cancellation is reported as
// boost::system::system_error(operation_aborted) like any other endpoint.
class StreamError : public std::runtime_error {
public:
    enum class Kind { reset, stopped, connection_closed };
    StreamError(Kind kind, std::uint64_t code, const std::string& what)
        : std::runtime_error(what), kind_(kind), code_(code)
    {
    }
    Kind kind() const { return kind_; }
    // Application error code for reset/stopped.
    std::uint64_t code() const { return code_; }

private:
    Kind kind_;
    std::uint64_t code_;
};

class Endpoint;

class ConnectionHandle : public std::enable_shared_from_this<ConnectionHandle> {
public:
    ConnectionHandle(std::shared_ptr<Endpoint> endpoint, std::unique_ptr<Connection> conn, udp::endpoint peer);
    ~ConnectionHandle();

    // Completes when the handshake finishes; throws StreamError(connection_closed) on failure.
    asio::awaitable<void> wait_handshake();
    // Opens a bidirectional stream, waiting up to `wait` for stream credit. nullopt on timeout.
    asio::awaitable<std::optional<StreamId>> open_stream(Duration wait);
    // Next peer-initiated stream; nullopt once the connection is closed.
    asio::awaitable<std::optional<StreamId>> accept_stream();
    // Completes when the connection is fully closed.
    asio::awaitable<void> wait_closed();

    asio::awaitable<std::size_t> read(StreamId id, MutableByteView buffer);
    asio::awaitable<void> write_all(StreamId id, ByteView data);
    void finish(StreamId id);
    void reset(StreamId id, std::uint64_t code);
    void stop_sending(StreamId id, std::uint64_t code);
    void release(StreamId id);
    void cancel_stream(StreamId id);

    void close(std::uint64_t code, const std::string& reason);
    // True once closing has started or the endpoint tore the connection down.
    bool is_closing() const { return finalized_ || conn_->is_closing(); }
    bool is_closed() const { return finalized_; }
    bool handshake_complete() const { return conn_->handshake_complete(); }
    std::optional<ConnectionError> error() const { return conn_->error(); }
    ConnectionStats stats() const { return conn_->stats(); }
    std::size_t active_streams() const { return conn_->active_streams(); }
    const udp::endpoint& peer() const { return peer_; }
    const Connection& connection() const { return *conn_; }

private:
    friend class Endpoint;

    struct StreamWaiters {
        explicit StreamWaiters(asio::any_io_executor ex) : event(std::move(ex)) {}
        AsyncEvent event;
        bool cancelled = false;
    };

    void on_datagram(MutableByteView data, const udp::endpoint& from);
    // Drains events, flushes datagrams and re-arms the timer.
    void process();
    void schedule_process();
    void arm_timer();
    // Detaches from the endpoint and wakes every waiter.
    void finalize();
    StreamWaiters& waiters(StreamId id);
    void notify_stream(StreamId id);
    void notify_all();
    [[noreturn]] void throw_closed() const;

    std::shared_ptr<Endpoint> endpoint_;
    std::unique_ptr<Connection> conn_;
    udp::endpoint peer_;
    asio::steady_timer timer_;
    std::optional<TimePoint> armed_;
    bool process_scheduled_ = false;
    bool finalized_ = false;
    AsyncEvent conn_event_;
    std::deque<StreamId> accept_queue_;
    std::unordered_map<StreamId, std::unique_ptr<StreamWaiters>> streams_;
    Bytes tx_buf_;
};

class Endpoint : public std::enable_shared_from_this<Endpoint> {
public:
    // Server endpoints accept incoming connections; client endpoints only dial.
    static std::shared_ptr<Endpoint> server(asio::any_io_executor ex, const udp::endpoint& bind,
                                            const ConnectionConfig& config,
                                            std::shared_ptr<const TlsServerConfig> tls);
    static std::shared_ptr<Endpoint> client(asio::any_io_executor ex, const udp::endpoint& bind,
                                            const ConnectionConfig& config);
    ~Endpoint();

    // Starts a handshake; the returned handle may still be handshaking.
    std::shared_ptr<ConnectionHandle> connect(const udp::endpoint& server, TlsClientConfig tls);
    // Next incoming connection (handshake not necessarily complete); nullptr after close().
    asio::awaitable<std::shared_ptr<ConnectionHandle>> accept();

    udp::endpoint local_endpoint() const;
    // Stops receiving, closes connections with `code` and releases the socket.
    void close(std::uint64_t code = 0, const std::string& reason = "");
    bool closed() const { return closed_; }
    std::size_t connection_count() const { return connections_.size(); }

    asio::any_io_executor executor() const { return ex_; }

private:
    friend class ConnectionHandle;

    Endpoint(asio::any_io_executor ex, const udp::endpoint& bind, const ConnectionConfig& config,
             std::shared_ptr<const TlsServerConfig> tls);
    void start();
    asio::awaitable<void> receive_loop();
    void dispatch(MutableByteView data, const udp::endpoint& from);
    void send(ByteView datagram, const udp::endpoint& to);
    void remove(ConnectionHandle* handle);

    asio::any_io_executor ex_;
    udp::socket socket_;
    ConnectionConfig config_;
    std::shared_ptr<const TlsServerConfig> tls_;
    bool server_;
    bool closed_ = false;
    std::unordered_map<ConnectionId, std::shared_ptr<ConnectionHandle>, ConnectionIdHash> routes_;
    std::vector<std::shared_ptr<ConnectionHandle>> connections_;
    std::deque<std::shared_ptr<ConnectionHandle>> incoming_;
    AsyncEvent incoming_event_;
    Bytes rx_buf_;
};

// A bidirectional stream presented as a relay endpoint. Releases the stream on destruction.
class QuicStream final : public relay::DuplexEndpoint {
public:
    QuicStream(std::shared_ptr<ConnectionHandle> conn, StreamId id);
    ~QuicStream() override;

    asio::awaitable<std::size_t> read_some(MutableByteView buffer) override;
    asio::awaitable<void> write_all(ByteView data) override;
    asio::awaitable<void> shutdown_write() override;
    void cancel() override;
    void abort(std::uint64_t code) override;
    std::string label() const override;

    StreamId id() const { return id_; }
    const std::shared_ptr<ConnectionHandle>& connection() const { return conn_; }

private:
    std::shared_ptr<ConnectionHandle> conn_;
    StreamId id_;
    bool eof_ = false;
};

}  // namespace quictun::quic
