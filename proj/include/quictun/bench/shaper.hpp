#pragma once

// Userspace rate cap for the native TCP path: a TCP proxy whose writes pass a
// token bucket of the same depth the impairer uses (2 x rate x 100 ms).

#include <boost/asio/ip/tcp.hpp>
#include <boost/asio/steady_timer.hpp>

#include "quictun/common/io_thread.hpp"
#include "quictun/quic/types.hpp"
#include "quictun/relay/duplex.hpp"

namespace quictun::bench {

namespace asio = boost::asio;
using tcp = asio::ip::tcp;

// Paces byte transmissions to `rate` bytes/s with a burst of depth bytes.
class TokenBucket {
public:
    TokenBucket(std::uint64_t rate_bytes_per_sec, std::uint64_t depth_bytes);
    // Earliest time `size` bytes may leave, given that they are ready at `now`.
    // Reserves the tokens.
    quic::TimePoint reserve(std::size_t size, quic::TimePoint now);

private:
    double rate_;
    quic::Duration tau_;
    std::optional<quic::TimePoint> tat_;
};

// Wraps an endpoint so that writes are paced by `bucket`.
class ShapedEndpoint final : public relay::DuplexEndpoint {
public:
    ShapedEndpoint(std::unique_ptr<relay::DuplexEndpoint> inner, std::shared_ptr<TokenBucket> bucket);

    asio::awaitable<std::size_t> read_some(MutableByteView buffer) override { return inner_->read_some(buffer); }
    asio::awaitable<void> write_all(ByteView data) override;
    asio::awaitable<void> shutdown_write() override { return inner_->shutdown_write(); }
    void cancel() override;
    void abort(std::uint64_t code) override { inner_->abort(code); }
    std::string label() const override { return inner_->label(); }

private:
    std::unique_ptr<relay::DuplexEndpoint> inner_;
    std::shared_ptr<TokenBucket> bucket_;
    std::unique_ptr<asio::steady_timer> timer_;
    bool cancelled_ = false;
};

class TcpShaper {
public:
    TcpShaper(tcp::endpoint listen, tcp::endpoint forward, std::uint64_t rate_bytes_per_sec);
    ~TcpShaper();
    TcpShaper(const TcpShaper&) = delete;
    TcpShaper& operator=(const TcpShaper&) = delete;

    tcp::endpoint endpoint() const { return local_; }
    IoThread& io() { return io_; }

private:
    asio::awaitable<void> accept_loop();
    asio::awaitable<void> session(tcp::socket client);

    IoThread io_{"shaper"};
    tcp::endpoint forward_;
    tcp::acceptor acceptor_;
    tcp::endpoint local_;
    std::shared_ptr<TokenBucket> upstream_;
    std::shared_ptr<TokenBucket> downstream_;
};

}  // namespace quictun::bench
