#include "quictun/bench/shaper.hpp"

#include <boost/asio/detached.hpp>
#include <boost/asio/redirect_error.hpp>
#include <boost/asio/this_coro.hpp>
#include <boost/asio/use_awaitable.hpp>

#include "quictun/common/log.hpp"
#include "quictun/relay/relay.hpp"
#include "quictun/relay/tcp_endpoint.hpp"
#include "quictun/tunnel/tunnel.hpp"

namespace quictun::bench {

TokenBucket::TokenBucket(std::uint64_t rate_bytes_per_sec, std::uint64_t depth_bytes)
    : rate_(static_cast<double>(rate_bytes_per_sec))
{
    if (rate_bytes_per_sec == 0) throw std::invalid_argument("token bucket rate must be positive");
    tau_ = std::chrono::duration_cast<quic::Duration>(std::chrono::duration<double>(depth_bytes / rate_));
}

quic::TimePoint TokenBucket::reserve(std::size_t size, quic::TimePoint now)
{
    if (!tat_ || *tat_ < now) tat_ = now;
    auto departure = std::max(now, *tat_ - tau_);
    *tat_ += std::chrono::duration_cast<quic::Duration>(std::chrono::duration<double>(size / rate_));
    return departure;
}

ShapedEndpoint::ShapedEndpoint(std::unique_ptr<relay::DuplexEndpoint> inner, std::shared_ptr<TokenBucket> bucket)
    : inner_(std::move(inner)), bucket_(std::move(bucket))
{
}

asio::awaitable<void> ShapedEndpoint::write_all(ByteView data)
{
    if (cancelled_) throw boost::system::system_error(asio::error::operation_aborted);
    auto now = quic::Clock::now();
    auto departure = bucket_->reserve(data.size(), now);
    if (departure > now) {
        if (!timer_) timer_ = std::make_unique<asio::steady_timer>(co_await asio::this_coro::executor);
        timer_->expires_at(departure);
        boost::system::error_code ec;
        co_await timer_->async_wait(asio::redirect_error(asio::use_awaitable, ec));
        if (cancelled_) throw boost::system::system_error(asio::error::operation_aborted);
    }
    co_await inner_->write_all(data);
}

void ShapedEndpoint::cancel()
{
    cancelled_ = true;
    if (timer_) timer_->cancel();
    inner_->cancel();
}

TcpShaper::TcpShaper(tcp::endpoint listen, tcp::endpoint forward, std::uint64_t rate_bytes_per_sec)
    : forward_(forward), acceptor_(io_.context())
{
    // Same burst allowance as the impairer's bucket.
    auto depth = 2 * rate_bytes_per_sec / 10;
    upstream_ = std::make_shared<TokenBucket>(rate_bytes_per_sec, depth);
    downstream_ = std::make_shared<TokenBucket>(rate_bytes_per_sec, depth);
    io_.run_sync([&] {
        acceptor_.open(listen.protocol());
        acceptor_.set_option(tcp::acceptor::reuse_address(true));
        acceptor_.bind(listen);
        acceptor_.listen();
        local_ = acceptor_.local_endpoint();
        asio::co_spawn(io_.context(), accept_loop(), asio::detached);
    });
}

TcpShaper::~TcpShaper()
{
    io_.run_sync([&] {
        boost::system::error_code ignored;
        acceptor_.close(ignored);
    });
    io_.stop();
}

asio::awaitable<void> TcpShaper::accept_loop()
{
    for (;;) {
        boost::system::error_code ec;
        tcp::socket s(io_.context());
        co_await acceptor_.async_accept(s, asio::redirect_error(asio::use_awaitable, ec));
        if (ec == asio::error::operation_aborted || !acceptor_.is_open()) co_return;
        if (ec) continue;
        asio::co_spawn(io_.context(), session(std::move(s)), asio::detached);
    }
}

asio::awaitable<void> TcpShaper::session(tcp::socket client)
{
    std::unique_ptr<relay::DuplexEndpoint> a = std::make_unique<relay::TcpEndpoint>(std::move(client));
    tcp::socket upstream(io_.context());
    try {
        upstream = co_await tunnel::dial(forward_, std::chrono::seconds(5));
    } catch (const std::exception& e) {
        log().warn("shaper: {}", e.what());
        a->abort(0);
        co_return;
    }
    // a is written with downstream data, b with upstream data.
    ShapedEndpoint sa(std::move(a), downstream_);
    ShapedEndpoint sb(std::make_unique<relay::TcpEndpoint>(std::move(upstream)), upstream_);
    co_await relay::bidirectional_copy(sa, sb);
}

}  // namespace quictun::bench
