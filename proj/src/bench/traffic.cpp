#include "quictun/bench/traffic.hpp"

#include <boost/asio/detached.hpp>
#include <boost/asio/redirect_error.hpp>
#include <boost/asio/steady_timer.hpp>
#include <boost/asio/use_awaitable.hpp>

#include "quictun/common/log.hpp"
#include "quictun/common/payload.hpp"
#include "quictun/tunnel/tunnel.hpp"

namespace quictun::bench {

namespace {

constexpr std::size_t kChunk = 64 * 1024;

}  // namespace

double SinkResult::elapsed_seconds() const
{
    if (!first_byte) return 0;
    return std::chrono::duration<double>(finished - *first_byte).count();
}

TrafficSink::TrafficSink(tcp::endpoint bind) : acceptor_(io_.context())
{
    io_.run_sync([&] {
        acceptor_.open(bind.protocol());
        acceptor_.set_option(tcp::acceptor::reuse_address(true));
        acceptor_.bind(bind);
        acceptor_.listen();
        local_ = acceptor_.local_endpoint();
        asio::co_spawn(io_.context(), accept_loop(), asio::detached);
    });
}

TrafficSink::~TrafficSink()
{
    io_.run_sync([&] {
        boost::system::error_code ignored;
        acceptor_.close(ignored);
    });
    abort_all();
    io_.stop();
}

void TrafficSink::abort_all()
{
    io_.run_sync([&] {
        for (auto& w : live_) {
            if (auto s = w.lock()) {
                boost::system::error_code ignored;
                s->set_option(asio::socket_base::linger(true, 0), ignored);
                s->close(ignored);
            }
        }
        live_.clear();
    });
}

std::optional<SinkResult> TrafficSink::wait_result(quic::Duration timeout)
{
    std::unique_lock lock(mu_);
    if (!cv_.wait_for(lock, timeout, [&] { return !results_.empty(); })) return std::nullopt;
    auto r = std::move(results_.front());
    results_.pop_front();
    return r;
}

asio::awaitable<void> TrafficSink::accept_loop()
{
    for (;;) {
        boost::system::error_code ec;
        auto s = std::make_shared<tcp::socket>(io_.context());
        co_await acceptor_.async_accept(*s, asio::redirect_error(asio::use_awaitable, ec));
        if (ec == asio::error::operation_aborted || !acceptor_.is_open()) co_return;
        if (ec) continue;
        std::erase_if(live_, [](auto& w) { return w.expired(); });
        live_.push_back(s);
        asio::co_spawn(io_.context(), receive(std::move(s)), asio::detached);
    }
}

asio::awaitable<void> TrafficSink::receive(std::shared_ptr<tcp::socket> socket)
{
    SinkResult r;
    r.accepted = Clock::now();
    StreamDigest digest;
    Bytes buf(kChunk);
    for (;;) {
        boost::system::error_code ec;
        auto n = co_await socket->async_read_some(asio::buffer(buf), asio::redirect_error(asio::use_awaitable, ec));
        auto now = Clock::now();
        if (n > 0) {
            if (!r.first_byte) r.first_byte = now;
            digest.update(ByteView(buf.data(), n));
            r.bytes += n;
        }
        if (ec == asio::error::eof) {
            r.clean_eof = true;
            r.finished = now;
            break;
        }
        if (ec) {
            r.error = ec.message();
            r.finished = now;
            break;
        }
    }
    r.digest = digest.value();
    boost::system::error_code ignored;
    socket->close(ignored);
    {
        std::lock_guard lock(mu_);
        results_.push_back(std::move(r));
    }
    cv_.notify_all();
}

TrafficGenerator::~TrafficGenerator()
{
    close();
    io_.stop();
}

void TrafficGenerator::close()
{
    io_.run_sync([&] {
        if (socket_) {
            boost::system::error_code ignored;
            socket_->close(ignored);
            socket_.reset();
        }
    });
}

GeneratorResult TrafficGenerator::run(const tcp::endpoint& to, const GeneratorOptions& options)
{
    close();
    return io_.run_sync(run_async(to, options));
}

asio::awaitable<GeneratorResult> TrafficGenerator::run_async(tcp::endpoint to, GeneratorOptions options)
{
    GeneratorResult result;
    try {
        auto s = co_await tunnel::dial(to, options.connect_timeout);
        socket_ = std::make_shared<tcp::socket>(std::move(s));
    } catch (const std::exception& e) {
        result.error = std::string("connect: ") + e.what();
        co_return result;
    }
    auto& sock = *socket_;
    boost::system::error_code ignored;
    sock.set_option(asio::socket_base::send_buffer_size(options.send_buffer), ignored);
    sock.set_option(tcp::no_delay(true), ignored);

    PayloadGenerator payload(options.seed);
    Bytes chunk(kChunk);
    std::size_t offset = chunk.size();  // unsent bytes start here

    auto start = Clock::now();
    auto deadline = start + options.duration;
    bool expired = false;
    asio::steady_timer timer(sock.get_executor());
    timer.expires_at(deadline);
    timer.async_wait([&, keep = socket_](boost::system::error_code ec) {
        if (ec) return;
        expired = true;
        boost::system::error_code e;
        keep->cancel(e);
    });

    while (!expired) {
        if (options.max_bytes && result.bytes >= *options.max_bytes) break;
        if (offset == chunk.size()) {
            std::size_t n = chunk.size();
            if (options.max_bytes) n = static_cast<std::size_t>(std::min<std::uint64_t>(n, *options.max_bytes - result.bytes));
            chunk.resize(n);
            payload.fill(MutableByteView(chunk.data(), n));
            offset = 0;
        }
        boost::system::error_code ec;
        auto n = co_await sock.async_write_some(asio::buffer(chunk.data() + offset, chunk.size() - offset),
                                                asio::redirect_error(asio::use_awaitable, ec));
        result.bytes += n;
        offset += n;
        if (ec == asio::error::operation_aborted && expired) break;
        if (ec) {
            result.error = "send: " + ec.message();
            break;
        }
    }
    timer.cancel();
    result.elapsed_seconds = std::chrono::duration<double>(Clock::now() - start).count();
    sock.shutdown(tcp::socket::shutdown_send, ignored);
    co_return result;
}

}  // namespace quictun::bench
