#include "quictun/netem/impairer.hpp"

#include <boost/asio/co_spawn.hpp>
#include <boost/asio/detached.hpp>
#include <boost/asio/redirect_error.hpp>
#include <boost/asio/use_awaitable.hpp>

#include "quictun/common/log.hpp"

namespace quictun::netem {

namespace {

constexpr std::size_t kMaxDatagram = 65536;
constexpr int kSocketBuffer = 4 * 1024 * 1024;

ImpairmentProfile reverse_profile(ImpairmentProfile p)
{
    // Different stream of decisions for the return path, still fixed by the seed.
    p.seed ^= 0x9e3779b97f4a7c15ULL;
    return p;
}

bool transient(const boost::system::error_code& ec)
{
    return ec == asio::error::would_block || ec == asio::error::connection_refused ||
           ec == asio::error::no_buffer_space || ec == asio::error::message_size ||
           ec == asio::error::host_unreachable || ec == asio::error::network_unreachable;
}

void tune(udp::socket& s)
{
    boost::system::error_code ignored;
    s.set_option(asio::socket_base::receive_buffer_size(kSocketBuffer), ignored);
    s.set_option(asio::socket_base::send_buffer_size(kSocketBuffer), ignored);
}

}  // namespace

Impairer::Impairer(udp::endpoint listen, udp::endpoint forward, ImpairmentProfile profile, CaptureTap tap)
    : forward_(std::move(forward)),
      tap_(std::move(tap)),
      listen_(io_.context()),
      timer_(io_.context()),
      fwd_(profile),
      rev_(reverse_profile(profile))
{
    io_.run_sync([&] {
        listen_.open(listen.protocol());
        listen_.bind(listen);
        listen_.non_blocking(true);
        tune(listen_);
        listen_ep_ = listen_.local_endpoint();
        asio::co_spawn(io_.context(), listen_loop(), asio::detached);
    });
    log().info("impairer {}:{} -> {}:{} loss={} delay={}ms reorder={} rate={}", listen_ep_.address().to_string(),
               listen_ep_.port(), forward_.address().to_string(), forward_.port(), profile.loss_rate,
               std::chrono::duration<double, std::milli>(profile.delay).count(), profile.reorder_rate,
               profile.rate_limit_bytes_per_sec.value_or(0));
}

Impairer::~Impairer()
{
    stop();
}

std::optional<std::string> Impairer::stop()
{
    if (!stopped_) {
        io_.run_sync([&] {
            stopped_ = true;
            boost::system::error_code ignored;
            listen_.close(ignored);
            for (auto& [ep, up] : upstreams_) up->socket.close(ignored);
            timer_.cancel();
        });
        io_.stop();
    }
    return error();
}

std::optional<std::string> Impairer::error() const
{
    std::lock_guard lock(mu_);
    return error_;
}

PathStats Impairer::stats(Direction dir) const
{
    std::lock_guard lock(mu_);
    return dir == Direction::forward ? fwd_.stats() : rev_.stats();
}

void Impairer::fail(const std::string& what)
{
    {
        std::lock_guard lock(mu_);
        if (!error_) error_ = what;
    }
    log().error("impairer stopped: {}", what);
    stopped_ = true;
    boost::system::error_code ignored;
    listen_.close(ignored);
    for (auto& [ep, up] : upstreams_) up->socket.close(ignored);
    timer_.cancel();
}

asio::awaitable<void> Impairer::listen_loop()
{
    Bytes buf(kMaxDatagram);
    udp::endpoint from;
    while (!stopped_) {
        boost::system::error_code ec;
        auto n = co_await listen_.async_receive_from(asio::buffer(buf), from,
                                                     asio::redirect_error(asio::use_awaitable, ec));
        if (stopped_ || ec == asio::error::operation_aborted) co_return;
        if (ec) {
            if (transient(ec)) continue;
            fail("listen socket: " + ec.message());
            co_return;
        }
        on_datagram(Direction::forward, from, ByteView(buf.data(), n));
    }
}

asio::awaitable<void> Impairer::upstream_loop(udp::endpoint client, std::shared_ptr<Upstream> up)
{
    while (!stopped_) {
        boost::system::error_code ec;
        auto n = co_await up->socket.async_receive(asio::buffer(up->buf), asio::redirect_error(asio::use_awaitable, ec));
        if (stopped_ || ec == asio::error::operation_aborted) co_return;
        if (ec) {
            if (transient(ec)) continue;
            fail("forward socket: " + ec.message());
            co_return;
        }
        on_datagram(Direction::reverse, client, ByteView(up->buf.data(), n));
    }
}

void Impairer::on_datagram(Direction dir, const udp::endpoint& client, ByteView data)
{
    if (tap_) tap_(dir, data);
    auto now = std::chrono::steady_clock::now();
    flush_due(now);
    if (stopped_) return;
    Decision d;
    {
        std::lock_guard lock(mu_);
        d = engine(dir).decide(data.size(), now);
    }
    if (d.drop) return;
    Pending p{d.release, order_++, d, Bytes(data.begin(), data.end()), dir, client};
    if (queue_.empty() && d.release <= now) {
        deliver(p);
        return;
    }
    queue_.push(std::move(p));
    arm_timer();
}

void Impairer::flush_due(TimePoint now)
{
    while (!queue_.empty() && queue_.top().release <= now && !stopped_) {
        auto p = std::move(const_cast<Pending&>(queue_.top()));
        queue_.pop();
        deliver(p);
    }
}

void Impairer::deliver(Pending& p)
{
    boost::system::error_code ec;
    if (p.dir == Direction::forward) {
        auto it = upstreams_.find(p.client);
        if (it == upstreams_.end()) {
            auto up = std::make_shared<Upstream>(io_.executor());
            up->socket.open(forward_.protocol());
            up->socket.non_blocking(true);
            tune(up->socket);
            up->socket.connect(forward_, ec);
            if (ec) {
                fail("connect forward socket: " + ec.message());
                return;
            }
            up->buf.resize(kMaxDatagram);
            it = upstreams_.emplace(p.client, up).first;
            asio::co_spawn(io_.context(), upstream_loop(p.client, up), asio::detached);
        }
        it->second->socket.send(asio::buffer(p.data), 0, ec);
    } else {
        listen_.send_to(asio::buffer(p.data), p.client, 0, ec);
    }
    if (ec && !transient(ec)) {
        fail("send: " + ec.message());
        return;
    }
    // A datagram the kernel refused still left the impairer's schedule.
    std::lock_guard lock(mu_);
    engine(p.dir).on_delivered(p.decision);
}

void Impairer::arm_timer()
{
    if (queue_.empty() || stopped_) return;
    auto next = queue_.top().release;
    if (armed_ && *armed_ <= next) return;
    armed_ = next;
    timer_.expires_at(next);
    timer_.async_wait([this](boost::system::error_code ec) {
        if (ec) return;
        armed_.reset();
        flush_due(std::chrono::steady_clock::now());
        arm_timer();
    });
}

}  // namespace quictun::netem
