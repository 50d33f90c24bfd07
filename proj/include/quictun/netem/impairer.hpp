#pragma once

// UDP impairment proxy. Datagrams from clients arriving on the listen socket go
// to `forward` through one upstream socket per client address; replies come back
// the same way. Each direction has its own engine with the same profile.

#include <atomic>
#include <functional>
#include <map>
#include <mutex>
#include <queue>

#include <boost/asio/ip/udp.hpp>
#include <boost/asio/steady_timer.hpp>

#include "quictun/common/io_thread.hpp"
#include "quictun/netem/engine.hpp"

namespace quictun::netem {

namespace asio = boost::asio;
using udp = asio::ip::udp;

enum class Direction { forward, reverse };  // client->server, server->client

// Sees every datagram as received, before impairment. Runs on the impairer thread.
using CaptureTap = std::function<void(Direction, ByteView)>;

class Impairer {
public:
    // Binds `listen` and starts forwarding. Throws on bind failure.
    Impairer(udp::endpoint listen, udp::endpoint forward, ImpairmentProfile profile, CaptureTap tap = {});
    ~Impairer();
    Impairer(const Impairer&) = delete;
    Impairer& operator=(const Impairer&) = delete;

    udp::endpoint listen_endpoint() const { return listen_ep_; }
    // Consistent snapshot; n_sent = n_lost + n_forwarded always holds.
    PathStats stats(Direction dir) const;
    // Stops forwarding; an error that stopped the impairer early is returned.
    std::optional<std::string> stop();
    std::optional<std::string> error() const;
    IoThread& io() { return io_; }

private:
    struct Pending {
        TimePoint release;
        std::uint64_t order;
        Decision decision;
        Bytes data;
        Direction dir;
        udp::endpoint client;
        bool operator>(const Pending& o) const { return std::tie(release, order) > std::tie(o.release, o.order); }
    };
    struct Upstream {
        explicit Upstream(asio::any_io_executor ex) : socket(ex) {}
        udp::socket socket;
        Bytes buf;
    };

    void start();
    asio::awaitable<void> listen_loop();
    asio::awaitable<void> upstream_loop(udp::endpoint client, std::shared_ptr<Upstream> up);
    void on_datagram(Direction dir, const udp::endpoint& client, ByteView data);
    void flush_due(TimePoint now);
    void deliver(Pending& p);
    void arm_timer();
    void fail(const std::string& what);
    ImpairmentEngine& engine(Direction dir) { return dir == Direction::forward ? fwd_ : rev_; }

    udp::endpoint forward_;
    CaptureTap tap_;
    IoThread io_{"impairer"};
    udp::socket listen_;
    udp::endpoint listen_ep_;
    asio::steady_timer timer_;
    std::optional<TimePoint> armed_;
    mutable std::mutex mu_;
    ImpairmentEngine fwd_;
    ImpairmentEngine rev_;
    std::priority_queue<Pending, std::vector<Pending>, std::greater<>> queue_;
    std::uint64_t order_ = 0;
    std::map<udp::endpoint, std::shared_ptr<Upstream>> upstreams_;
    std::optional<std::string> error_;
    std::atomic<bool> stopped_{false};
};

}  // namespace quictun::netem
