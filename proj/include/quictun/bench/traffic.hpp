#pragma once

// Built-in traffic generator and sink: a seeded byte stream pushed for a fixed
// duration, and a server that counts, times and digests what arrives.

#include <array>
#include <condition_variable>
#include <deque>
#include <mutex>

#include <boost/asio/ip/tcp.hpp>

#include "quictun/common/io_thread.hpp"
#include "quictun/quic/types.hpp"

namespace quictun::bench {

namespace asio = boost::asio;
using tcp = asio::ip::tcp;
using Clock = std::chrono::steady_clock;

struct SinkResult {
    std::uint64_t bytes = 0;
    Clock::time_point accepted{};
    std::optional<Clock::time_point> first_byte;
    Clock::time_point finished{};
    bool clean_eof = false;
    std::string error;
    std::array<std::uint8_t, 32> digest{};

    // first byte -> end of stream, 0 when nothing arrived
    double elapsed_seconds() const;
};

class TrafficSink {
public:
    explicit TrafficSink(tcp::endpoint bind);
    ~TrafficSink();
    TrafficSink(const TrafficSink&) = delete;
    TrafficSink& operator=(const TrafficSink&) = delete;

    tcp::endpoint endpoint() const { return local_; }
    // Next finished connection, in completion order.
    std::optional<SinkResult> wait_result(quic::Duration timeout);
    // Tears down connections that are still receiving.
    void abort_all();
    IoThread& io() { return io_; }

private:
    asio::awaitable<void> accept_loop();
    asio::awaitable<void> receive(std::shared_ptr<tcp::socket> socket);

    IoThread io_{"sink"};
    tcp::acceptor acceptor_;
    tcp::endpoint local_;
    std::vector<std::weak_ptr<tcp::socket>> live_;
    std::mutex mu_;
    std::condition_variable cv_;
    std::deque<SinkResult> results_;
};

struct GeneratorOptions {
    std::uint64_t seed = 1;
    quic::Duration duration = std::chrono::seconds(10);
    // Stop early once this many bytes are written.
    std::optional<std::uint64_t> max_bytes;
    quic::Duration connect_timeout = std::chrono::seconds(5);
    // Kernel send buffer; bounds how much data is still queued when the clock stops.
    int send_buffer = 256 * 1024;
};

struct GeneratorResult {
    std::uint64_t bytes = 0;  // accepted by the local TCP stack
    double elapsed_seconds = 0;
    std::string error;
};

class TrafficGenerator {
public:
    TrafficGenerator() = default;
    ~TrafficGenerator();
    TrafficGenerator(const TrafficGenerator&) = delete;
    TrafficGenerator& operator=(const TrafficGenerator&) = delete;

    // Connects, writes the seeded stream until the duration ends, then half-closes.
    // The socket stays open until the next run() or destruction.
    GeneratorResult run(const tcp::endpoint& to, const GeneratorOptions& options);
    void close();
    IoThread& io() { return io_; }

private:
    asio::awaitable<GeneratorResult> run_async(tcp::endpoint to, GeneratorOptions options);

    IoThread io_{"generator"};
    std::shared_ptr<tcp::socket> socket_;
};

}  // namespace quictun::bench
