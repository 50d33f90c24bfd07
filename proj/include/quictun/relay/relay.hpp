#pragma once

#include <chrono>
#include <string>

#include <boost/asio/awaitable.hpp>

#include "quictun/relay/duplex.hpp"

namespace quictun::relay {

struct RelayOptions {
    std::size_t buffer_size = 16 * 1024;
    // After one direction fails, the other may keep running this long before it is cancelled.
    std::chrono::steady_clock::duration drain_timeout = std::chrono::seconds(1);
    // Reset/abort code used on both endpoints when the relay ends in error.
    std::uint64_t abort_code = 0x02;
};

enum class Termination { clean_eof_both, error_a, error_b, cancelled };

const char* to_string(Termination t);

struct RelayOutcome {
    std::uint64_t bytes_a_to_b = 0;
    std::uint64_t bytes_b_to_a = 0;
    Termination termination = Termination::clean_eof_both;
    std::string error;  // first failure, empty on clean termination

    friend bool operator==(const RelayOutcome& x, const RelayOutcome& y)
    {
        return x.bytes_a_to_b == y.bytes_a_to_b && x.bytes_b_to_a == y.bytes_b_to_a &&
               x.termination == y.termination;
    }
};

struct PumpResult {
    enum class Status { done, read_failed, write_failed, cancelled };
    std::uint64_t bytes = 0;  // bytes fully written to dst
    Status status = Status::done;
    std::string error;
};

// Copies src to dst until end of stream, then half-closes dst. Never throws;
// failures are reported in the result together with the side that failed.
boost::asio::awaitable<PumpResult> pump(DuplexEndpoint& src, DuplexEndpoint& dst, std::size_t buffer_size);

// Runs a->b and b->a concurrently and returns once both have stopped.
boost::asio::awaitable<RelayOutcome> bidirectional_copy(DuplexEndpoint& a, DuplexEndpoint& b,
                                                        RelayOptions options = {});

}  // namespace quictun::relay
