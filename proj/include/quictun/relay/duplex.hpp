#pragma once

#include <cstdint>
#include <string>

#include <boost/asio/awaitable.hpp>

#include "quictun/common/bytes.hpp"

namespace quictun::relay {

// An ordered, full-duplex byte stream (a TCP connection, a tunnel stream, ...).
// Failures and cancellation surface as exceptions from the awaitables.
class DuplexEndpoint {
public:
    virtual ~DuplexEndpoint() = default;

    // Reads at least one byte; returns 0 once the peer finished writing.
    // After end of stream every later call also returns 0.
    virtual boost::asio::awaitable<std::size_t> read_some(MutableByteView buffer) = 0;
    virtual boost::asio::awaitable<void> write_all(ByteView data) = 0;
    // Flushes pending data and half-closes the write side.
    virtual boost::asio::awaitable<void> shutdown_write() = 0;
    // Makes pending and future operations fail with operation_aborted.
    virtual void cancel() = 0;
    // Abortive close of both directions; `code` is passed on where the transport has one.
    virtual void abort(std::uint64_t code) = 0;
    virtual std::string label() const = 0;
};

}  // namespace quictun::relay
