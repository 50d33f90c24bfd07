#pragma once

#include <boost/asio/ip/tcp.hpp>

#include "quictun/relay/duplex.hpp"

namespace quictun::relay {

class TcpEndpoint final : public DuplexEndpoint {
public:
    explicit TcpEndpoint(boost::asio::ip::tcp::socket socket);
    ~TcpEndpoint() override;

    boost::asio::awaitable<std::size_t> read_some(MutableByteView buffer) override;
    boost::asio::awaitable<void> write_all(ByteView data) override;
    boost::asio::awaitable<void> shutdown_write() override;
    void cancel() override;
    // Closes with RST; TCP has no application code.
    void abort(std::uint64_t code) override;
    std::string label() const override { return label_; }

    boost::asio::ip::tcp::socket& socket() { return socket_; }

private:
    boost::asio::ip::tcp::socket socket_;
    std::string label_;
    bool eof_ = false;
    bool cancelled_ = false;
};

}  // namespace quictun::relay
