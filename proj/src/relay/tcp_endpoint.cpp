#include "quictun/relay/tcp_endpoint.hpp"

#include <boost/asio/read.hpp>
#include <boost/asio/redirect_error.hpp>
#include <boost/asio/use_awaitable.hpp>
#include <boost/asio/write.hpp>

namespace quictun::relay {

namespace asio = boost::asio;

TcpEndpoint::TcpEndpoint(asio::ip::tcp::socket socket) : socket_(std::move(socket))
{
    boost::system::error_code ec;
    socket_.set_option(asio::ip::tcp::no_delay(true), ec);
    auto remote = socket_.remote_endpoint(ec);
    label_ = ec ? "tcp" : "tcp " + remote.address().to_string() + ":" + std::to_string(remote.port());
}

TcpEndpoint::~TcpEndpoint()
{
    boost::system::error_code ignored;
    socket_.close(ignored);
}

asio::awaitable<std::size_t> TcpEndpoint::read_some(MutableByteView buffer)
{
    if (eof_) co_return 0;
    if (cancelled_) throw boost::system::system_error(asio::error::operation_aborted);
    boost::system::error_code ec;
    auto n = co_await socket_.async_read_some(asio::buffer(buffer.data(), buffer.size()),
                                              asio::redirect_error(asio::use_awaitable, ec));
    if (ec == asio::error::eof) {
        eof_ = true;
        co_return 0;
    }
    if (ec) throw boost::system::system_error(ec, label_ + " read");
    co_return n;
}

asio::awaitable<void> TcpEndpoint::write_all(ByteView data)
{
    if (cancelled_) throw boost::system::system_error(asio::error::operation_aborted);
    boost::system::error_code ec;
    co_await asio::async_write(socket_, asio::buffer(data.data(), data.size()),
                               asio::redirect_error(asio::use_awaitable, ec));
    if (ec) throw boost::system::system_error(ec, label_ + " write");
}

asio::awaitable<void> TcpEndpoint::shutdown_write()
{
    if (cancelled_) throw boost::system::system_error(asio::error::operation_aborted);
    boost::system::error_code ec;
    socket_.shutdown(asio::ip::tcp::socket::shutdown_send, ec);
    if (ec && ec != asio::error::not_connected) throw boost::system::system_error(ec, label_ + " shutdown");
    co_return;
}

void TcpEndpoint::cancel()
{
    cancelled_ = true;
    boost::system::error_code ignored;
    socket_.cancel(ignored);
}

void TcpEndpoint::abort(std::uint64_t)
{
    boost::system::error_code ignored;
    socket_.set_option(asio::socket_base::linger(true, 0), ignored);
    socket_.close(ignored);
}

}  // namespace quictun::relay
