#include <gtest/gtest.h>

#include <httplib.h>

#include "quictun/tunnel/tunnel.hpp"
#include "support/tcp_servers.hpp"

using namespace quictun;
using namespace quictun::tunnel;
using namespace std::chrono_literals;
using quictun::testing::echo_roundtrip;
using quictun::testing::EchoServer;
using quictun::testing::loopback_any;

namespace {

udp::endpoint udp_loopback(unsigned short port = 0)
{
    return {asio::ip::make_address("127.0.0.1"), port};
}

TunnelServerConfig server_config(tcp::endpoint dest, unsigned short port = 0)
{
    TunnelServerConfig c;
    c.bind_tunnel_addr = udp_loopback(port);
    c.dest_tcp_addr = dest;
    return c;
}

TunnelClientConfig client_config(udp::endpoint dest)
{
    TunnelClientConfig c;
    c.bind_tcp_addr = loopback_any();
    c.dest_tunnel_addr = dest;
    c.trust_mode = security::TrustMode::insecure_accept_any;
    return c;
}

// Sends `msg`, optionally half-closes and returns everything read until EOF (or the error text).
std::string talk(const tcp::endpoint& to, const std::string& msg, boost::system::error_code* error = nullptr,
                 bool half_close = true)
{
    asio::io_context ctx;
    tcp::socket s(ctx);
    s.connect(to);
    asio::write(s, asio::buffer(msg));
    if (half_close) s.shutdown(tcp::socket::shutdown_send);
    std::string out;
    boost::system::error_code ec;
    asio::read(s, asio::dynamic_buffer(out), ec);
    if (error) *error = ec;
    return out;
}

struct Tunnel {
    EchoServer echo;
    TunnelServer server{server_config(echo.endpoint())};
    TunnelClient client{client_config(server.local_endpoint())};
};

}  // namespace

TEST(Tunnel, EchoHello)
{
    Tunnel t;
    EXPECT_EQ(talk(t.client.local_endpoint(), "hello"), "hello");
    EXPECT_EQ(t.client.handshakes_completed(), 1u);
}

TEST(Tunnel, LargeTransferBothDirections)
{
    Tunnel t;
    auto r = echo_roundtrip(t.client.local_endpoint(), 42, 8 * 1024 * 1024);
    EXPECT_TRUE(r.ok) << r.error << " sent=" << r.sent << " received=" << r.received;
}

TEST(Tunnel, EmptySessionCompletesWithZeroCounters)
{
    Tunnel t;
    EXPECT_EQ(talk(t.client.local_endpoint(), ""), "");
    // Session bookkeeping finishes shortly after the TCP side closes.
    for (int i = 0; i < 100 && t.server.completed_sessions().empty(); ++i) std::this_thread::sleep_for(10ms);
    auto sessions = t.server.completed_sessions();
    ASSERT_EQ(sessions.size(), 1u);
    ASSERT_TRUE(sessions[0].outcome);
    EXPECT_EQ(sessions[0].outcome->bytes_a_to_b, 0u);
    EXPECT_EQ(sessions[0].outcome->bytes_b_to_a, 0u);
    EXPECT_EQ(sessions[0].outcome->termination, relay::Termination::clean_eof_both);
}

TEST(Tunnel, SequentialSessionsShareOneConnection)
{
    Tunnel t;
    for (int i = 0; i < 5; ++i) {
        auto r = echo_roundtrip(t.client.local_endpoint(), i, 10000 * i);
        ASSERT_TRUE(r.ok) << r.error;
        std::this_thread::sleep_for(50ms);
    }
    EXPECT_EQ(t.client.handshakes_completed(), 1u);
    EXPECT_EQ(t.server.connections_accepted(), 1u);
    EXPECT_EQ(t.echo.connections(), 5u);
}

TEST(Tunnel, ConcurrentSessionsAreIsolated)
{
    Tunnel t;
    std::vector<std::thread> threads;
    std::vector<quictun::testing::EchoResult> results(20);
    for (int i = 0; i < 20; ++i) {
        threads.emplace_back([&, i] { results[i] = echo_roundtrip(t.client.local_endpoint(), 100 + i, 200000 + i * 777); });
    }
    // Abort a few unrelated sessions mid-flight.
    std::vector<std::thread> aborters;
    for (int i = 0; i < 5; ++i) {
        aborters.emplace_back([&] {
            asio::io_context ctx;
            tcp::socket s(ctx);
            s.connect(t.client.local_endpoint());
            std::vector<std::uint8_t> junk(100000, 0xab);
            asio::write(s, asio::buffer(junk));
            s.set_option(asio::socket_base::linger(true, 0));
            s.close();
        });
    }
    for (auto& th : threads) th.join();
    for (auto& th : aborters) th.join();
    for (auto& r : results) EXPECT_TRUE(r.ok) << r.error;
}

TEST(Tunnel, DialFailureResetsStreamAndListenerSurvives)
{
    // A port with nothing listening.
    tcp::endpoint dead;
    {
        asio::io_context ctx;
        tcp::acceptor a(ctx, loopback_any());
        dead = a.local_endpoint();
    }
    TunnelServer server(server_config(dead));
    TunnelClient client(client_config(server.local_endpoint()));
    for (int round = 0; round < 2; ++round) {
        auto start = std::chrono::steady_clock::now();
        boost::system::error_code ec;
        auto got = talk(client.local_endpoint(), "data", &ec);
        auto took = std::chrono::steady_clock::now() - start;
        EXPECT_EQ(got, "");
        EXPECT_TRUE(ec) << "the local TCP connection should be torn down";
        EXPECT_LT(took, 10s);
    }
    for (int i = 0; i < 100 && client.completed_sessions().size() < 2; ++i) std::this_thread::sleep_for(10ms);
    auto sessions = client.completed_sessions();
    ASSERT_EQ(sessions.size(), 2u);
    for (auto& s : sessions) {
        ASSERT_TRUE(s.outcome);
        EXPECT_NE(s.outcome->termination, relay::Termination::clean_eof_both);
        EXPECT_NE(s.outcome->error.find("code 0x1)"), std::string::npos) << s.outcome->error;
    }
    auto server_sessions = server.completed_sessions();
    ASSERT_EQ(server_sessions.size(), 2u);
    EXPECT_NE(server_sessions[0].error.find("dial failed"), std::string::npos);
}

TEST(Tunnel, StrictTrustRejectsUnpinnedSelfSigned)
{
    EchoServer echo;
    TunnelServer server(server_config(echo.endpoint()));
    auto cfg = client_config(server.local_endpoint());
    cfg.trust_mode = security::TrustMode::verify_standard;
    cfg.handshake_attempts = 1;
    TunnelClient strict(cfg);
    boost::system::error_code ec;
    EXPECT_EQ(talk(strict.local_endpoint(), "x", &ec), "");
    EXPECT_EQ(strict.handshakes_completed(), 0u);
    EXPECT_EQ(strict.sessions_refused(), 1u);

    cfg.pinned_roots_der = {server.certificate().leaf()};
    TunnelClient pinned(cfg);
    EXPECT_EQ(talk(pinned.local_endpoint(), "x"), "x");
    EXPECT_EQ(pinned.handshakes_completed(), 1u);
}

TEST(Tunnel, ReconnectsAfterServerRestart)
{
    EchoServer echo;
    auto server = std::make_unique<TunnelServer>(server_config(echo.endpoint()));
    auto port = server->local_endpoint().port();
    TunnelClient client(client_config(server->local_endpoint()));
    EXPECT_EQ(talk(client.local_endpoint(), "one"), "one");
    server->stop(1s);
    server.reset();
    server = std::make_unique<TunnelServer>(server_config(echo.endpoint(), port));
    std::this_thread::sleep_for(100ms);
    EXPECT_EQ(talk(client.local_endpoint(), "two"), "two");
    EXPECT_EQ(client.handshakes_completed(), 2u);
}

TEST(Tunnel, StreamCapQueuesThenRefuses)
{
    EchoServer echo;
    auto scfg = server_config(echo.endpoint());
    scfg.max_bidi_streams = 2;
    TunnelServer server(scfg);
    auto ccfg = client_config(server.local_endpoint());
    ccfg.stream_wait_timeout = 1500ms;
    TunnelClient client(ccfg);

    asio::io_context ctx;
    auto open_held = [&] {
        auto s = std::make_unique<tcp::socket>(ctx);
        s->connect(client.local_endpoint());
        asio::write(*s, asio::buffer(std::string("held")));
        std::string buf(4, 0);
        asio::read(*s, asio::buffer(buf));
        EXPECT_EQ(buf, "held");
        return s;
    };
    auto h1 = open_held();
    auto h2 = open_held();

    // Third session waits for credit and completes once a held session ends.
    std::string third;
    std::thread waiter([&] { third = talk(client.local_endpoint(), "third"); });
    std::this_thread::sleep_for(300ms);
    h1->shutdown(tcp::socket::shutdown_send);
    std::string rest;
    boost::system::error_code ec;
    asio::read(*h1, asio::dynamic_buffer(rest), ec);
    waiter.join();
    EXPECT_EQ(third, "third");

    // With both slots held, a new session is refused after the wait timeout.
    auto h3 = open_held();
    auto start = std::chrono::steady_clock::now();
    auto refused = talk(client.local_endpoint(), "nope", &ec);
    auto took = std::chrono::steady_clock::now() - start;
    EXPECT_EQ(refused, "");
    EXPECT_GE(took, 1400ms);
    EXPECT_EQ(client.sessions_refused(), 1u);
}

TEST(Tunnel, HttpResponseMatchesDirectRequest)
{
    httplib::Server http;
    http.Get("/hello", [](const httplib::Request&, httplib::Response& res) {
        res.set_content(std::string(5000, 'z') + "end", "text/plain");
    });
    int port = http.bind_to_any_port("127.0.0.1");
    std::thread th([&] { http.listen_after_bind(); });
    http.wait_until_ready();

    tcp::endpoint dest(asio::ip::make_address("127.0.0.1"), static_cast<unsigned short>(port));
    TunnelServer server(server_config(dest));
    TunnelClient client(client_config(server.local_endpoint()));
    std::string request = "GET /hello HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n";
    // httplib may drop a request whose sender already half-closed; Connection: close ends the exchange.
    auto direct = talk(dest, request, nullptr, false);
    auto tunneled = talk(client.local_endpoint(), request, nullptr, false);
    http.stop();
    th.join();
    EXPECT_FALSE(direct.empty());
    EXPECT_EQ(tunneled, direct);
}

TEST(Tunnel, GracefulStopResetsLingeringSessions)
{
    EchoServer echo;
    TunnelServer server(server_config(echo.endpoint()));
    TunnelClient client(client_config(server.local_endpoint()));
    asio::io_context ctx;
    tcp::socket s(ctx);
    s.connect(client.local_endpoint());
    asio::write(s, asio::buffer(std::string("abc")));
    std::string buf(3, 0);
    asio::read(s, asio::buffer(buf));
    auto start = std::chrono::steady_clock::now();
    server.stop(200ms);
    EXPECT_LT(std::chrono::steady_clock::now() - start, 5s);
    auto sessions = server.completed_sessions();
    ASSERT_EQ(sessions.size(), 1u);
    ASSERT_TRUE(sessions[0].outcome);
    EXPECT_EQ(sessions[0].outcome->termination, relay::Termination::cancelled);
    boost::system::error_code ec;
    std::string rest;
    asio::read(s, asio::dynamic_buffer(rest), ec);
    EXPECT_TRUE(ec) << "local connection should be closed after the server went away";
}

TEST(TunnelConfig, Validation)
{
    auto s = server_config(loopback_any());
    s.max_bidi_streams = 0;
    EXPECT_THROW(s.validate(), std::invalid_argument);
    s = server_config(loopback_any());
    s.keep_alive_interval = 0s;
    EXPECT_THROW(s.validate(), std::invalid_argument);
    s = server_config(loopback_any());
    s.certificate.cert_file = "x.pem";
    EXPECT_THROW(s.validate(), std::invalid_argument);
    EXPECT_FALSE(server_config(loopback_any()).unidirectional_streams_allowed);
    EXPECT_EQ(server_config(loopback_any()).max_bidi_streams, 100u);
    EXPECT_EQ(TunnelClientConfig{}.trust_mode, security::TrustMode::verify_standard);
}
