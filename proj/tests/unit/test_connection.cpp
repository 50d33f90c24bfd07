#include <gtest/gtest.h>

#include <random>

#include "quictun/quic/connection.hpp"
#include "quictun/security/certificate.hpp"
#include "support/sim_link.hpp"

using namespace quictun;
using namespace quictun::quic;
using quictun::testing::SimLink;

namespace {

struct Pair {
    std::unique_ptr<Connection> client;
    std::unique_ptr<Connection> server;
    std::unique_ptr<SimLink> link;
};

std::shared_ptr<const TlsServerConfig> server_tls()
{
    static auto cfg = [] {
        auto c = std::make_shared<TlsServerConfig>();
        c->certificate = security::generate_self_signed({"localhost"});
        c->alpn = {"quic-tun/1"};
        return c;
    }();
    return cfg;
}

TlsClientConfig client_tls(security::TrustMode mode = security::TrustMode::insecure_accept_any)
{
    TlsClientConfig c;
    c.server_name = "localhost";
    c.verifier = security::build_trust({mode, {}});
    c.alpn = {"quic-tun/1"};
    return c;
}

// Server creation needs the client's first datagram, so the link is wired after it.
Pair make_pair(const ConnectionConfig& cfg = {}, double loss = 0, std::uint64_t seed = 7,
               TlsClientConfig tls = client_tls())
{
    Pair p;
    TimePoint t0{std::chrono::seconds(1000)};
    p.client = Connection::client(cfg, std::move(tls), t0);
    Bytes first;
    EXPECT_TRUE(p.client->poll_transmit(t0, first));
    EXPECT_GE(first.size(), kMinInitialDatagram);
    auto hdr = parse_packet_header(first, kLocalCidLength);
    p.server = Connection::server(cfg, server_tls(), hdr.dcid, hdr.scid, t0);
    p.server->receive(first, t0);
    p.link = std::make_unique<SimLink>(*p.client, *p.server, seed);
    p.link->loss = loss;
    return p;
}

Bytes pattern(std::size_t n, std::uint64_t seed)
{
    Bytes b(n);
    std::mt19937_64 rng(seed);
    for (auto& x : b) x = static_cast<std::uint8_t>(rng());
    return b;
}

// Pushes `data` on `id` and reads the peer side to completion.
bool transfer(Pair& p, Connection& tx, Connection& rx, StreamId id, const Bytes& data, Bytes& received,
              std::chrono::seconds limit = std::chrono::seconds(120))
{
    std::size_t sent = 0;
    bool finished = false;
    bool fin = false;
    Bytes buf(65536);
    return p.link->run_until(
        [&] {
            while (sent < data.size()) {
                auto w = tx.stream_send(id, ByteView(data).subspan(sent));
                if (w.n == 0) break;
                sent += w.n;
            }
            if (sent == data.size() && !finished) {
                tx.stream_finish(id);
                finished = true;
            }
            while (!fin) {
                auto r = rx.stream_recv(id, buf);
                received.insert(received.end(), buf.begin(), buf.begin() + static_cast<std::ptrdiff_t>(r.n));
                fin = r.fin;
                if (r.n == 0) break;
            }
            return fin;
        },
        limit);
}

}  // namespace

TEST(Connection, HandshakeCompletes)
{
    auto p = make_pair();
    ASSERT_TRUE(p.link->run_until([&] { return p.client->handshake_complete() && p.server->handshake_complete(); }));
    EXPECT_FALSE(p.client->is_closing());
    EXPECT_EQ(p.client->peer_certificates().size(), 1u);
}

TEST(Connection, HandshakeUnderLoss)
{
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        auto p = make_pair({}, 0.3, seed);
        ASSERT_TRUE(p.link->run_until([&] { return p.client->handshake_complete() && p.server->handshake_complete(); }))
            << "seed " << seed;
    }
}

TEST(Connection, UntrustedCertificateFailsHandshake)
{
    auto p = make_pair({}, 0, 7, client_tls(security::TrustMode::verify_standard));
    ASSERT_TRUE(p.link->run_until([&] { return p.client->is_closing(); }, std::chrono::seconds(5)));
    ASSERT_TRUE(p.client->error());
    EXPECT_EQ(p.client->error()->code, 0x100u + tls_alert::bad_certificate);
    EXPECT_FALSE(p.client->handshake_complete());
}

TEST(Connection, StreamTransferBothDirections)
{
    auto p = make_pair();
    ASSERT_TRUE(p.link->run_until([&] { return p.client->handshake_complete(); }));
    auto id = p.client->open_bidi();
    ASSERT_TRUE(id);
    auto up = pattern(3 * 1024 * 1024 + 17, 1);
    Bytes got;
    ASSERT_TRUE(transfer(p, *p.client, *p.server, *id, up, got));
    EXPECT_EQ(got, up);
    auto down = pattern(1024 * 1024, 2);
    Bytes got2;
    ASSERT_TRUE(transfer(p, *p.server, *p.client, *id, down, got2));
    EXPECT_EQ(got2, down);
    p.client->stream_release(*id);
    p.server->stream_release(*id);
    ASSERT_TRUE(p.link->run_until([&] { return p.client->active_streams() == 0 && p.server->active_streams() == 0; }));
}

class LossyTransfer : public ::testing::TestWithParam<double> {};

TEST_P(LossyTransfer, DeliversExactBytes)
{
    auto p = make_pair({}, GetParam(), 11);
    ASSERT_TRUE(p.link->run_until([&] { return p.client->handshake_complete() && p.server->handshake_complete(); }));
    auto id = p.client->open_bidi();
    ASSERT_TRUE(id);
    auto data = pattern(512 * 1024, 3);
    Bytes got;
    ASSERT_TRUE(transfer(p, *p.client, *p.server, *id, data, got, std::chrono::seconds(600)));
    EXPECT_EQ(got, data);
    if (GetParam() > 0) {
        EXPECT_GT(p.client->stats().packets_lost, 0u);
    } else {
        EXPECT_EQ(p.client->stats().packets_lost, 0u);
    }
}

INSTANTIATE_TEST_SUITE_P(Rates, LossyTransfer, ::testing::Values(0.0, 0.05, 0.2, 0.35));

TEST(Connection, ReorderingAdaptsThreshold)
{
    auto p = make_pair({}, 0, 5);
    p.link->delay = std::chrono::milliseconds(1);
    p.link->reorder = 0.2;
    p.link->reorder_delay = std::chrono::milliseconds(10);
    ASSERT_TRUE(p.link->run_until([&] { return p.client->handshake_complete() && p.server->handshake_complete(); }));
    auto id = p.client->open_bidi();
    auto data = pattern(4 * 1024 * 1024, 4);
    Bytes got;
    ASSERT_TRUE(transfer(p, *p.client, *p.server, *id, data, got));
    EXPECT_EQ(got, data);
    auto st = p.client->stats();
    EXPECT_GT(st.packet_threshold, kInitialPacketThreshold);
}

TEST(Connection, StreamLimitAndCredit)
{
    ConnectionConfig cfg;
    cfg.max_bidi_streams = 3;
    auto p = make_pair(cfg);
    ASSERT_TRUE(p.link->run_until([&] { return p.client->handshake_complete() && p.server->handshake_complete(); }));
    std::vector<StreamId> ids;
    for (int i = 0; i < 3; ++i) ids.push_back(*p.client->open_bidi());
    EXPECT_FALSE(p.client->open_bidi());
    // Finish one stream in both directions; the server's release returns credit.
    auto id = ids[0];
    p.client->stream_send(id, as_bytes("x"));
    p.client->stream_finish(id);
    Bytes buf(16);
    ASSERT_TRUE(p.link->run_until([&] { return p.server->stream_recv(id, buf).fin; }));
    p.server->stream_finish(id);
    p.server->stream_release(id);
    ASSERT_TRUE(p.link->run_until([&] { return p.client->stream_recv(id, buf).fin; }));
    p.client->stream_release(id);
    bool available = false;
    ASSERT_TRUE(p.link->run_until([&] {
        while (auto e = p.client->poll_event()) available |= e->type == ConnectionEventType::streams_available;
        return available;
    }));
    EXPECT_TRUE(p.client->open_bidi());
}

TEST(Connection, ResetAndStopSending)
{
    auto p = make_pair();
    ASSERT_TRUE(p.link->run_until([&] { return p.client->handshake_complete() && p.server->handshake_complete(); }));
    auto id = *p.client->open_bidi();
    p.client->stream_send(id, as_bytes("partial"));
    p.client->stream_reset(id, 0x02);
    Bytes buf(64);
    std::optional<std::uint64_t> code;
    ASSERT_TRUE(p.link->run_until([&] {
        auto r = p.server->stream_recv(id, buf);
        code = r.reset;
        return code.has_value();
    }));
    EXPECT_EQ(*code, 0x02u);
    p.server->stream_stop_sending(id, 0x03);
    std::optional<std::uint64_t> stopped;
    ASSERT_TRUE(p.link->run_until([&] {
        stopped = p.server->stream_send(id, as_bytes("y")).stopped;
        // Server's own write half is unaffected; the client stops reading it.
        p.client->stream_stop_sending(id, 0x03);
        stopped = p.server->stream_send(id, as_bytes("y")).stopped;
        return stopped.has_value();
    }));
    EXPECT_EQ(*stopped, 0x03u);
}

TEST(Connection, KeepAliveHoldsIdleConnection)
{
    auto p = make_pair();
    ASSERT_TRUE(p.link->run_until([&] { return p.client->handshake_complete() && p.server->handshake_complete(); }));
    p.link->advance(std::chrono::seconds(45));
    EXPECT_FALSE(p.client->is_closing());
    EXPECT_FALSE(p.server->is_closing());
}

TEST(Connection, IdleTimeoutWithoutKeepAlive)
{
    ConnectionConfig cfg;
    cfg.keep_alive_interval.reset();
    cfg.idle_timeout = std::chrono::seconds(3);
    auto p = make_pair(cfg);
    ASSERT_TRUE(p.link->run_until([&] { return p.client->handshake_complete() && p.server->handshake_complete(); }));
    p.link->advance(std::chrono::seconds(5));
    ASSERT_TRUE(p.client->is_closed());
    EXPECT_EQ(p.client->error()->source, ConnectionError::Source::idle_timeout);
}

TEST(Connection, LivenessTimeoutWhenPeerVanishes)
{
    auto p = make_pair();
    ASSERT_TRUE(p.link->run_until([&] { return p.client->handshake_complete() && p.server->handshake_complete(); }));
    p.link->loss = 1.0;
    ASSERT_TRUE(p.link->run_until([&] { return p.client->is_closing(); }, std::chrono::seconds(20)));
    EXPECT_EQ(p.client->error()->source, ConnectionError::Source::liveness_timeout);
}

TEST(Connection, ApplicationCloseReachesPeer)
{
    auto p = make_pair();
    ASSERT_TRUE(p.link->run_until([&] { return p.client->handshake_complete() && p.server->handshake_complete(); }));
    p.client->close(0x03, "bye", p.link->now());
    ASSERT_TRUE(p.link->run_until([&] { return p.server->is_closing(); }));
    ASSERT_TRUE(p.server->error());
    EXPECT_EQ(p.server->error()->source, ConnectionError::Source::peer);
    EXPECT_TRUE(p.server->error()->application);
    EXPECT_EQ(p.server->error()->code, 0x03u);
    EXPECT_EQ(p.server->error()->reason, "bye");
    ASSERT_TRUE(p.link->run_until([&] { return p.client->is_closed() && p.server->is_closed(); }));
}
