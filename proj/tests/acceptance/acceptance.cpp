// End-to-end acceptance checks. Each criterion prints one line:
//   criterion N [name]: PASS|FAIL (detail)
// Usage: acceptance_tests [--criterion N]... [--seed S]

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>

#include <boost/asio/ip/udp.hpp>
#include <fmt/format.h>

#include "quictun/bench/metrics.hpp"
#include "quictun/bench/netem_script.hpp"
#include "quictun/bench/scenario.hpp"
#include "quictun/bench/traffic.hpp"
#include "quictun/common/log.hpp"
#include "quictun/netem/impairer.hpp"
#include "quictun/quic/packet.hpp"
#include "quictun/tunnel/tunnel.hpp"
#include "support/scripted.hpp"
#include "support/tcp_servers.hpp"

using namespace quictun;
using namespace std::chrono_literals;
using Clock = std::chrono::steady_clock;
using tcp = boost::asio::ip::tcp;
using udp = boost::asio::ip::udp;
namespace asio = boost::asio;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::uint64_t g_seed = 20240601;

double seconds_since(Clock::time_point t)
{
    return std::chrono::duration<double>(Clock::now() - t).count();
}

udp::endpoint udp_loopback()
{
    return {asio::ip::make_address("127.0.0.1"), 0};
}

tunnel::TunnelServerConfig server_config(tcp::endpoint dest)
{
    tunnel::TunnelServerConfig c;
    c.bind_tunnel_addr = udp_loopback();
    c.dest_tcp_addr = dest;
    return c;
}

// Strict verification with the server's self-signed leaf pinned.
tunnel::TunnelClientConfig client_config(udp::endpoint dest, const tunnel::TunnelServer& server)
{
    tunnel::TunnelClientConfig c;
    c.bind_tcp_addr = testing::loopback_any();
    c.dest_tunnel_addr = dest;
    c.trust_mode = security::TrustMode::verify_standard;
    c.pinned_roots_der = {server.certificate().leaf()};
    return c;
}

void progress(const bench::ScenarioSpec& s, const bench::RepetitionResult& r)
{
    std::fprintf(stderr, "  %s [%s] rep %u: rcvr %.2f Mbps sndr %.2f Mbps%s%s\n", s.id.c_str(),
                 bench::to_string(s.path), r.rep, r.receiver.bitrate_mbps(), r.sender.bitrate_mbps(),
                 r.ok ? "" : " FAILED: ", r.error.c_str());
}

bench::ScenarioSpec capped(std::string id, bench::PathKind path, netem::ImpairmentProfile p = {})
{
    bench::ScenarioSpec s;
    s.id = std::move(id);
    s.path = path;
    s.profile = p;
    s.profile.rate_limit_bytes_per_sec = 10'000'000;
    s.transfer_duration = 10s;
    s.repetitions = 5;
    return s;
}

std::string mbps_list(const std::vector<double>& xs)
{
    std::string out;
    for (auto x : xs) out += fmt::format("{}{:.2f}", out.empty() ? "" : " ", x);
    return out;
}

// ---- 1: randomized sessions ----

Outcome randomized_sessions()
{
    auto start = Clock::now();
    testing::ScriptedServer dest;
    tunnel::TunnelServer server(server_config(dest.endpoint()));
    tunnel::TunnelClient client(client_config(server.local_endpoint(), server));

    std::mt19937_64 rng(g_seed);
    std::uniform_int_distribution<std::uint64_t> size(0, 4ULL << 20);
    std::vector<testing::Script> scripts;
    while (scripts.size() < 200) {
        testing::Script s;
        s.seed = rng();
        // Empty directions get extra weight; uniform sizes would almost never hit them.
        s.up = rng() % 10 == 0 ? 0 : size(rng);
        s.down = rng() % 10 == 0 ? 0 : size(rng);
        s.client = static_cast<testing::ClientOrder>(rng() % 3);
        s.server = static_cast<testing::ServerOrder>(rng() % 3);
        if (testing::compatible(s.client, s.server)) scripts.push_back(s);
    }

    constexpr int kWorkers = 4;
    std::atomic<std::size_t> next{0};
    std::mutex mu;
    std::vector<std::string> failures;
    std::vector<std::thread> workers;
    for (int w = 0; w < kWorkers; ++w) {
        workers.emplace_back([&] {
            for (std::size_t i; (i = next++) < scripts.size();) {
                auto r = testing::run_scripted_session(client.local_endpoint(), scripts[i]);
                if (!r.ok) {
                    std::lock_guard lock(mu);
                    failures.push_back(fmt::format("session {}: {}", i, r.error));
                }
            }
        });
    }
    for (auto& t : workers) t.join();

    bool all_verdicts = dest.wait_verdicts(scripts.size(), 10s);
    std::size_t server_ok = 0;
    for (auto& v : dest.verdicts()) {
        if (v.ok) ++server_ok;
        else failures.push_back(fmt::format("dest seed {:x}: {}", v.seed, v.error));
    }
    double elapsed = seconds_since(start);
    std::uint64_t bytes = 0;
    for (auto& s : scripts) bytes += s.up + s.down;

    Outcome o;
    o.pass = failures.empty() && all_verdicts && server_ok == scripts.size() && elapsed < 60 &&
             client.handshakes_completed() == 1;
    o.detail = fmt::format("{}/{} sessions verified both ways, {:.0f} MiB, {:.1f} s, seed {}", server_ok, scripts.size(),
                           bytes / 1048576.0, elapsed, g_seed);
    if (!failures.empty()) o.detail += "; first failure: " + failures.front();
    return o;
}

// ---- 2: 100 concurrent sessions, the 101st queues ----

Outcome concurrent_sessions()
{
    auto start = Clock::now();
    testing::ScriptedServer dest;
    auto scfg = server_config(dest.endpoint());
    scfg.max_bidi_streams = 100;
    tunnel::TunnelServer server(scfg);
    tunnel::TunnelClient client(client_config(server.local_endpoint(), server));

    std::mutex mu;
    std::condition_variable cv;
    std::size_t holding = 0;
    std::vector<bool> released(100, false);
    std::vector<testing::SessionCheck> checks(101);
    std::vector<std::thread> threads;

    for (std::size_t i = 0; i < 100; ++i) {
        threads.emplace_back([&, i] {
            testing::Script s{1000 + i, 1 << 20, 1 << 20, testing::ClientOrder::concurrent,
                              testing::ServerOrder::concurrent};
            checks[i] = testing::run_scripted_session(client.local_endpoint(), s, [&] {
                std::unique_lock lock(mu);
                ++holding;
                cv.notify_all();
                cv.wait(lock, [&] { return released[i]; });
            });
        });
    }
    auto release = [&](std::size_t i) {
        std::lock_guard lock(mu);
        released[i] = true;
        cv.notify_all();
    };
    auto release_all = [&] {
        for (std::size_t i = 0; i < 100; ++i) release(i);
    };

    Outcome o;
    {
        std::unique_lock lock(mu);
        if (!cv.wait_for(lock, 25s, [&] { return holding == 100; })) {
            o.detail = fmt::format("only {} of 100 sessions finished their exchange", holding);
        }
    }
    std::size_t dest_at_100 = dest.connections();
    std::atomic<bool> extra_done{false};
    std::thread extra;
    std::size_t dest_while_queued = 0;
    bool extra_waited = false;
    if (o.detail.empty()) {
        extra = std::thread([&] {
            testing::Script s{5000, 1 << 20, 1 << 20, testing::ClientOrder::concurrent,
                              testing::ServerOrder::concurrent};
            checks[100] = testing::run_scripted_session(client.local_endpoint(), s);
            extra_done = true;
        });
        std::this_thread::sleep_for(1s);
        dest_while_queued = dest.connections();
        extra_waited = !extra_done;
        release(0);
        auto deadline = Clock::now() + 8s;
        while (!extra_done && Clock::now() < deadline) std::this_thread::sleep_for(10ms);
        if (!extra_done) o.detail = "101st session did not complete after a slot freed";
    }
    release_all();
    if (extra.joinable()) extra.join();
    for (auto& t : threads) t.join();
    bool verdicts = dest.wait_verdicts(101, 10s);

    std::size_t ok = 0;
    std::string first_error;
    for (auto& c : checks) {
        if (c.ok) ++ok;
        else if (first_error.empty()) first_error = c.error;
    }
    std::size_t dest_ok = 0;
    for (auto& v : dest.verdicts()) dest_ok += v.ok;
    double elapsed = seconds_since(start);
    o.pass = o.detail.empty() && dest_at_100 == 100 && dest_while_queued == 100 && extra_waited && ok == 101 &&
             verdicts && dest_ok == 101 && client.sessions_refused() == 0 && elapsed < 30;
    o.detail = fmt::format("{}100 held open, dest saw {} while the 101st queued ({}), {}/101 ok, {:.1f} s{}",
                           o.detail.empty() ? "" : o.detail + "; ", dest_while_queued,
                           extra_waited ? "waited" : "did not wait", ok, elapsed,
                           first_error.empty() ? "" : "; " + first_error);
    return o;
}

// ---- 3: native vs tunnel under a 10 MB/s cap ----

Outcome native_vs_tunnel()
{
    auto native = bench::run_scenario(capped("cap-native", bench::PathKind::native_tcp), progress);
    auto tun = bench::run_scenario(capped("cap-tunnel", bench::PathKind::tunnel), progress);
    double n = native.receiver_bitrate().mean;
    double t = tun.receiver_bitrate().mean;
    Outcome o;
    o.pass = native.failed() == 0 && tun.failed() == 0 && n >= t;
    o.detail = fmt::format("native {:.2f} Mbps, tunnel {:.2f} Mbps (5 x 10 s each), failed reps native {} tunnel {}", n, t,
                           native.failed(), tun.failed());
    return o;
}

// ---- 4 and 6: sweeps ----

std::vector<double> sweep(const char* name, const std::function<void(netem::ImpairmentProfile&, double)>& set,
                          std::size_t& failed)
{
    std::vector<double> out;
    for (double pct : {0.0, 5.0, 10.0, 15.0, 20.0}) {
        netem::ImpairmentProfile p;
        set(p, pct / 100);
        p.seed = 1;
        auto r = bench::run_scenario(capped(fmt::format("{}-{:.0f}", name, pct), bench::PathKind::tunnel, p), progress);
        failed += r.failed();
        out.push_back(r.receiver_bitrate().mean);
    }
    return out;
}

Outcome loss_sweep()
{
    auto start = Clock::now();
    std::size_t failed = 0;
    auto r = sweep("loss", [](auto& p, double v) { p.loss_rate = v; }, failed);
    double elapsed = seconds_since(start);
    bool monotone = true;
    for (std::size_t i = 1; i < r.size(); ++i) monotone = monotone && r[i] <= r[i - 1] * 1.10;
    Outcome o;
    o.pass = monotone && r.back() > 0 && failed == 0 && elapsed < 600;
    o.detail = fmt::format("receiver Mbps at 0/5/10/15/20%: {}; {}monotone, failed reps {}, {:.0f} s", mbps_list(r),
                           monotone ? "" : "not ", failed, elapsed);
    return o;
}

Outcome reorder_sweep()
{
    auto start = Clock::now();
    std::size_t failed = 0;
    auto r = sweep("reorder", [](auto& p, double v) { p.reorder_rate = v; }, failed);
    double elapsed = seconds_since(start);
    double worst = 0;
    for (auto x : r) worst = std::max(worst, std::abs(x - r[0]) / r[0]);
    Outcome o;
    o.pass = r[0] > 0 && worst < 0.20 && failed == 0 && elapsed < 600;
    o.detail = fmt::format("receiver Mbps at 0/5/10/15/20%: {}; max deviation {:.1f}%, failed reps {}, {:.0f} s",
                           mbps_list(r), worst * 100, failed, elapsed);
    return o;
}

// ---- 5: netem script ----

Outcome netem_script()
{
    auto grid = bench::loss_grid();
    auto text = bench::generate_netem_script(grid);
    auto dir = std::filesystem::temp_directory_path() / fmt::format("quictun-accept-{}", ::getpid());
    std::filesystem::create_directories(dir);
    auto path = dir / "loss.sh";
    std::ofstream(path) << text;
    int rc = std::system(fmt::format("bash -n '{}'", path.string()).c_str());
    std::filesystem::remove_all(dir);

    std::size_t found = 0;
    for (int l : {0, 5, 10, 15, 20}) {
        auto args = bench::netem_arguments({double(l), 0, 0}, 10);
        if (text.find(fmt::format("run loss-l{}-d0-r0 ", l)) != std::string::npos &&
            text.find(args) != std::string::npos) {
            ++found;
        }
    }
    bool has_tools = text.find("iperf3") != std::string::npos && text.find("tc qdisc") != std::string::npos;
    Outcome o;
    o.pass = rc == 0 && found == 5 && has_tools;
    o.detail = fmt::format("bash -n exit {}, {}/5 loss cells present, {} bytes", rc, found, text.size());
    return o;
}

// ---- 7: 500 ms one-way delay ----

Outcome long_delay()
{
    auto start = Clock::now();
    bench::TrafficSink sink(testing::loopback_any());
    tunnel::TunnelServer server(server_config(sink.endpoint()));
    netem::ImpairmentProfile p;
    p.delay = 500ms;
    netem::Impairer impairer(udp_loopback(), server.local_endpoint(), p);
    tunnel::TunnelClient client(client_config(impairer.listen_endpoint(), server));

    bench::TrafficGenerator gen;
    bench::GeneratorOptions opts;
    opts.seed = 77;
    opts.duration = 50s;
    opts.max_bytes = 1 << 20;
    auto g = gen.run(client.local_endpoint(), opts);
    auto r = sink.wait_result(55s - (Clock::now() - start));
    double elapsed = seconds_since(start);
    gen.close();

    Outcome o;
    if (!r) {
        o.detail = fmt::format("no completed transfer after {:.1f} s ({})", elapsed, g.error);
        return o;
    }
    bool digest_ok = r->bytes == (1u << 20) && r->digest == payload_digest(77, r->bytes);
    double secs = r->elapsed_seconds();
    double mbps = secs > 0 ? bench::throughput(r->bytes * 8.0, secs) : 0;
    o.pass = g.error.empty() && r->clean_eof && digest_ok && mbps > 0 && elapsed < 60;
    o.detail = fmt::format("{} bytes {}, {:.3f} Mbps, {:.1f} s total", r->bytes, digest_ok ? "verified" : "MISMATCHED",
                           mbps, elapsed);
    return o;
}

// ---- 8: impairer accuracy ----

struct UdpReceiver {
    asio::io_context ctx;
    udp::socket sock{ctx, udp_loopback()};
    std::vector<Bytes> received;

    UdpReceiver() { sock.set_option(asio::socket_base::receive_buffer_size(4 << 20)); }
    udp::endpoint endpoint() const { return sock.local_endpoint(); }
    void collect(std::chrono::milliseconds quiet)
    {
        sock.non_blocking(true);
        Bytes buf(2048);
        auto last = Clock::now();
        for (;;) {
            boost::system::error_code ec;
            auto n = sock.receive(asio::buffer(buf), 0, ec);
            if (ec == asio::error::would_block) {
                if (Clock::now() - last > quiet) return;
                std::this_thread::sleep_for(200us);
                continue;
            }
            last = Clock::now();
            received.emplace_back(buf.begin(), buf.begin() + static_cast<long>(n));
        }
    }
};

struct Trial {
    std::vector<Bytes> received;
    netem::PathStats stats;
};

Trial impair(const netem::ImpairmentProfile& p, std::size_t n)
{
    UdpReceiver rx;
    netem::Impairer imp(udp_loopback(), rx.endpoint(), p);
    asio::io_context ctx;
    udp::socket tx(ctx, udp_loopback());
    std::thread sender([&] {
        for (std::size_t i = 0; i < n; ++i) {
            tx.send_to(asio::buffer(netem::make_sequenced_datagram(i, 64)), imp.listen_endpoint());
            if (i % 50 == 49) std::this_thread::sleep_for(1ms);
        }
    });
    rx.collect(500ms);
    sender.join();
    Trial t{std::move(rx.received), imp.stats(netem::Direction::forward)};
    imp.stop();
    return t;
}

Outcome impairer_accuracy()
{
    std::vector<std::string> parts;
    bool pass = true;

    netem::ImpairmentProfile lp;
    lp.loss_rate = 0.20;
    lp.seed = g_seed;
    auto loss = impair(lp, 100'000);
    double measured_loss = 100.0 * (1.0 - loss.received.size() / 1e5);
    pass = pass && loss.stats.n_sent == 100'000 && std::abs(measured_loss - 20.0) <= 1.0;
    parts.push_back(fmt::format("loss {:.2f}% of 1e5 (stats {:.2f}%)", measured_loss,
                                netem::loss_rate_percent(loss.stats)));

    netem::ImpairmentProfile rp;
    rp.reorder_rate = 0.15;
    rp.seed = g_seed;
    auto reorder = impair(rp, 50'000);
    netem::SequenceTap tap;
    for (auto& d : reorder.received) tap.on_datagram(d);
    double measured_reorder = tap.received() ? netem::out_of_order_percent(tap.stats()) : 0;
    pass = pass && tap.received() == 50'000 && std::abs(measured_reorder - 15.0) <= 1.5;
    parts.push_back(fmt::format("reorder {:.2f}% of {}", measured_reorder, tap.received()));

    // Replay: same seed, same datagrams dropped and delayed. Arrival times differ
    // run to run, so on the wire the comparison is of the surviving set.
    netem::ImpairmentProfile both;
    both.loss_rate = 0.1;
    both.reorder_rate = 0.1;
    both.seed = g_seed;
    auto a = impair(both, 5000);
    auto b = impair(both, 5000);
    std::sort(a.received.begin(), a.received.end());
    std::sort(b.received.begin(), b.received.end());
    bool wire_same = a.received == b.received && a.stats.n_lost == b.stats.n_lost &&
                     a.stats.n_forwarded == b.stats.n_forwarded;

    // With identical arrival times the decisions themselves must be identical.
    auto decisions = [&] {
        netem::ImpairmentEngine e(both);
        std::vector<std::tuple<bool, bool, Clock::rep, std::uint64_t>> out;
        Clock::time_point t{};
        for (int i = 0; i < 20000; ++i) {
            t += 37us;
            auto d = e.decide(1200, t);
            out.emplace_back(d.drop, d.reordered, d.release.time_since_epoch().count(), d.seq);
        }
        return out;
    };
    bool engine_same = decisions() == decisions();
    pass = pass && wire_same && engine_same;
    parts.push_back(fmt::format("seeded replay {} on the wire, {} in the engine", wire_same ? "identical" : "DIFFERS",
                                engine_same ? "identical" : "DIFFERS"));

    Outcome o;
    o.pass = pass;
    for (auto& p : parts) o.detail += (o.detail.empty() ? "" : "; ") + p;
    return o;
}

// ---- 9: metric formulas ----

Outcome metric_formulas()
{
    std::mt19937_64 rng(g_seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto log_uniform = [&](double lo, double hi) { return std::exp(std::log(lo) + unit(rng) * (std::log(hi) - std::log(lo))); };
    double worst = 0;
    for (int i = 0; i < 20; ++i) {
        double bits = log_uniform(1, 1e13);
        double secs = log_uniform(1e-4, 1e4);
        long double tp = static_cast<long double>(bits) / secs / 1e6L;
        worst = std::max(worst, static_cast<double>(std::abs((bench::throughput(bits, secs) - tp) / tp)));

        double c = log_uniform(10, 1e6), p = log_uniform(1, 1e7), t = log_uniform(1e8, 1e10);
        long double cpu = static_cast<long double>(c) * p / t * 100.0L;
        worst = std::max(worst, static_cast<double>(std::abs((bench::cpu_model_percent(c, p, t) - cpu) / cpu)));
    }
    bench::ThroughputSample one_mb{1'000'000, 1.0};
    double eight = one_mb.bitrate_mbps();
    Outcome o;
    o.pass = worst <= 1e-12 && std::abs(eight - 8.0) <= 8e-12;
    o.detail = fmt::format("20 random inputs each, worst relative error {:.2e}; 1 MB/s = {} Mbps", worst, eight);
    return o;
}

// ---- 10: confidentiality and trust ----

std::string send_and_read(const tcp::endpoint& to, const Bytes& data)
{
    asio::io_context ctx;
    tcp::socket s(ctx);
    s.connect(to);
    std::string out;
    std::thread reader([&] {
        boost::system::error_code ec;
        asio::read(s, asio::dynamic_buffer(out), ec);
    });
    asio::write(s, asio::buffer(data));
    s.shutdown(tcp::socket::shutdown_send);
    reader.join();
    return out;
}

Outcome confidentiality()
{
    std::string marker = "quic-tun plaintext marker: this 64-byte string must never appear.";
    marker.resize(64, '#');
    Bytes payload;
    std::mt19937_64 rng(g_seed);
    for (int i = 0; i < 500; ++i) {
        for (int j = 0; j < 100; ++j) payload.push_back(static_cast<std::uint8_t>(rng()));
        payload.insert(payload.end(), marker.begin(), marker.end());
    }

    std::mutex mu;
    std::vector<Bytes> capture;
    testing::EchoServer echo;
    tunnel::TunnelServer server(server_config(echo.endpoint()));
    netem::Impairer tap(udp_loopback(), server.local_endpoint(), {}, [&](netem::Direction, ByteView d) {
        std::lock_guard lock(mu);
        capture.emplace_back(d.begin(), d.end());
    });
    tunnel::TunnelClient client(client_config(tap.listen_endpoint(), server));
    auto echoed = send_and_read(client.local_endpoint(), payload);
    bool delivered = echoed.size() == payload.size() && std::equal(payload.begin(), payload.end(),
                                                                    reinterpret_cast<const std::uint8_t*>(echoed.data()));
    tap.stop();

    // Any 16-byte window of the marker counts, not only the whole string.
    std::size_t hits = 0, captured_bytes = 0;
    {
        std::lock_guard lock(mu);
        for (auto& d : capture) {
            captured_bytes += d.size();
            for (std::size_t off = 0; off + 16 <= marker.size(); off += 16) {
                auto needle = marker.substr(off, 16);
                auto it = std::search(d.begin(), d.end(), needle.begin(), needle.end());
                if (it != d.end()) ++hits;
            }
        }
    }

    // Trust: an unpinned self-signed certificate must be refused under standard verification.
    auto strict_cfg = client_config(server.local_endpoint(), server);
    strict_cfg.pinned_roots_der.clear();
    strict_cfg.handshake_attempts = 1;
    tunnel::TunnelClient strict(strict_cfg);
    auto strict_reply = send_and_read(strict.local_endpoint(), Bytes{'h', 'i'});

    auto insecure_cfg = strict_cfg;
    insecure_cfg.trust_mode = security::TrustMode::insecure_accept_any;
    tunnel::TunnelClient insecure(insecure_cfg);
    auto insecure_reply = send_and_read(insecure.local_endpoint(), Bytes{'h', 'i'});

    bool strict_rejected = strict_reply.empty() && strict.handshakes_completed() == 0 && strict.sessions_refused() == 1;
    bool insecure_ok = insecure_reply == "hi" && insecure.handshakes_completed() == 1;
    Outcome o;
    o.pass = delivered && !capture.empty() && hits == 0 && strict_rejected && insecure_ok;
    o.detail = fmt::format("{} marker fragments in {} datagrams ({} bytes), echo {}; unpinned self-signed {}, "
                           "insecure {}",
                           hits, capture.size(), captured_bytes, delivered ? "intact" : "BROKEN",
                           strict_rejected ? "rejected" : "ACCEPTED", insecure_ok ? "accepted" : "FAILED");
    return o;
}

// ---- 11: idle session ----

Outcome idle_session()
{
    std::mutex mu;
    std::set<std::string> client_initial_scids;
    testing::EchoServer echo;
    tunnel::TunnelServer server(server_config(echo.endpoint()));
    netem::Impairer tap(udp_loopback(), server.local_endpoint(), {}, [&](netem::Direction dir, ByteView d) {
        if (dir != netem::Direction::forward || d.empty() || !(d[0] & 0x80)) return;
        try {
            auto h = quic::parse_packet_header(d, 8);
            if (h.type != quic::PacketType::initial) return;
            std::lock_guard lock(mu);
            client_initial_scids.insert(h.scid.hex());
        } catch (const std::exception&) {
        }
    });
    tunnel::TunnelClient client(client_config(tap.listen_endpoint(), server));

    asio::io_context ctx;
    tcp::socket s(ctx);
    s.connect(client.local_endpoint());
    auto exchange = [&](const std::string& msg) {
        asio::write(s, asio::buffer(msg));
        std::string got(msg.size(), '\0');
        asio::read(s, asio::buffer(got));
        return got == msg;
    };
    bool before = exchange("before idle");
    std::this_thread::sleep_for(10s);
    bool after = false;
    try {
        after = exchange("after ten idle seconds");
    } catch (const std::exception&) {
    }
    boost::system::error_code ec;
    s.shutdown(tcp::socket::shutdown_send, ec);
    std::string rest;
    asio::read(s, asio::dynamic_buffer(rest), ec);
    s.close();
    std::size_t initial_conns;
    {
        std::lock_guard lock(mu);
        initial_conns = client_initial_scids.size();
    }
    Outcome o;
    o.pass = before && after && client.handshakes_completed() == 1 && server.connections_accepted() == 1 &&
             initial_conns == 1;
    o.detail = fmt::format("relay before {} / after {}, handshakes {}, server connections {}, client Initial SCIDs {}",
                           before ? "ok" : "FAILED", after ? "ok" : "FAILED", client.handshakes_completed(),
                           server.connections_accepted(), initial_conns);
    return o;
}

struct Criterion {
    int id;
    const char* name;
    Outcome (*run)();
};

const Criterion kCriteria[] = {
    {1, "randomized sessions", randomized_sessions},
    {2, "100 concurrent sessions + queued 101st", concurrent_sessions},
    {3, "native >= tunnel at 10 MB/s", native_vs_tunnel},
    {4, "loss sweep monotone", loss_sweep},
    {5, "netem script for kernel shaping", netem_script},
    {6, "reorder sweep stable", reorder_sweep},
    {7, "500 ms one-way delay", long_delay},
    {8, "impairer accuracy and replay", impairer_accuracy},
    {9, "throughput and cpu formulas", metric_formulas},
    {10, "no plaintext on the wire, trust modes", confidentiality},
    {11, "idle session survives", idle_session},
};

}  // namespace

int main(int argc, char** argv)
{
    std::set<int> selected;
    for (int i = 1; i < argc; ++i) {
        std::string a = argv[i];
        if (a == "--criterion" && i + 1 < argc) {
            selected.insert(std::atoi(argv[++i]));
        } else if (a == "--seed" && i + 1 < argc) {
            g_seed = std::strtoull(argv[++i], nullptr, 10);
        } else {
            std::fprintf(stderr, "usage: %s [--criterion N]... [--seed S]\n", argv[0]);
            return 2;
        }
    }
    if (!std::getenv("QUIC_TUN_LOG")) set_log_level(spdlog::level::warn);

    int failed = 0, ran = 0;
    for (auto& c : kCriteria) {
        if (!selected.empty() && !selected.count(c.id)) continue;
        ++ran;
        Outcome o;
        auto start = Clock::now();
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        std::printf("criterion %d [%s]: %s (%s; %.1f s)\n", c.id, c.name, o.pass ? "PASS" : "FAIL", o.detail.c_str(),
                    seconds_since(start));
        std::fflush(stdout);
        failed += !o.pass;
    }
    if (ran == 0) {
        std::fprintf(stderr, "no such criterion\n");
        return 2;
    }
    return failed ? 1 : 0;
}
