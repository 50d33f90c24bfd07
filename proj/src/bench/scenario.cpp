#include "quictun/bench/scenario.hpp"

#include "quictun/bench/shaper.hpp"
#include "quictun/bench/traffic.hpp"
#include "quictun/common/log.hpp"
#include "quictun/common/payload.hpp"
#include "quictun/netem/impairer.hpp"
#include "quictun/tunnel/tunnel.hpp"

namespace quictun::bench {

namespace {

tcp::endpoint tcp_loopback()
{
    return {asio::ip::make_address("127.0.0.1"), 0};
}

netem::udp::endpoint udp_loopback()
{
    return {asio::ip::make_address("127.0.0.1"), 0};
}

template <typename F>
auto build(const char* component, F&& f)
{
    try {
        return f();
    } catch (const std::exception& e) {
        throw ScenarioError(std::string(component) + ": " + e.what());
    }
}

MetricSummary summarize(const std::vector<RepetitionResult>& reps, double (*metric)(const RepetitionResult&))
{
    std::vector<double> xs;
    for (auto& r : reps) xs.push_back(metric(r));
    if (xs.empty()) return {};
    return {mean(xs), sample_stddev(xs)};
}

// One repetition's path, built fresh so that repetitions do not share congestion state.
struct Path {
    std::unique_ptr<TrafficSink> sink;
    std::unique_ptr<TcpShaper> shaper;
    std::unique_ptr<tunnel::TunnelServer> server;
    std::unique_ptr<netem::Impairer> impairer;
    std::unique_ptr<tunnel::TunnelClient> client;
    tcp::endpoint entry;

    ~Path()
    {
        // Upstream first so nothing new reaches the parts being torn down.
        if (client) client->stop(std::chrono::milliseconds(200));
        client.reset();
        impairer.reset();
        if (server) server->stop(std::chrono::milliseconds(200));
        server.reset();
        shaper.reset();
        sink.reset();
    }

    double sender_cpu(TrafficGenerator& gen) { return gen.io().cpu_seconds() + (client ? client->io().cpu_seconds() : 0); }
    double receiver_cpu() { return sink->io().cpu_seconds() + (server ? server->io().cpu_seconds() : 0); }
};

std::unique_ptr<Path> build_path(const ScenarioSpec& spec, unsigned rep)
{
    auto path = std::make_unique<Path>();
    path->sink = build("sink", [] { return std::make_unique<TrafficSink>(tcp_loopback()); });
    if (spec.path == PathKind::native_tcp) {
        path->entry = path->sink->endpoint();
        if (spec.profile.rate_limit_bytes_per_sec) {
            path->shaper = build("tcp shaper", [&] {
                return std::make_unique<TcpShaper>(tcp_loopback(), path->sink->endpoint(),
                                                   *spec.profile.rate_limit_bytes_per_sec);
            });
            path->entry = path->shaper->endpoint();
        }
        return path;
    }
    path->server = build("tunnel server", [&] {
        tunnel::TunnelServerConfig c;
        c.bind_tunnel_addr = udp_loopback();
        c.dest_tcp_addr = path->sink->endpoint();
        return std::make_unique<tunnel::TunnelServer>(c);
    });
    auto profile = spec.profile;
    profile.seed += rep - 1;
    path->impairer = build("impairer", [&] {
        return std::make_unique<netem::Impairer>(udp_loopback(), path->server->local_endpoint(), profile);
    });
    path->client = build("tunnel client", [&] {
        tunnel::TunnelClientConfig c;
        c.bind_tcp_addr = tcp_loopback();
        c.dest_tunnel_addr = path->impairer->listen_endpoint();
        c.trust_mode = security::TrustMode::verify_standard;
        c.pinned_roots_der = {path->server->certificate().leaf()};
        return std::make_unique<tunnel::TunnelClient>(c);
    });
    path->entry = path->client->local_endpoint();
    return path;
}

RepetitionResult run_repetition(const ScenarioSpec& spec, unsigned rep)
{
    RepetitionResult r;
    r.rep = rep;
    auto path = build_path(spec, rep);
    TrafficGenerator gen;
    GeneratorOptions opts;
    opts.seed = spec.payload_seed + rep;
    opts.duration = spec.transfer_duration;

    auto start = Clock::now();
    double cpu_s0 = path->sender_cpu(gen);
    double cpu_r0 = path->receiver_cpu();

    auto sent = gen.run(path->entry, opts);
    r.sender.bytes = sent.bytes;
    r.sender.elapsed_seconds = sent.elapsed_seconds;

    auto received = path->sink->wait_result(spec.drain_timeout);
    double wall = std::chrono::duration<double>(Clock::now() - start).count();
    r.sender_cpu = {path->sender_cpu(gen) - cpu_s0, wall, std::nullopt};
    r.receiver_cpu = {path->receiver_cpu() - cpu_r0, wall, std::nullopt};

    if (!received) {
        r.error = "receiver did not finish within the drain timeout";
        path->sink->abort_all();
        return r;
    }
    r.receiver.bytes = received->bytes;
    r.receiver.elapsed_seconds = received->elapsed_seconds();
    r.payload_verified = received->digest == payload_digest(opts.seed, received->bytes);
    if (!sent.error.empty()) {
        r.error = "sender: " + sent.error;
    } else if (!received->clean_eof) {
        r.error = "receiver: " + received->error;
    } else if (received->bytes != sent.bytes) {
        r.error = "receiver got " + std::to_string(received->bytes) + " of " + std::to_string(sent.bytes) + " bytes";
    } else if (!r.payload_verified) {
        r.error = "payload digest mismatch";
    } else {
        r.ok = true;
    }
    return r;
}

}  // namespace

const char* to_string(PathKind p)
{
    return p == PathKind::tunnel ? "tunnel" : "native_tcp";
}

PathKind parse_path(std::string_view s)
{
    if (s == "tunnel") return PathKind::tunnel;
    if (s == "native_tcp") return PathKind::native_tcp;
    throw std::invalid_argument("unknown path '" + std::string(s) + "'");
}

void ScenarioSpec::validate() const
{
    if (repetitions < 1) throw ScenarioError("repetitions must be at least 1");
    if (transfer_duration <= quic::Duration::zero()) throw ScenarioError("transfer duration must be positive");
    try {
        profile.validate();
    } catch (const std::exception& e) {
        throw ScenarioError(e.what());
    }
    if (path == PathKind::native_tcp &&
        (profile.loss_rate > 0 || profile.delay > quic::Duration::zero() || profile.reorder_rate > 0)) {
        throw ScenarioError("native_tcp path cannot apply loss, delay or reorder in userspace; use the netem script");
    }
}

MetricSummary BenchReport::sender_bitrate() const
{
    return summarize(reps, [](const RepetitionResult& r) { return r.sender.bitrate_mbps(); });
}

MetricSummary BenchReport::receiver_bitrate() const
{
    return summarize(reps, [](const RepetitionResult& r) { return r.receiver.bitrate_mbps(); });
}

MetricSummary BenchReport::sender_cpu() const
{
    return summarize(reps, [](const RepetitionResult& r) { return r.sender_cpu.utilization_percent(); });
}

MetricSummary BenchReport::receiver_cpu() const
{
    return summarize(reps, [](const RepetitionResult& r) { return r.receiver_cpu.utilization_percent(); });
}

std::size_t BenchReport::failed() const
{
    return static_cast<std::size_t>(std::count_if(reps.begin(), reps.end(), [](auto& r) { return !r.ok; }));
}

BenchReport run_scenario(const ScenarioSpec& spec, const ProgressFn& progress)
{
    spec.validate();
    BenchReport report;
    report.scenario = spec;
    for (unsigned rep = 1; rep <= spec.repetitions; ++rep) {
        auto r = run_repetition(spec, rep);
        if (r.ok) {
            log().info("{} [{}] rep {}: sndr {:.2f} Mbps, rcvr {:.2f} Mbps", spec.id, to_string(spec.path), rep,
                       r.sender.bitrate_mbps(), r.receiver.bitrate_mbps());
        } else {
            log().warn("{} [{}] rep {} failed: {}", spec.id, to_string(spec.path), rep, r.error);
        }
        if (progress) progress(spec, r);
        report.reps.push_back(std::move(r));
    }
    return report;
}

}  // namespace quictun::bench
