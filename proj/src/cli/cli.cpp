#include "quictun/cli/cli.hpp"

#include <charconv>
#include <csignal>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <boost/asio/signal_set.hpp>
#include <boost/asio/steady_timer.hpp>

#include "quictun/bench/report.hpp"
#include "quictun/common/log.hpp"
#include "quictun/netem/impairer.hpp"
#include "quictun/tunnel/tunnel.hpp"

namespace quictun::cli {

namespace asio = boost::asio;

namespace {

template <typename Endpoint>
Endpoint endpoint(const std::string& text)
{
    auto [addr, port] = parse_address(text);
    return Endpoint(addr, port);
}

// Waits for SIGINT/SIGTERM. `check` runs every 200 ms; a returned message ends the wait as a failure.
int wait_for_signal(asio::io_context& ctx, asio::signal_set& signals,
                    const std::function<std::optional<std::string>()>& check = {})
{
    int status = 0;
    signals.async_wait([&](boost::system::error_code ec, int signo) {
        if (!ec) log().info("received signal {}, shutting down", signo);
        ctx.stop();
    });
    asio::steady_timer timer(ctx);
    std::function<void()> arm = [&] {
        timer.expires_after(std::chrono::milliseconds(200));
        timer.async_wait([&](boost::system::error_code ec) {
            if (ec) return;
            if (auto failure = check()) {
                log().error("{}", *failure);
                status = 1;
                ctx.stop();
                return;
            }
            arm();
        });
    };
    if (check) arm();
    ctx.run();
    return status;
}

int run_serve(const ServeCommand& c, asio::io_context& ctx, asio::signal_set& signals)
{
    tunnel::TunnelServerConfig cfg;
    cfg.bind_tunnel_addr = c.bind;
    cfg.dest_tcp_addr = c.dest;
    cfg.certificate.cert_file = c.cert;
    cfg.certificate.key_file = c.key;
    tunnel::TunnelServer server(cfg);
    int status = wait_for_signal(ctx, signals);
    server.stop();
    return status;
}

int run_connect(const ConnectCommand& c, asio::io_context& ctx, asio::signal_set& signals)
{
    tunnel::TunnelClientConfig cfg;
    cfg.bind_tcp_addr = c.bind;
    cfg.dest_tunnel_addr = c.dest;
    cfg.trust_mode = c.insecure ? security::TrustMode::insecure_accept_any : security::TrustMode::verify_standard;
    tunnel::TunnelClient client(cfg);
    int status = wait_for_signal(ctx, signals);
    client.stop();
    return status;
}

void log_path_stats(const char* name, const netem::PathStats& s)
{
    log().info("{}: sent {} lost {} forwarded {} out-of-order {} bytes {}", name, s.n_sent, s.n_lost, s.n_forwarded,
               s.n_out_of_order, s.bytes_forwarded);
}

int run_emulate(const EmulateCommand& c, asio::io_context& ctx, asio::signal_set& signals)
{
    netem::Impairer impairer(c.listen, c.forward, c.profile);
    int status = wait_for_signal(ctx, signals, [&] { return impairer.error(); });
    auto error = impairer.stop();
    log_path_stats("forward", impairer.stats(netem::Direction::forward));
    log_path_stats("reverse", impairer.stats(netem::Direction::reverse));
    return error ? 1 : status;
}

int run_bench(const BenchCommand& c)
{
    bench::SweepOptions options;
    auto plan = bench::plan_sweep(c.entries, options);
    std::vector<bench::BenchReport> reports;
    for (auto& spec : plan) {
        log().info("scenario {} [{}]: {} x {} s", spec.id, bench::to_string(spec.path), spec.repetitions,
                   std::chrono::duration<double>(spec.transfer_duration).count());
        try {
            reports.push_back(bench::run_scenario(spec));
        } catch (const bench::ScenarioError& e) {
            log().error("scenario {} [{}]: {}", spec.id, bench::to_string(spec.path), e.what());
            return 1;
        }
    }
    auto files = bench::emit_report(reports, c.out_dir);
    auto script = c.out_dir / "netem_native.sh";
    {
        std::ofstream out(script);
        out << bench::generate_netem_script(bench::netem_grid_for(c.entries, options));
        if (!out) throw std::runtime_error("cannot write " + script.string());
    }
    std::filesystem::permissions(script, std::filesystem::perms::owner_exec | std::filesystem::perms::group_exec,
                                 std::filesystem::perm_options::add);

    std::printf("%-24s %-10s %10s %10s %8s %8s %6s\n", "scenario", "path", "sndr_mbps", "rcvr_mbps", "sndr_cpu",
                "rcvr_cpu", "failed");
    std::size_t failed = 0;
    for (auto& r : reports) {
        std::printf("%-24s %-10s %10.2f %10.2f %8.1f %8.1f %6zu\n", r.scenario.id.c_str(), bench::to_string(r.scenario.path),
                    r.sender_bitrate().mean, r.receiver_bitrate().mean, r.sender_cpu().mean, r.receiver_cpu().mean,
                    r.failed());
        failed += r.failed();
    }
    std::printf("csv: %s\n", files.csv.c_str());
    for (auto& chart : files.charts) std::printf("chart: %s\n", chart.c_str());
    std::printf("netem script for kernel-shaped runs: %s\n", script.c_str());
    return failed ? 1 : 0;
}

}  // namespace

std::pair<asio::ip::address, unsigned short> parse_address(const std::string& text)
{
    auto colon = text.rfind(':');
    if (colon == std::string::npos || colon == 0 || colon + 1 == text.size()) {
        throw UsageError("address '" + text + "' is not host:port");
    }
    std::string host = text.substr(0, colon);
    std::string port_text = text.substr(colon + 1);
    if (host.front() == '[') {
        if (host.back() != ']') throw UsageError("address '" + text + "' has an unterminated [");
        host = host.substr(1, host.size() - 2);
    } else if (host.find(':') != std::string::npos) {
        throw UsageError("IPv6 address '" + text + "' must be written as [addr]:port");
    }
    if (host == "localhost") host = "127.0.0.1";
    boost::system::error_code ec;
    auto addr = asio::ip::make_address(host, ec);
    if (ec) throw UsageError("'" + host + "' is not an IP address");
    unsigned port = 0;
    auto [end, perr] = std::from_chars(port_text.data(), port_text.data() + port_text.size(), port);
    if (perr != std::errc() || end != port_text.data() + port_text.size() || port > 65535) {
        throw UsageError("bad port '" + port_text + "'");
    }
    return {addr, static_cast<unsigned short>(port)};
}

Command parse_command(const std::vector<std::string>& args)
{
    CLI::App app{"TCP over QUIC tunnel, datagram impairer and benchmark harness", "quic-tun"};
    app.require_subcommand(1, 1);

    std::string dest, bind, listen, forward, cert, key, profile, sweep, out;
    bool insecure = false;

    auto* serve = app.add_subcommand("serve", "Accept tunnel connections and forward each stream to a TCP destination");
    serve->add_option("--dest", dest, "TCP destination, ip:port")->required();
    serve->add_option("--bind", bind, "UDP address to listen on, ip:port")->required();
    auto* cert_opt = serve->add_option("--cert", cert, "PEM or DER certificate (chain) file");
    auto* key_opt = serve->add_option("--key", key, "PEM or DER private key file");
    cert_opt->needs(key_opt);
    key_opt->needs(cert_opt);

    auto* connect = app.add_subcommand("connect", "Accept local TCP connections and carry them over the tunnel");
    connect->add_option("--dest", dest, "tunnel server, ip:port")->required();
    connect->add_option("--bind", bind, "local TCP address to listen on, ip:port")->required();
    connect->add_flag("--insecure", insecure, "Accept any server certificate (testing only)");

    auto* emulate = app.add_subcommand("emulate", "Run the UDP impairment proxy");
    emulate->add_option("--listen", listen, "UDP address to listen on, ip:port")->required();
    emulate->add_option("--forward", forward, "UDP address to forward to, ip:port")->required();
    emulate->add_option("--profile", profile, "impairment profile file")->required();

    auto* benchc = app.add_subcommand("bench", "Run a scenario sweep and write CSV and charts");
    benchc->add_option("--sweep", sweep, "file listing one profile path per line")->required();
    benchc->add_option("--out", out, "output directory")->required();

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        auto subs = app.get_subcommands();
        throw HelpRequested(subs.empty() ? app.help() : subs.front()->help());
    } catch (const CLI::ParseError& e) {
        std::string sub;
        for (auto* s : app.get_subcommands()) sub = s->get_name();
        throw UsageError(std::string(e.what()) + (sub.empty() ? "" : " (see quic-tun " + sub + " --help)"));
    }

    if (serve->parsed()) {
        ServeCommand c{endpoint<tcp::endpoint>(dest), endpoint<udp::endpoint>(bind), std::nullopt, std::nullopt};
        if (!cert.empty()) {
            for (auto& f : {cert, key}) {
                if (!std::filesystem::is_regular_file(f)) throw UsageError("cannot read '" + f + "'");
            }
            c.cert = cert;
            c.key = key;
        }
        return c;
    }
    if (connect->parsed()) {
        return ConnectCommand{endpoint<udp::endpoint>(dest), endpoint<tcp::endpoint>(bind), insecure};
    }
    if (emulate->parsed()) {
        EmulateCommand c{endpoint<udp::endpoint>(listen), endpoint<udp::endpoint>(forward), profile, {}};
        try {
            c.profile = netem::load_profile(profile);
        } catch (const netem::ProfileError& e) {
            throw UsageError(e.what());
        }
        return c;
    }
    BenchCommand c;
    c.sweep_path = sweep;
    c.out_dir = out;
    try {
        c.entries = bench::load_sweep(sweep);
    } catch (const bench::SweepError& e) {
        throw UsageError(e.what());
    }
    if (std::filesystem::exists(c.out_dir) && !std::filesystem::is_directory(c.out_dir)) {
        throw UsageError("--out '" + out + "' exists and is not a directory");
    }
    return c;
}

int execute(const Command& command)
{
    if (auto* b = std::get_if<BenchCommand>(&command)) return run_bench(*b);
    // Signals are caught from here on, so an interrupt during startup still exits cleanly.
    asio::io_context ctx;
    asio::signal_set signals(ctx, SIGINT, SIGTERM);
    return std::visit(
        [&](auto& c) -> int {
            using T = std::decay_t<decltype(c)>;
            if constexpr (std::is_same_v<T, ServeCommand>) return run_serve(c, ctx, signals);
            else if constexpr (std::is_same_v<T, ConnectCommand>) return run_connect(c, ctx, signals);
            else if constexpr (std::is_same_v<T, EmulateCommand>) return run_emulate(c, ctx, signals);
            else return 1;
        },
        command);
}

int main(int argc, char** argv)
{
    std::vector<std::string> args(argv + 1, argv + argc);
    Command command;
    try {
        command = parse_command(args);
    } catch (const HelpRequested& h) {
        std::cout << h.what();
        return 0;
    } catch (const UsageError& e) {
        std::cerr << "quic-tun: " << e.what() << "\n";
        return 2;
    }
    try {
        return execute(command);
    } catch (const std::exception& e) {
        log().error("{}", e.what());
        return 1;
    }
}

}  // namespace quictun::cli
