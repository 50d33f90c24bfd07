#pragma once

// quic-tun command line: serve, connect, emulate, bench. Parsing validates
// everything (addresses, files, profiles) before any socket exists.

#include <filesystem>
#include <variant>

#include <boost/asio/ip/tcp.hpp>
#include <boost/asio/ip/udp.hpp>

#include "quictun/bench/sweep.hpp"
#include "quictun/netem/profile.hpp"

namespace quictun::cli {

using tcp = boost::asio::ip::tcp;
using udp = boost::asio::ip::udp;

struct ServeCommand {
    tcp::endpoint dest;
    udp::endpoint bind;
    std::optional<std::filesystem::path> cert;
    std::optional<std::filesystem::path> key;
};

struct ConnectCommand {
    udp::endpoint dest;
    tcp::endpoint bind;
    bool insecure = false;
};

struct EmulateCommand {
    udp::endpoint listen;
    udp::endpoint forward;
    std::filesystem::path profile_path;
    netem::ImpairmentProfile profile;
};

struct BenchCommand {
    std::filesystem::path sweep_path;
    std::vector<bench::SweepEntry> entries;
    std::filesystem::path out_dir;
};

using Command = std::variant<ServeCommand, ConnectCommand, EmulateCommand, BenchCommand>;

// Help was requested; the text is in what().
struct HelpRequested : std::runtime_error {
    using std::runtime_error::runtime_error;
};

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// "ip:port" or "[ipv6]:port"; "localhost" means 127.0.0.1. Throws UsageError.
std::pair<boost::asio::ip::address, unsigned short> parse_address(const std::string& text);

// args excludes the program name. Throws UsageError or HelpRequested.
Command parse_command(const std::vector<std::string>& args);

// Runs the command until SIGINT/SIGTERM (serve, connect, emulate) or completion (bench).
int execute(const Command& command);

// Full entry point: parse, report usage errors on stderr, execute.
// Exit codes: 0 clean shutdown, 1 runtime or startup failure, 2 usage error.
int main(int argc, char** argv);

}  // namespace quictun::cli
