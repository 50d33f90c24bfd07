#include <gtest/gtest.h>

#include <fstream>

#include <sys/wait.h>

#include "quictun/cli/cli.hpp"

using namespace quictun;
using namespace quictun::cli;

namespace {

std::vector<std::string> split(const std::string& line)
{
    std::vector<std::string> out;
    std::istringstream in(line);
    for (std::string w; in >> w;) out.push_back(w);
    return out;
}

Command parse(const std::string& line)
{
    return parse_command(split(line));
}

std::filesystem::path temp_dir()
{
    auto d = std::filesystem::temp_directory_path() /
             ("quictun-cli-" + std::to_string(::getpid()) + "-" +
              ::testing::UnitTest::GetInstance()->current_test_info()->name());
    std::filesystem::create_directories(d);
    return d;
}

int exit_status(const std::string& args)
{
    int rc = std::system((std::string(QUIC_TUN_BINARY) + " " + args + " >/dev/null 2>&1").c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

}  // namespace

TEST(ParseAddress, Forms)
{
    auto [a, p] = parse_address("127.0.0.1:8080");
    EXPECT_EQ(a.to_string(), "127.0.0.1");
    EXPECT_EQ(p, 8080);
    EXPECT_EQ(parse_address("0.0.0.0:4433").first.to_string(), "0.0.0.0");
    EXPECT_EQ(parse_address("[::1]:9000").first.to_string(), "::1");
    EXPECT_EQ(parse_address("localhost:1").first.to_string(), "127.0.0.1");
    EXPECT_EQ(parse_address("1.2.3.4:65535").second, 65535);
    for (auto bad : {"127.0.0.1", "127.0.0.1:", ":80", "127.0.0.1:65536", "127.0.0.1:8o", "::1:80", "[::1:80",
                     "example.com:80", "300.1.1.1:80", "127.0.0.1:-1"}) {
        EXPECT_THROW(parse_address(bad), UsageError) << bad;
    }
}

// The two documented command lines.
TEST(ParseCommand, ServeAndConnectLines)
{
    auto s = std::get<ServeCommand>(parse("serve --dest 127.0.0.1:8080 --bind 0.0.0.0:4433"));
    EXPECT_EQ(s.dest, tcp::endpoint(boost::asio::ip::make_address("127.0.0.1"), 8080));
    EXPECT_EQ(s.bind, udp::endpoint(boost::asio::ip::make_address("0.0.0.0"), 4433));
    EXPECT_FALSE(s.cert);

    auto c = std::get<ConnectCommand>(parse("connect --dest 127.0.0.1:4433 --bind 127.0.0.1:9000"));
    EXPECT_EQ(c.dest, udp::endpoint(boost::asio::ip::make_address("127.0.0.1"), 4433));
    EXPECT_EQ(c.bind, tcp::endpoint(boost::asio::ip::make_address("127.0.0.1"), 9000));
    EXPECT_FALSE(c.insecure);

    EXPECT_TRUE(std::get<ConnectCommand>(parse("connect --insecure --bind 127.0.0.1:9000 --dest 127.0.0.1:4433")).insecure);
}

TEST(ParseCommand, UsageErrors)
{
    for (auto line : {"", "serve", "serve --dest 127.0.0.1:8080", "connect --bind 127.0.0.1:9000",
                      "serve --dest 127.0.0.1:8080 --bind 0.0.0.0:4433 --bogus",
                      "serve --dest nowhere --bind 0.0.0.0:4433", "launch --dest 1.1.1.1:1",
                      "serve --dest 127.0.0.1:8080 --bind 0.0.0.0:4433 --insecure",
                      "connect --dest 127.0.0.1:4433 --bind 127.0.0.1:9000 --cert c.pem",
                      "serve connect --dest 127.0.0.1:4433 --bind 127.0.0.1:9000"}) {
        EXPECT_THROW(parse(line), UsageError) << "'" << line << "'";
    }
    EXPECT_THROW(parse("--help"), HelpRequested);
    EXPECT_THROW(parse("serve --help"), HelpRequested);
}

TEST(ParseCommand, CertAndKeyGoTogetherAndMustExist)
{
    auto dir = temp_dir();
    std::ofstream(dir / "c.pem") << "x";
    std::ofstream(dir / "k.pem") << "x";
    auto base = std::string("serve --dest 127.0.0.1:8080 --bind 0.0.0.0:4433 ");
    auto c = (dir / "c.pem").string(), k = (dir / "k.pem").string();
    EXPECT_THROW(parse(base + "--cert " + c), UsageError);
    EXPECT_THROW(parse(base + "--key " + k), UsageError);
    EXPECT_THROW(parse(base + "--cert " + c + " --key " + (dir / "nope.pem").string()), UsageError);
    auto s = std::get<ServeCommand>(parse(base + "--cert " + c + " --key " + k));
    EXPECT_EQ(*s.cert, c);
    EXPECT_EQ(*s.key, k);
    std::filesystem::remove_all(dir);
}

TEST(ParseCommand, EmulateLoadsProfile)
{
    auto dir = temp_dir();
    std::ofstream(dir / "p.profile") << "loss_rate = 0.1\ndelay_ms = 20\nseed = 3\n";
    std::ofstream(dir / "bad.profile") << "loss_rate = 2\n";
    auto e = std::get<EmulateCommand>(
        parse("emulate --listen 127.0.0.1:5000 --forward 127.0.0.1:4433 --profile " + (dir / "p.profile").string()));
    EXPECT_DOUBLE_EQ(e.profile.loss_rate, 0.1);
    EXPECT_EQ(e.profile.delay, std::chrono::milliseconds(20));
    EXPECT_EQ(e.profile.seed, 3u);
    EXPECT_THROW(parse("emulate --listen 127.0.0.1:5000 --forward 127.0.0.1:4433 --profile " +
                       (dir / "missing.profile").string()),
                 UsageError);
    EXPECT_THROW(parse("emulate --listen 127.0.0.1:5000 --forward 127.0.0.1:4433 --profile " +
                       (dir / "bad.profile").string()),
                 UsageError);
    std::filesystem::remove_all(dir);
}

TEST(ParseCommand, BenchLoadsSweep)
{
    auto dir = temp_dir();
    std::ofstream(dir / "a.profile") << "rate_limit_bytes_per_sec = 10000000\n";
    std::ofstream(dir / "b.profile") << "loss_rate = 0.05\n";
    std::ofstream(dir / "s.sweep") << "# two cells\na.profile\n\nb.profile\n";
    std::ofstream(dir / "file") << "";
    auto b = std::get<BenchCommand>(parse("bench --sweep " + (dir / "s.sweep").string() + " --out " + (dir / "out").string()));
    ASSERT_EQ(b.entries.size(), 2u);
    EXPECT_EQ(b.entries[0].id, "a");
    EXPECT_DOUBLE_EQ(b.entries[1].profile.loss_rate, 0.05);
    EXPECT_THROW(parse("bench --sweep " + (dir / "s.sweep").string() + " --out " + (dir / "file").string()), UsageError);
    EXPECT_THROW(parse("bench --sweep " + (dir / "none.sweep").string() + " --out " + (dir / "out").string()), UsageError);
    EXPECT_FALSE(std::filesystem::exists(dir / "out"));  // nothing written while parsing
    std::filesystem::remove_all(dir);
}

// The sweep files shipped in bench/ must stay loadable.
TEST(ParseCommand, ShippedSweepsLoad)
{
    for (auto name : {"loss.sweep", "delay.sweep", "reorder.sweep"}) {
        auto path = std::filesystem::path(QUIC_TUN_SOURCE_DIR) / "bench" / name;
        auto b = std::get<BenchCommand>(parse("bench --sweep " + path.string() + " --out /tmp/unused"));
        EXPECT_GE(b.entries.size(), 5u) << name;
        for (auto& e : b.entries) EXPECT_EQ(*e.profile.rate_limit_bytes_per_sec, 10'000'000u) << e.id;
    }
}

TEST(Binary, ExitCodes)
{
    EXPECT_EQ(exit_status("--help"), 0);
    EXPECT_EQ(exit_status("serve --help"), 0);
    EXPECT_EQ(exit_status("serve"), 2);
    EXPECT_EQ(exit_status("connect --dest 127.0.0.1:1 --bind 127.0.0.1:99999"), 2);
    EXPECT_EQ(exit_status(""), 2);
    // Parses, then fails at startup: the bind address is not local.
    EXPECT_EQ(exit_status("connect --dest 127.0.0.1:4433 --bind 192.0.2.1:9000"), 1);
}
