#include "quictun/netem/profile.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>

namespace quictun::netem {

using namespace std::chrono_literals;

namespace {

std::string_view trim(std::string_view s)
{
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

double parse_double(std::string_view v, std::string_view key, int line)
{
    // std::from_chars for double is available in libstdc++ 11.
    double out = 0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || ptr != v.data() + v.size() || !std::isfinite(out)) {
        throw ProfileError(fmt::format("line {}: {} expects a number, got '{}'", line, key, v));
    }
    return out;
}

std::uint64_t parse_u64(std::string_view v, std::string_view key, int line)
{
    std::uint64_t out = 0;
    int base = 10;
    if (v.size() > 2 && v[0] == '0' && (v[1] == 'x' || v[1] == 'X')) {
        v.remove_prefix(2);
        base = 16;
    }
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out, base);
    if (ec != std::errc{} || ptr != v.data() + v.size() || v.empty()) {
        throw ProfileError(fmt::format("line {}: {} expects a non-negative integer, got '{}'", line, key, v));
    }
    return out;
}

Duration from_ms(double ms)
{
    return std::chrono::duration_cast<Duration>(std::chrono::duration<double, std::milli>(ms));
}

double to_ms(Duration d)
{
    return std::chrono::duration<double, std::milli>(d).count();
}

}  // namespace

Duration ImpairmentProfile::effective_reorder_extra_delay() const
{
    if (reorder_extra_delay) return *reorder_extra_delay;
    return std::max<Duration>(10ms, 3 * delay);
}

std::uint64_t ImpairmentProfile::bucket_depth_bytes() const
{
    if (!rate_limit_bytes_per_sec) return 0;
    // 2 x rate x 0.1 s
    return *rate_limit_bytes_per_sec / 5;
}

void ImpairmentProfile::validate() const
{
    if (!(loss_rate >= 0.0 && loss_rate <= 1.0)) throw ProfileError("loss_rate must be within [0, 1]");
    if (!(reorder_rate >= 0.0 && reorder_rate <= 1.0)) throw ProfileError("reorder_rate must be within [0, 1]");
    if (delay < Duration::zero()) throw ProfileError("delay_ms must be >= 0");
    if (reorder_extra_delay && *reorder_extra_delay < Duration::zero()) {
        throw ProfileError("reorder_extra_delay_ms must be >= 0");
    }
    if (rate_limit_bytes_per_sec && *rate_limit_bytes_per_sec == 0) {
        throw ProfileError("rate_limit_bytes_per_sec must be > 0 when set");
    }
}

ImpairmentProfile parse_profile(std::string_view text)
{
    ImpairmentProfile p;
    std::set<std::string, std::less<>> seen;
    int line_no = 0;
    while (!text.empty()) {
        ++line_no;
        auto nl = text.find('\n');
        auto line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string_view::npos) throw ProfileError(fmt::format("line {}: expected key=value", line_no));
        auto key = trim(line.substr(0, eq));
        auto value = trim(line.substr(eq + 1));
        if (!seen.insert(std::string(key)).second) {
            throw ProfileError(fmt::format("line {}: duplicate key '{}'", line_no, key));
        }
        if (key == "loss_rate") {
            p.loss_rate = parse_double(value, key, line_no);
        } else if (key == "delay_ms") {
            p.delay = from_ms(parse_double(value, key, line_no));
        } else if (key == "reorder_rate") {
            p.reorder_rate = parse_double(value, key, line_no);
        } else if (key == "reorder_extra_delay_ms") {
            p.reorder_extra_delay = from_ms(parse_double(value, key, line_no));
        } else if (key == "rate_limit_bytes_per_sec") {
            auto r = parse_u64(value, key, line_no);
            if (r > 0) p.rate_limit_bytes_per_sec = r;
        } else if (key == "seed") {
            p.seed = parse_u64(value, key, line_no);
        } else {
            throw ProfileError(fmt::format("line {}: unknown key '{}'", line_no, key));
        }
    }
    p.validate();
    return p;
}

ImpairmentProfile load_profile(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ProfileError("cannot open profile file " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    try {
        return parse_profile(ss.str());
    } catch (const ProfileError& e) {
        throw ProfileError(path.string() + ": " + e.what());
    }
}

std::string format_profile(const ImpairmentProfile& p)
{
    std::string out;
    out += fmt::format("loss_rate={}\n", p.loss_rate);
    out += fmt::format("delay_ms={}\n", to_ms(p.delay));
    out += fmt::format("reorder_rate={}\n", p.reorder_rate);
    if (p.reorder_extra_delay) out += fmt::format("reorder_extra_delay_ms={}\n", to_ms(*p.reorder_extra_delay));
    out += fmt::format("rate_limit_bytes_per_sec={}\n", p.rate_limit_bytes_per_sec.value_or(0));
    out += fmt::format("seed={}\n", p.seed);
    return out;
}

}  // namespace quictun::netem
