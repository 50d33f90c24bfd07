#include "quictun/bench/sweep.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace quictun::bench {

namespace {

std::string_view trim(std::string_view s)
{
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

}  // namespace

std::vector<std::filesystem::path> parse_sweep(std::string_view text, const std::filesystem::path& base_dir)
{
    std::vector<std::filesystem::path> out;
    while (!text.empty()) {
        auto nl = text.find('\n');
        auto line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        line = trim(line);
        if (line.empty() || line.front() == '#') continue;
        std::filesystem::path p{std::string(line)};
        out.push_back(p.is_absolute() ? p : base_dir / p);
    }
    return out;
}

std::vector<SweepEntry> load_sweep(const std::filesystem::path& sweep_file)
{
    std::ifstream in(sweep_file);
    if (!in) throw SweepError("cannot read sweep file " + sweep_file.string());
    std::stringstream ss;
    ss << in.rdbuf();
    auto paths = parse_sweep(ss.str(), sweep_file.parent_path());
    if (paths.empty()) throw SweepError("sweep file " + sweep_file.string() + " lists no profiles");
    std::vector<SweepEntry> entries;
    std::set<std::string> ids;
    for (auto& p : paths) {
        SweepEntry e;
        try {
            e.profile = netem::load_profile(p);
        } catch (const std::exception& ex) {
            throw SweepError(ex.what());
        }
        e.id = p.stem().string();
        if (!ids.insert(e.id).second) throw SweepError("duplicate profile name '" + e.id + "' in sweep");
        entries.push_back(std::move(e));
    }
    return entries;
}

std::vector<ScenarioSpec> plan_sweep(const std::vector<SweepEntry>& entries, const SweepOptions& options)
{
    std::vector<ScenarioSpec> out;
    for (auto& e : entries) {
        ScenarioSpec s;
        s.id = e.id;
        s.profile = e.profile;
        s.transfer_duration = options.transfer_duration;
        s.repetitions = options.repetitions;
        s.path = PathKind::tunnel;
        out.push_back(s);
        if (e.profile.loss_rate == 0 && e.profile.delay == quic::Duration::zero() && e.profile.reorder_rate == 0) {
            s.path = PathKind::native_tcp;
            out.push_back(s);
        }
    }
    return out;
}

NetemGrid netem_grid_for(const std::vector<SweepEntry>& entries, const SweepOptions& options)
{
    NetemGrid g;
    g.name = "sweep";
    g.repetitions = options.repetitions;
    g.seconds = static_cast<unsigned>(std::chrono::duration_cast<std::chrono::seconds>(options.transfer_duration).count());
    g.rate_mbytes_per_sec = 0;
    for (auto& e : entries) {
        g.cells.push_back({std::nearbyint(e.profile.loss_rate * 1e8) / 1e6,
                           std::chrono::duration<double, std::milli>(e.profile.delay).count(),
                           std::nearbyint(e.profile.reorder_rate * 1e8) / 1e6});
        if (e.profile.rate_limit_bytes_per_sec) {
            g.rate_mbytes_per_sec = std::max(g.rate_mbytes_per_sec, *e.profile.rate_limit_bytes_per_sec / 1e6);
        }
    }
    if (g.rate_mbytes_per_sec == 0) g.rate_mbytes_per_sec = 10;
    return g;
}

}  // namespace quictun::bench
