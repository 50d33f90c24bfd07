#pragma once

// A sweep file lists one profile file per line (relative paths resolve against
// the sweep file's directory; blank lines and # comments are skipped).

#include <filesystem>

#include "quictun/bench/netem_script.hpp"
#include "quictun/bench/scenario.hpp"

namespace quictun::bench {

class SweepError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct SweepEntry {
    std::string id;  // profile file stem
    netem::ImpairmentProfile profile;
};

std::vector<std::filesystem::path> parse_sweep(std::string_view text, const std::filesystem::path& base_dir);
// Loads the sweep and every profile in it. Throws SweepError on a missing or
// invalid file, or when the sweep lists nothing.
std::vector<SweepEntry> load_sweep(const std::filesystem::path& sweep_file);

struct SweepOptions {
    quic::Duration transfer_duration = std::chrono::seconds(10);
    unsigned repetitions = 5;
};

// A tunnel scenario per entry, plus a native_tcp one where the profile only
// limits the rate (anything else needs kernel shaping).
std::vector<ScenarioSpec> plan_sweep(const std::vector<SweepEntry>& entries, const SweepOptions& options);

// The sweep's cells as a netem grid, for rerunning them with kernel shaping.
NetemGrid netem_grid_for(const std::vector<SweepEntry>& entries, const SweepOptions& options);

}  // namespace quictun::bench
