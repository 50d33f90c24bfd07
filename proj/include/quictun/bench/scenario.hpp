#pragma once

#include <functional>
#include <string>
#include <vector>

#include "quictun/bench/metrics.hpp"
#include "quictun/netem/profile.hpp"
#include "quictun/quic/types.hpp"

namespace quictun::bench {

enum class PathKind { tunnel, native_tcp };

const char* to_string(PathKind p);
// Throws std::invalid_argument for anything but "tunnel" / "native_tcp".
PathKind parse_path(std::string_view s);

class ScenarioError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ScenarioSpec {
    std::string id;
    PathKind path = PathKind::tunnel;
    // Tunnel path: applied by the UDP impairer. Native path: only the rate limit is
    // applied (userspace TCP shaper); loss, delay and reorder need OS-level shaping
    // and are rejected.
    netem::ImpairmentProfile profile;
    quic::Duration transfer_duration = std::chrono::seconds(10);
    unsigned repetitions = 5;
    std::uint64_t payload_seed = 1;
    // How long the receiver may keep draining after the sender stops.
    quic::Duration drain_timeout = std::chrono::seconds(60);

    // Throws ScenarioError.
    void validate() const;
};

struct RepetitionResult {
    unsigned rep = 0;  // 1-based
    bool ok = false;
    std::string error;
    ThroughputSample sender;
    ThroughputSample receiver;
    CpuSample sender_cpu;
    CpuSample receiver_cpu;
    bool payload_verified = false;
};

struct MetricSummary {
    double mean = 0;
    double stddev = 0;
};

struct BenchReport {
    ScenarioSpec scenario;
    std::vector<RepetitionResult> reps;

    // Over all repetitions, failed ones included with what they measured.
    MetricSummary sender_bitrate() const;
    MetricSummary receiver_bitrate() const;
    MetricSummary sender_cpu() const;
    MetricSummary receiver_cpu() const;
    std::size_t failed() const;
};

// Called after each repetition.
using ProgressFn = std::function<void(const ScenarioSpec&, const RepetitionResult&)>;

// Builds the path on loopback, runs the repetitions and tears the path down.
// Setup failures throw ScenarioError naming the component; a repetition that
// loses its connection is marked failed and kept in the report.
BenchReport run_scenario(const ScenarioSpec& spec, const ProgressFn& progress = {});

}  // namespace quictun::bench
