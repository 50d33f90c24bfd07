#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

namespace quictun::bench {

class MetricError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

// bits / seconds / 1e6. Throws MetricError unless seconds > 0.
double throughput(double bits, double seconds);

// C x P / T x 100 with C = cycles per packet, P = packets per second,
// T = total cycles per second. Throws MetricError unless T > 0.
double cpu_model_percent(double cycles_per_packet, double packets_per_second, double total_cycles_per_second);

struct ThroughputSample {
    std::uint64_t bytes = 0;
    double elapsed_seconds = 0;

    double bits() const { return static_cast<double>(bytes) * 8.0; }
    // Mbps; 0 when nothing was timed.
    double bitrate_mbps() const { return elapsed_seconds > 0 ? throughput(bits(), elapsed_seconds) : 0.0; }
};

struct CpuModel {
    double cycles_per_packet = 0;
    double packets_per_second = 0;
    double total_cycles_per_second = 0;
};

struct CpuSample {
    double cpu_seconds = 0;  // CPU time of the role's threads over the window
    double wall_seconds = 0;
    std::optional<CpuModel> model;

    double utilization_percent() const { return wall_seconds > 0 ? cpu_seconds / wall_seconds * 100.0 : 0.0; }
    std::optional<double> model_percent() const;
};

double mean(const std::vector<double>& xs);
// Sample standard deviation (n - 1 denominator); 0 for fewer than two values.
double sample_stddev(const std::vector<double>& xs);

}  // namespace quictun::bench
