#include "quictun/bench/metrics.hpp"

#include <cmath>
#include <numeric>

namespace quictun::bench {

double throughput(double bits, double seconds)
{
    if (!(seconds > 0)) throw MetricError("throughput needs a positive duration");
    return bits / seconds / 1e6;
}

double cpu_model_percent(double cycles_per_packet, double packets_per_second, double total_cycles_per_second)
{
    if (!(total_cycles_per_second > 0)) throw MetricError("cpu model needs a positive cycle rate");
    return cycles_per_packet * packets_per_second / total_cycles_per_second * 100.0;
}

std::optional<double> CpuSample::model_percent() const
{
    if (!model) return std::nullopt;
    return cpu_model_percent(model->cycles_per_packet, model->packets_per_second, model->total_cycles_per_second);
}

double mean(const std::vector<double>& xs)
{
    if (xs.empty()) throw MetricError("mean of no samples");
    return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

double sample_stddev(const std::vector<double>& xs)
{
    if (xs.size() < 2) return 0.0;
    double m = mean(xs);
    double ss = 0;
    for (double x : xs) ss += (x - m) * (x - m);
    return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

}  // namespace quictun::bench
