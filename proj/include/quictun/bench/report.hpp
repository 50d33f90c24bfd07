#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "quictun/bench/scenario.hpp"

namespace quictun::bench {

inline constexpr const char* kCsvHeader =
    "scenario_id,path,loss_pct,delay_ms,reorder_pct,rep,side,bitrate_mbps,cpu_pct";

enum class Side { sndr, rcvr };

struct CsvRow {
    std::string scenario_id;
    PathKind path = PathKind::tunnel;
    double loss_pct = 0;
    double delay_ms = 0;
    double reorder_pct = 0;
    unsigned rep = 0;
    Side side = Side::sndr;
    double bitrate_mbps = 0;
    double cpu_pct = 0;

    friend bool operator==(const CsvRow&, const CsvRow&) = default;
};

class ReportError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Two rows (sndr, rcvr) per repetition, in report order.
std::vector<CsvRow> csv_rows(const std::vector<BenchReport>& reports);
// Numbers use the shortest text that parses back to the same double.
std::string format_csv(const std::vector<CsvRow>& rows);
// Throws ReportError on a wrong header or malformed line.
std::vector<CsvRow> parse_csv(std::string_view text);

enum class SweepVariable { loss, delay, reorder };

const char* to_string(SweepVariable v);

struct ChartSeries {
    PathKind path = PathKind::tunnel;
    std::vector<std::pair<double, double>> points;  // (x, mean receiver Mbps), x ascending
};

struct Chart {
    SweepVariable variable = SweepVariable::loss;
    std::vector<ChartSeries> series;  // one per path present
};

// Variables taking at least two distinct values across the rows.
std::vector<SweepVariable> swept_variables(const std::vector<CsvRow>& rows);
// Mean receiver bitrate against `v`, using rows whose other two variables sit at
// their smallest value.
Chart build_chart(const std::vector<CsvRow>& rows, SweepVariable v);
std::string render_svg(const Chart& chart);

struct EmittedFiles {
    std::filesystem::path csv;
    std::vector<std::filesystem::path> charts;
};

// Writes results.csv and one bitrate_vs_<variable>.svg per swept variable into
// `out_dir`. An empty report set is an error and writes nothing.
EmittedFiles emit_report(const std::vector<BenchReport>& reports, const std::filesystem::path& out_dir);

}  // namespace quictun::bench
