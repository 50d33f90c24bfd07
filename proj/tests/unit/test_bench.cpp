#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "quictun/bench/report.hpp"
#include "quictun/bench/shaper.hpp"
#include "quictun/bench/sweep.hpp"
#include "quictun/bench/traffic.hpp"
#include "quictun/common/payload.hpp"

using namespace quictun;
using namespace quictun::bench;
using namespace std::chrono_literals;
namespace fs = std::filesystem;

namespace {

double rel_err(double a, double b)
{
    if (a == b) return 0;
    return std::fabs(a - b) / std::max(std::fabs(a), std::fabs(b));
}

struct TempDir {
    fs::path path;
    TempDir()
    {
        path = fs::temp_directory_path() / ("quictun-test-" + std::to_string(std::random_device{}()));
        fs::create_directories(path);
    }
    ~TempDir()
    {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
};

std::string slurp(const fs::path& p)
{
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write(const fs::path& p, const std::string& s)
{
    std::ofstream(p) << s;
}

BenchReport synthetic_report(std::string id, PathKind path, double loss, unsigned reps, std::mt19937_64& rng)
{
    BenchReport r;
    r.scenario.id = std::move(id);
    r.scenario.path = path;
    r.scenario.profile.loss_rate = loss;
    r.scenario.repetitions = reps;
    std::uniform_real_distribution<double> secs(0.5, 12), cpu(0, 3);
    for (unsigned i = 1; i <= reps; ++i) {
        RepetitionResult rr;
        rr.rep = i;
        rr.ok = true;
        rr.sender = {rng() % 200'000'000, secs(rng)};
        rr.receiver = {rng() % 200'000'000, secs(rng)};
        rr.sender_cpu = {cpu(rng), secs(rng), std::nullopt};
        rr.receiver_cpu = {cpu(rng), secs(rng), std::nullopt};
        r.reps.push_back(rr);
    }
    return r;
}

}  // namespace

TEST(Metrics, ThroughputExamples)
{
    EXPECT_DOUBLE_EQ(throughput(8e7, 1.0), 80.0);
    // 10 MB/s for one second
    EXPECT_DOUBLE_EQ(throughput(10e6 * 8, 1.0), 80.0);
    // 1 MB/s = 8 Mbps
    EXPECT_DOUBLE_EQ(throughput(1e6 * 8, 1.0), 8.0);
    EXPECT_DOUBLE_EQ(throughput(0, 3.0), 0.0);
    EXPECT_THROW(throughput(100, 0.0), MetricError);
    EXPECT_THROW(throughput(100, -1.0), MetricError);
}

TEST(Metrics, CpuModelExamples)
{
    EXPECT_NEAR(cpu_model_percent(1000, 5000, 1e9), 0.5, 1e-15);
    EXPECT_DOUBLE_EQ(cpu_model_percent(1000, 0, 1e9), 0.0);
    EXPECT_NEAR(cpu_model_percent(2000, 25000, 2.5e9), 2.0, 1e-15);
    EXPECT_THROW(cpu_model_percent(1, 1, 0), MetricError);
}

TEST(Metrics, MatchLongDoubleOracle)
{
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> bits(0, 1e11), secs(1e-3, 1e3), c(0, 1e5), p(0, 1e6), t(1e8, 1e10);
    for (int i = 0; i < 20; ++i) {
        double d = bits(rng), s = secs(rng);
        long double oracle = static_cast<long double>(d) / static_cast<long double>(s) / 1e6L;
        EXPECT_LE(rel_err(throughput(d, s), static_cast<double>(oracle)), 1e-12);
        double cc = c(rng), pp = p(rng), tt = t(rng);
        long double model = static_cast<long double>(cc) * pp / tt * 100.0L;
        EXPECT_LE(rel_err(cpu_model_percent(cc, pp, tt), static_cast<double>(model)), 1e-12);
    }
}

TEST(Metrics, SampleStatistics)
{
    EXPECT_DOUBLE_EQ(mean({1, 2, 3, 4}), 2.5);
    EXPECT_NEAR(sample_stddev({2, 4, 4, 4, 5, 5, 7, 9}), std::sqrt(32.0 / 7.0), 1e-15);
    EXPECT_EQ(sample_stddev({3}), 0.0);
    EXPECT_THROW(mean({}), MetricError);
}

TEST(Metrics, CpuSample)
{
    CpuSample s{0.5, 2.0, CpuModel{1000, 5000, 1e9}};
    EXPECT_DOUBLE_EQ(s.utilization_percent(), 25.0);
    EXPECT_NEAR(*s.model_percent(), 0.5, 1e-15);
    EXPECT_FALSE(CpuSample{}.model_percent());
}

TEST(Report, TwoRowsPerRepetition)
{
    std::mt19937_64 rng(1);
    auto rows = csv_rows({synthetic_report("clean", PathKind::tunnel, 0, 5, rng)});
    ASSERT_EQ(rows.size(), 10u);
    EXPECT_EQ(rows[0].side, Side::sndr);
    EXPECT_EQ(rows[1].side, Side::rcvr);
    EXPECT_EQ(rows[9].rep, 5u);
    auto text = format_csv(rows);
    EXPECT_EQ(text.substr(0, text.find('\n')), "scenario_id,path,loss_pct,delay_ms,reorder_pct,rep,side,bitrate_mbps,cpu_pct");
}

TEST(Report, CsvRoundTripsExactly)
{
    std::mt19937_64 rng(77);
    for (int round = 0; round < 50; ++round) {
        std::vector<BenchReport> reports;
        for (int i = 0; i < 1 + static_cast<int>(rng() % 6); ++i) {
            reports.push_back(synthetic_report("cell" + std::to_string(i), rng() & 1 ? PathKind::tunnel : PathKind::native_tcp,
                                               static_cast<double>(rng() % 21) / 100.0, 1 + rng() % 5, rng));
            reports.back().scenario.profile.delay = std::chrono::milliseconds(rng() % 1000);
            reports.back().scenario.profile.reorder_rate = static_cast<double>(rng() % 100) / 1000.0;
        }
        auto rows = csv_rows(reports);
        auto parsed = parse_csv(format_csv(rows));
        ASSERT_EQ(parsed, rows);
    }
}

TEST(Report, PercentColumnsAreClean)
{
    std::mt19937_64 rng(5);
    auto r = synthetic_report("x", PathKind::tunnel, 0.07, 1, rng);
    r.scenario.profile.reorder_rate = 0.15;
    auto rows = csv_rows({r});
    EXPECT_EQ(rows[0].loss_pct, 7.0);
    EXPECT_EQ(rows[0].reorder_pct, 15.0);
}

TEST(Report, StatisticsRecomputableFromCsv)
{
    std::mt19937_64 rng(99);
    auto report = synthetic_report("cell", PathKind::tunnel, 0.1, 5, rng);
    auto rows = parse_csv(format_csv(csv_rows({report})));
    std::vector<double> rcvr, sndr_cpu;
    for (auto& r : rows) {
        if (r.side == Side::rcvr) rcvr.push_back(r.bitrate_mbps);
        else sndr_cpu.push_back(r.cpu_pct);
    }
    // Two-pass oracle in long double.
    long double sum = 0;
    for (double x : rcvr) sum += x;
    long double m = sum / rcvr.size();
    long double ss = 0;
    for (double x : rcvr) ss += (x - m) * (x - m);
    long double sd = std::sqrt(ss / (rcvr.size() - 1));
    EXPECT_LE(rel_err(report.receiver_bitrate().mean, static_cast<double>(m)), 1e-9);
    EXPECT_LE(rel_err(report.receiver_bitrate().stddev, static_cast<double>(sd)), 1e-9);
    EXPECT_LE(rel_err(report.sender_cpu().mean, mean(sndr_cpu)), 1e-9);
}

TEST(Report, ParseRejectsMalformed)
{
    std::string h = std::string(kCsvHeader) + "\n";
    EXPECT_THROW(parse_csv(""), ReportError);
    EXPECT_THROW(parse_csv("scenario,path\n"), ReportError);
    EXPECT_THROW(parse_csv(h + "a,tunnel,0,0,0,1,sndr,1.5\n"), ReportError);
    EXPECT_THROW(parse_csv(h + "a,udp,0,0,0,1,sndr,1.5,2\n"), ReportError);
    EXPECT_THROW(parse_csv(h + "a,tunnel,x,0,0,1,sndr,1.5,2\n"), ReportError);
    EXPECT_THROW(parse_csv(h + "a,tunnel,0,0,0,1,both,1.5,2\n"), ReportError);
    EXPECT_EQ(parse_csv(h).size(), 0u);
    EXPECT_EQ(parse_csv(h + "a,tunnel,0,0,0,1,sndr,1.5,2\r\n").size(), 1u);
}

TEST(Report, LossSweepChartHasOneSeriesPerPath)
{
    std::mt19937_64 rng(3);
    std::vector<BenchReport> reports;
    for (double loss : {0.0, 0.05, 0.10, 0.15, 0.20}) {
        reports.push_back(synthetic_report("t", PathKind::tunnel, loss, 5, rng));
        reports.push_back(synthetic_report("n", PathKind::native_tcp, loss, 5, rng));
    }
    auto rows = csv_rows(reports);
    auto vars = swept_variables(rows);
    ASSERT_EQ(vars, std::vector<SweepVariable>{SweepVariable::loss});
    auto chart = build_chart(rows, SweepVariable::loss);
    ASSERT_EQ(chart.series.size(), 2u);
    for (auto& s : chart.series) {
        ASSERT_EQ(s.points.size(), 5u);
        EXPECT_EQ(s.points.front().first, 0.0);
        EXPECT_EQ(s.points.back().first, 20.0);
    }
    // Each point is the mean receiver bitrate of its report.
    EXPECT_NEAR(chart.series[0].points[2].second, reports[4].receiver_bitrate().mean, 1e-9);
    auto svg = render_svg(chart);
    EXPECT_EQ(svg.rfind("<svg", 0), 0u);
    std::size_t polylines = 0;
    for (auto pos = svg.find("<polyline"); pos != std::string::npos; pos = svg.find("<polyline", pos + 1)) ++polylines;
    EXPECT_EQ(polylines, 2u);
}

TEST(Report, GridChartsUseBaselineOfOtherVariables)
{
    std::mt19937_64 rng(4);
    std::vector<BenchReport> reports;
    for (double loss : {0.0, 0.1}) reports.push_back(synthetic_report("l", PathKind::tunnel, loss, 1, rng));
    auto delayed = synthetic_report("d", PathKind::tunnel, 0.0, 1, rng);
    delayed.scenario.profile.delay = 500ms;
    reports.push_back(delayed);
    auto rows = csv_rows(reports);
    auto vars = swept_variables(rows);
    ASSERT_EQ(vars.size(), 2u);
    auto loss = build_chart(rows, SweepVariable::loss);
    ASSERT_EQ(loss.series.size(), 1u);
    EXPECT_EQ(loss.series[0].points.size(), 2u);
    auto delay = build_chart(rows, SweepVariable::delay);
    EXPECT_EQ(delay.series[0].points.size(), 2u);
}

TEST(Report, EmitWritesCsvAndCharts)
{
    TempDir dir;
    std::mt19937_64 rng(8);
    std::vector<BenchReport> reports;
    for (double loss : {0.0, 0.2}) reports.push_back(synthetic_report("c" + std::to_string(loss), PathKind::tunnel, loss, 2, rng));
    auto out = emit_report(reports, dir.path / "out");
    EXPECT_TRUE(fs::exists(out.csv));
    ASSERT_EQ(out.charts.size(), 1u);
    EXPECT_EQ(out.charts[0].filename(), "bitrate_vs_loss.svg");
    EXPECT_EQ(parse_csv(slurp(out.csv)), csv_rows(reports));
    for (auto& e : fs::directory_iterator(dir.path / "out")) EXPECT_NE(e.path().extension(), ".tmp");
}

TEST(Report, EmptySweepWritesNothing)
{
    TempDir dir;
    EXPECT_THROW(emit_report({}, dir.path / "out"), ReportError);
    EXPECT_FALSE(fs::exists(dir.path / "out"));
    BenchReport no_reps;
    EXPECT_THROW(emit_report({no_reps}, dir.path / "out"), ReportError);
    EXPECT_FALSE(fs::exists(dir.path / "out"));
}

TEST(Sweep, ParsesPathsRelativeToFile)
{
    auto paths = parse_sweep("# grid\nloss0.profile\n\n  /abs/x.profile  \n", "/base");
    ASSERT_EQ(paths.size(), 2u);
    EXPECT_EQ(paths[0], fs::path("/base/loss0.profile"));
    EXPECT_EQ(paths[1], fs::path("/abs/x.profile"));
}

TEST(Sweep, LoadAndPlan)
{
    TempDir dir;
    write(dir.path / "clean.profile", "rate_limit_bytes_per_sec=10000000\n");
    write(dir.path / "lossy.profile", "loss_rate=0.1\nrate_limit_bytes_per_sec=10000000\n");
    write(dir.path / "grid.sweep", "clean.profile\nlossy.profile\n");
    auto entries = load_sweep(dir.path / "grid.sweep");
    ASSERT_EQ(entries.size(), 2u);
    EXPECT_EQ(entries[1].id, "lossy");
    auto plan = plan_sweep(entries, {2s, 3});
    ASSERT_EQ(plan.size(), 3u);
    EXPECT_EQ(plan[0].path, PathKind::tunnel);
    EXPECT_EQ(plan[1].path, PathKind::native_tcp);
    EXPECT_EQ(plan[2].id, "lossy");
    EXPECT_EQ(plan[2].repetitions, 3u);
    for (auto& s : plan) EXPECT_NO_THROW(s.validate());

    auto grid = netem_grid_for(entries, {2s, 3});
    ASSERT_EQ(grid.cells.size(), 2u);
    EXPECT_EQ(grid.cells[1].loss_pct, 10.0);
    EXPECT_EQ(grid.rate_mbytes_per_sec, 10.0);
}

TEST(Sweep, Errors)
{
    TempDir dir;
    write(dir.path / "empty.sweep", "# nothing\n\n");
    EXPECT_THROW(load_sweep(dir.path / "empty.sweep"), SweepError);
    EXPECT_THROW(load_sweep(dir.path / "missing.sweep"), SweepError);
    write(dir.path / "dangling.sweep", "nope.profile\n");
    EXPECT_THROW(load_sweep(dir.path / "dangling.sweep"), SweepError);
    write(dir.path / "bad.profile", "jitter=1\n");
    write(dir.path / "bad.sweep", "bad.profile\n");
    EXPECT_THROW(load_sweep(dir.path / "bad.sweep"), SweepError);
}

TEST(Scenario, Validation)
{
    ScenarioSpec s;
    EXPECT_NO_THROW(s.validate());
    EXPECT_EQ(s.repetitions, 5u);
    EXPECT_EQ(s.transfer_duration, 10s);
    s.repetitions = 0;
    EXPECT_THROW(s.validate(), ScenarioError);
    s = {};
    s.transfer_duration = 0s;
    EXPECT_THROW(s.validate(), ScenarioError);
    s = {};
    s.path = PathKind::native_tcp;
    s.profile.loss_rate = 0.1;
    EXPECT_THROW(s.validate(), ScenarioError);
    s.profile.loss_rate = 0;
    s.profile.rate_limit_bytes_per_sec = 1000;
    EXPECT_NO_THROW(s.validate());
}

TEST(NetemScript, LossGridScript)
{
    auto script = generate_netem_script(loss_grid());
    EXPECT_EQ(script.rfind("#!/usr/bin/env bash", 0), 0u);
    for (auto loss : {"loss 5%", "loss 10%", "loss 15%", "loss 20%"}) {
        EXPECT_NE(script.find(std::string(loss) + " rate 80mbit"), std::string::npos) << loss;
    }
    EXPECT_NE(script.find("run loss-l0-d0-r0 0 0 0 rate 80mbit"), std::string::npos);
    EXPECT_NE(script.find(kCsvHeader), std::string::npos);
    EXPECT_NE(script.find("serve --dest"), std::string::npos);
    EXPECT_NE(script.find("connect --dest"), std::string::npos);

    TempDir dir;
    write(dir.path / "loss.sh", script);
    auto cmd = "bash -n " + (dir.path / "loss.sh").string();
    EXPECT_EQ(std::system(cmd.c_str()), 0);
}

TEST(NetemScript, Arguments)
{
    EXPECT_EQ(netem_arguments({0, 0, 0}, 10), "rate 80mbit");
    EXPECT_EQ(netem_arguments({0, 500, 0}, 10), "delay 500ms rate 80mbit");
    EXPECT_EQ(netem_arguments({0, 0, 15}, 10), "delay 10ms reorder 15% rate 80mbit");
    EXPECT_EQ(netem_arguments({20, 0, 0}, 1), "loss 20% rate 8mbit");
    EXPECT_EQ(delay_grid().cells.size(), 6u);
    EXPECT_EQ(reorder_grid().cells.back().reorder_pct, 20.0);
}

TEST(TokenBucketTest, LongRunRate)
{
    TokenBucket b(1'000'000, 200'000);
    auto t0 = quic::Clock::now();
    // Everything ready at t0: the first depth's worth leaves at once, the rest paced.
    quic::TimePoint last;
    for (int i = 0; i < 1000; ++i) last = b.reserve(1000, t0);
    double seconds = std::chrono::duration<double>(last - t0).count();
    EXPECT_NEAR(seconds, (1'000'000 - 200'000 - 1000) / 1e6, 0.01);
    EXPECT_EQ(b.reserve(1, t0 + 10s), t0 + 10s);
}

TEST(Traffic, GeneratorToSinkVerifiesPayload)
{
    TrafficSink sink({boost::asio::ip::make_address("127.0.0.1"), 0});
    TrafficGenerator gen;
    GeneratorOptions opts;
    opts.seed = 11;
    opts.duration = 5s;
    opts.max_bytes = 3'000'001;
    auto sent = gen.run(sink.endpoint(), opts);
    EXPECT_TRUE(sent.error.empty()) << sent.error;
    EXPECT_EQ(sent.bytes, 3'000'001u);
    auto got = sink.wait_result(5s);
    ASSERT_TRUE(got);
    EXPECT_TRUE(got->clean_eof);
    EXPECT_EQ(got->bytes, sent.bytes);
    EXPECT_EQ(got->digest, payload_digest(11, sent.bytes));
}

TEST(Traffic, GeneratorStopsAtDeadline)
{
    TrafficSink sink({boost::asio::ip::make_address("127.0.0.1"), 0});
    TrafficGenerator gen;
    GeneratorOptions opts;
    opts.duration = 300ms;
    auto sent = gen.run(sink.endpoint(), opts);
    EXPECT_TRUE(sent.error.empty()) << sent.error;
    EXPECT_NEAR(sent.elapsed_seconds, 0.3, 0.1);
    auto got = sink.wait_result(5s);
    ASSERT_TRUE(got);
    EXPECT_EQ(got->bytes, sent.bytes);
    EXPECT_EQ(got->digest, payload_digest(1, sent.bytes));
}

TEST(Traffic, ConnectFailureIsReported)
{
    tcp::endpoint dead;
    {
        boost::asio::io_context ctx;
        tcp::acceptor a(ctx, {boost::asio::ip::make_address("127.0.0.1"), 0});
        dead = a.local_endpoint();
    }
    TrafficGenerator gen;
    auto r = gen.run(dead, {});
    EXPECT_NE(r.error.find("connect"), std::string::npos);
}

TEST(Shaper, CapsNativeThroughput)
{
    TrafficSink sink({boost::asio::ip::make_address("127.0.0.1"), 0});
    TcpShaper shaper({boost::asio::ip::make_address("127.0.0.1"), 0}, sink.endpoint(), 2'000'000);
    TrafficGenerator gen;
    GeneratorOptions opts;
    opts.duration = 2s;
    auto sent = gen.run(shaper.endpoint(), opts);
    auto got = sink.wait_result(10s);
    ASSERT_TRUE(got);
    EXPECT_EQ(got->bytes, sent.bytes);
    EXPECT_EQ(got->digest, payload_digest(1, sent.bytes));
    // rate x time plus the initial burst allowance (0.4 MB)
    double rate = got->bytes / got->elapsed_seconds();
    EXPECT_LE(rate, 2'000'000 * 1.05 + 400'000 / got->elapsed_seconds());
    EXPECT_GE(rate, 2'000'000 * 0.8);
}

TEST(Scenario, NativeSmoke)
{
    ScenarioSpec s;
    s.id = "smoke";
    s.path = PathKind::native_tcp;
    s.transfer_duration = 1s;
    s.repetitions = 3;
    auto report = run_scenario(s);
    ASSERT_EQ(report.reps.size(), 3u);
    EXPECT_EQ(report.failed(), 0u) << report.reps[0].error;
    for (auto& r : report.reps) {
        EXPECT_GT(r.receiver.bitrate_mbps(), 0);
        EXPECT_TRUE(r.payload_verified);
        EXPECT_GT(r.receiver_cpu.utilization_percent(), 0);
    }
}

TEST(Scenario, TunnelSmoke)
{
    ScenarioSpec s;
    s.id = "smoke";
    s.transfer_duration = 1s;
    s.repetitions = 2;
    s.profile.loss_rate = 0.05;
    s.profile.seed = 9;
    auto report = run_scenario(s);
    ASSERT_EQ(report.reps.size(), 2u);
    EXPECT_EQ(report.failed(), 0u) << report.reps[0].error;
    for (auto& r : report.reps) {
        EXPECT_GT(r.receiver.bitrate_mbps(), 0);
        EXPECT_TRUE(r.payload_verified);
    }
}
