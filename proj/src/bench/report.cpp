#include "quictun/bench/report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace quictun::bench {

namespace {

std::string num(double v)
{
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, end);
}

double parse_double(std::string_view s, std::size_t line)
{
    double v = 0;
    auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || end != s.data() + s.size() || s.empty()) {
        throw ReportError("line " + std::to_string(line) + ": bad number '" + std::string(s) + "'");
    }
    return v;
}

// Percent values come from fractions; drop the binary noise of the x100.
double percent(double fraction)
{
    return std::nearbyint(fraction * 100.0 * 1e6) / 1e6;
}

double variable_of(const CsvRow& r, SweepVariable v)
{
    switch (v) {
    case SweepVariable::loss: return r.loss_pct;
    case SweepVariable::delay: return r.delay_ms;
    case SweepVariable::reorder: return r.reorder_pct;
    }
    return 0;
}

const char* axis_label(SweepVariable v)
{
    switch (v) {
    case SweepVariable::loss: return "Packet loss (%)";
    case SweepVariable::delay: return "Added one-way delay (ms)";
    case SweepVariable::reorder: return "Out of order (%)";
    }
    return "";
}

const char* colour(PathKind p)
{
    return p == PathKind::tunnel ? "#d62728" : "#1f77b4";
}

// Round-number tick step giving about `target` intervals over [0, hi].
double tick_step(double hi, int target)
{
    if (hi <= 0) return 1;
    double raw = hi / target;
    double mag = std::pow(10.0, std::floor(std::log10(raw)));
    for (double m : {1.0, 2.0, 5.0, 10.0}) {
        if (raw <= m * mag) return m * mag;
    }
    return 10 * mag;
}

void write_file(const std::filesystem::path& p, const std::string& content)
{
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw ReportError("cannot open " + p.string() + " for writing");
    out << content;
    out.close();
    if (!out) throw ReportError("write to " + p.string() + " failed");
}

}  // namespace

std::vector<CsvRow> csv_rows(const std::vector<BenchReport>& reports)
{
    std::vector<CsvRow> rows;
    for (auto& rep : reports) {
        auto& sc = rep.scenario;
        CsvRow base;
        base.scenario_id = sc.id;
        base.path = sc.path;
        base.loss_pct = percent(sc.profile.loss_rate);
        base.delay_ms = std::chrono::duration<double, std::milli>(sc.profile.delay).count();
        base.reorder_pct = percent(sc.profile.reorder_rate);
        for (auto& r : rep.reps) {
            auto row = base;
            row.rep = r.rep;
            row.side = Side::sndr;
            row.bitrate_mbps = r.sender.bitrate_mbps();
            row.cpu_pct = r.sender_cpu.utilization_percent();
            rows.push_back(row);
            row.side = Side::rcvr;
            row.bitrate_mbps = r.receiver.bitrate_mbps();
            row.cpu_pct = r.receiver_cpu.utilization_percent();
            rows.push_back(row);
        }
    }
    return rows;
}

std::string format_csv(const std::vector<CsvRow>& rows)
{
    std::string out = std::string(kCsvHeader) + "\n";
    for (auto& r : rows) {
        if (r.scenario_id.find_first_of(",\"\r\n") != std::string::npos) {
            throw ReportError("scenario id '" + r.scenario_id + "' contains a CSV separator");
        }
        out += r.scenario_id + "," + to_string(r.path) + "," + num(r.loss_pct) + "," + num(r.delay_ms) + "," +
               num(r.reorder_pct) + "," + std::to_string(r.rep) + "," + (r.side == Side::sndr ? "sndr" : "rcvr") +
               "," + num(r.bitrate_mbps) + "," + num(r.cpu_pct) + "\n";
    }
    return out;
}

std::vector<CsvRow> parse_csv(std::string_view text)
{
    std::vector<CsvRow> rows;
    std::size_t line_no = 0;
    bool header = false;
    while (!text.empty()) {
        auto nl = text.find('\n');
        auto line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (!header) {
            if (line != kCsvHeader) throw ReportError("unexpected CSV header '" + std::string(line) + "'");
            header = true;
            continue;
        }
        if (line.empty()) continue;
        std::vector<std::string_view> f;
        for (std::size_t pos = 0;;) {
            auto comma = line.find(',', pos);
            f.push_back(line.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos));
            if (comma == std::string_view::npos) break;
            pos = comma + 1;
        }
        if (f.size() != 9) throw ReportError("line " + std::to_string(line_no) + ": expected 9 fields");
        CsvRow r;
        r.scenario_id = std::string(f[0]);
        try {
            r.path = parse_path(f[1]);
        } catch (const std::invalid_argument& e) {
            throw ReportError("line " + std::to_string(line_no) + ": " + e.what());
        }
        r.loss_pct = parse_double(f[2], line_no);
        r.delay_ms = parse_double(f[3], line_no);
        r.reorder_pct = parse_double(f[4], line_no);
        auto [end, ec] = std::from_chars(f[5].data(), f[5].data() + f[5].size(), r.rep);
        if (ec != std::errc() || end != f[5].data() + f[5].size()) {
            throw ReportError("line " + std::to_string(line_no) + ": bad rep '" + std::string(f[5]) + "'");
        }
        if (f[6] == "sndr") r.side = Side::sndr;
        else if (f[6] == "rcvr") r.side = Side::rcvr;
        else throw ReportError("line " + std::to_string(line_no) + ": bad side '" + std::string(f[6]) + "'");
        r.bitrate_mbps = parse_double(f[7], line_no);
        r.cpu_pct = parse_double(f[8], line_no);
        rows.push_back(std::move(r));
    }
    if (!header) throw ReportError("empty CSV");
    return rows;
}

const char* to_string(SweepVariable v)
{
    switch (v) {
    case SweepVariable::loss: return "loss";
    case SweepVariable::delay: return "delay";
    case SweepVariable::reorder: return "reorder";
    }
    return "?";
}

std::vector<SweepVariable> swept_variables(const std::vector<CsvRow>& rows)
{
    std::vector<SweepVariable> out;
    for (auto v : {SweepVariable::loss, SweepVariable::delay, SweepVariable::reorder}) {
        std::set<double> values;
        for (auto& r : rows) values.insert(variable_of(r, v));
        if (values.size() >= 2) out.push_back(v);
    }
    return out;
}

Chart build_chart(const std::vector<CsvRow>& rows, SweepVariable v)
{
    std::map<SweepVariable, double> floor;
    for (auto other : {SweepVariable::loss, SweepVariable::delay, SweepVariable::reorder}) {
        double lo = INFINITY;
        for (auto& r : rows) lo = std::min(lo, variable_of(r, other));
        floor[other] = lo;
    }
    // path -> x -> receiver bitrates
    std::map<PathKind, std::map<double, std::vector<double>>> acc;
    for (auto& r : rows) {
        if (r.side != Side::rcvr) continue;
        bool on_axis = true;
        for (auto& [other, lo] : floor) {
            if (other != v && variable_of(r, other) != lo) on_axis = false;
        }
        if (on_axis) acc[r.path][variable_of(r, v)].push_back(r.bitrate_mbps);
    }
    Chart chart;
    chart.variable = v;
    for (auto& [path, by_x] : acc) {
        ChartSeries s;
        s.path = path;
        for (auto& [x, ys] : by_x) s.points.emplace_back(x, mean(ys));
        chart.series.push_back(std::move(s));
    }
    return chart;
}

std::string render_svg(const Chart& chart)
{
    const double W = 720, H = 440, left = 70, right = 150, top = 40, bottom = 60;
    const double pw = W - left - right, ph = H - top - bottom;
    double xmax = 0, ymax = 0;
    for (auto& s : chart.series) {
        for (auto& [x, y] : s.points) {
            xmax = std::max(xmax, x);
            ymax = std::max(ymax, y);
        }
    }
    double xstep = tick_step(xmax, 5), ystep = tick_step(ymax, 5);
    xmax = std::max(xstep, std::ceil(xmax / xstep) * xstep);
    ymax = std::max(ystep, std::ceil(ymax / ystep) * ystep);
    auto px = [&](double x) { return left + x / xmax * pw; };
    auto py = [&](double y) { return top + ph - y / ymax * ph; };

    std::ostringstream o;
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    o << "<text x=\"" << left + pw / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">Receiver bitrate vs "
      << to_string(chart.variable) << "</text>\n";
    for (double t = 0; t <= xmax + xstep / 2; t += xstep) {
        o << "<line x1=\"" << px(t) << "\" y1=\"" << top + ph << "\" x2=\"" << px(t) << "\" y2=\"" << top + ph + 5
          << "\" stroke=\"black\"/>\n";
        o << "<text x=\"" << px(t) << "\" y=\"" << top + ph + 18 << "\" text-anchor=\"middle\">" << num(t)
          << "</text>\n";
    }
    for (double t = 0; t <= ymax + ystep / 2; t += ystep) {
        o << "<line x1=\"" << left << "\" y1=\"" << py(t) << "\" x2=\"" << left + pw << "\" y2=\"" << py(t)
          << "\" stroke=\"#dddddd\"/>\n";
        o << "<text x=\"" << left - 8 << "\" y=\"" << py(t) + 4 << "\" text-anchor=\"end\">" << num(t) << "</text>\n";
    }
    o << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"black\"/>\n";
    o << "<text x=\"" << left + pw / 2 << "\" y=\"" << H - 15 << "\" text-anchor=\"middle\">"
      << axis_label(chart.variable) << "</text>\n";
    o << "<text transform=\"translate(18," << top + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">Bitrate (Mbps)</text>\n";

    double ly = top + 10;
    for (auto& s : chart.series) {
        o << "<polyline fill=\"none\" stroke-width=\"2\" stroke=\"" << colour(s.path) << "\" points=\"";
        for (auto& [x, y] : s.points) o << px(x) << "," << py(y) << " ";
        o << "\"/>\n";
        for (auto& [x, y] : s.points) {
            o << "<circle cx=\"" << px(x) << "\" cy=\"" << py(y) << "\" r=\"3.5\" fill=\"" << colour(s.path)
              << "\"/>\n";
        }
        o << "<line x1=\"" << left + pw + 15 << "\" y1=\"" << ly << "\" x2=\"" << left + pw + 40 << "\" y2=\"" << ly
          << "\" stroke-width=\"2\" stroke=\"" << colour(s.path) << "\"/>\n";
        o << "<text x=\"" << left + pw + 46 << "\" y=\"" << ly + 4 << "\">"
          << (s.path == PathKind::tunnel ? "QUIC tunnel" : "Native TCP") << "</text>\n";
        ly += 20;
    }
    o << "</svg>\n";
    return o.str();
}

EmittedFiles emit_report(const std::vector<BenchReport>& reports, const std::filesystem::path& out_dir)
{
    if (reports.empty()) throw ReportError("nothing to report: the sweep is empty");
    auto rows = csv_rows(reports);
    if (rows.empty()) throw ReportError("nothing to report: no repetitions ran");

    // Render everything before touching the file system.
    std::vector<std::pair<std::filesystem::path, std::string>> files;
    files.emplace_back(out_dir / "results.csv", format_csv(rows));
    for (auto v : swept_variables(rows)) {
        files.emplace_back(out_dir / (std::string("bitrate_vs_") + to_string(v) + ".svg"), render_svg(build_chart(rows, v)));
    }

    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw ReportError("cannot create " + out_dir.string() + ": " + ec.message());
    std::vector<std::filesystem::path> temps;
    try {
        for (auto& [path, content] : files) {
            auto tmp = path;
            tmp += ".tmp";
            temps.push_back(tmp);
            write_file(tmp, content);
        }
    } catch (...) {
        for (auto& t : temps) std::filesystem::remove(t, ec);
        throw;
    }
    EmittedFiles out;
    for (std::size_t i = 0; i < files.size(); ++i) {
        std::filesystem::rename(temps[i], files[i].first);
        if (i == 0) out.csv = files[i].first;
        else out.charts.push_back(files[i].first);
    }
    return out;
}

}  // namespace quictun::bench
