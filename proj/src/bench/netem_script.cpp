#include "quictun/bench/netem_script.hpp"

#include <charconv>
#include <sstream>

#include "quictun/bench/report.hpp"

namespace quictun::bench {

namespace {

std::string num(double v)
{
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, end);
}

NetemGrid grid(std::string name, std::vector<NetemCell> cells)
{
    NetemGrid g;
    g.name = std::move(name);
    g.cells = std::move(cells);
    return g;
}

}  // namespace

NetemGrid loss_grid()
{
    return grid("loss", {{0, 0, 0}, {5, 0, 0}, {10, 0, 0}, {15, 0, 0}, {20, 0, 0}});
}

NetemGrid delay_grid()
{
    return grid("delay", {{0, 0, 0}, {0, 50, 0}, {0, 100, 0}, {0, 200, 0}, {0, 500, 0}, {0, 1000, 0}});
}

NetemGrid reorder_grid()
{
    return grid("reorder", {{0, 0, 0}, {0, 0, 5}, {0, 0, 10}, {0, 0, 15}, {0, 0, 20}});
}

std::string netem_arguments(const NetemCell& cell, double rate_mbytes_per_sec)
{
    std::string out;
    if (cell.loss_pct > 0) out += "loss " + num(cell.loss_pct) + "% ";
    if (cell.reorder_pct > 0) {
        // netem only reorders against a delay: the chosen packets skip the delay queue.
        double base = cell.delay_ms > 0 ? cell.delay_ms : 10;
        out += "delay " + num(base) + "ms reorder " + num(cell.reorder_pct) + "% ";
    } else if (cell.delay_ms > 0) {
        out += "delay " + num(cell.delay_ms) + "ms ";
    }
    out += "rate " + num(rate_mbytes_per_sec * 8) + "mbit";
    return out;
}

std::string generate_netem_script(const NetemGrid& g)
{
    std::ostringstream o;
    o << "#!/usr/bin/env bash\n"
      << "# " << g.name << " grid: native TCP vs quic-tun under kernel netem shaping.\n"
      << "# Needs root, iperf3, python3 and the quic-tun binary (QUIC_TUN=/path/to/quic-tun).\n"
      << "# Shapes IFACE (default lo) in both directions; lo gets a 1500 byte MTU and no\n"
      << "# segmentation offload for the duration so that netem sees wire-sized packets.\n"
      << "set -euo pipefail\n\n"
      << "IFACE=${IFACE:-lo}\n"
      << "QUIC_TUN=${QUIC_TUN:-quic-tun}\n"
      << "OUT=${OUT:-netem-" << g.name << "-$(date +%Y%m%d-%H%M%S)}\n"
      << "REPS=${REPS:-" << g.repetitions << "}\n"
      << "SECONDS_PER_RUN=${SECONDS_PER_RUN:-" << g.seconds << "}\n"
      << "IPERF_PORT=5201\nTUN_UDP=4433\nTUN_TCP=9000\n\n"
      << "[ \"$(id -u)\" -eq 0 ] || { echo \"run as root (tc needs CAP_NET_ADMIN)\" >&2; exit 1; }\n"
      << "command -v iperf3 >/dev/null || { echo \"iperf3 not found\" >&2; exit 1; }\n"
      << "command -v \"$QUIC_TUN\" >/dev/null || { echo \"quic-tun not found; set QUIC_TUN\" >&2; exit 1; }\n"
      << "mkdir -p \"$OUT\"\n\n"
      << "OLD_MTU=$(cat /sys/class/net/$IFACE/mtu)\n"
      << "PIDS=()\n"
      << "cleanup() {\n"
      << "    tc qdisc del dev \"$IFACE\" root 2>/dev/null || true\n"
      << "    ip link set dev \"$IFACE\" mtu \"$OLD_MTU\" || true\n"
      << "    ethtool -K \"$IFACE\" gso on tso on gro on 2>/dev/null || true\n"
      << "    for p in \"${PIDS[@]}\"; do kill \"$p\" 2>/dev/null || true; done\n"
      << "}\n"
      << "trap cleanup EXIT\n\n"
      << "ip link set dev \"$IFACE\" mtu 1500\n"
      << "ethtool -K \"$IFACE\" gso off tso off gro off 2>/dev/null || true\n\n"
      << "iperf3 -s -p $IPERF_PORT >/dev/null 2>&1 & PIDS+=($!)\n"
      << "\"$QUIC_TUN\" serve --dest 127.0.0.1:$IPERF_PORT --bind 127.0.0.1:$TUN_UDP 2>\"$OUT/serve.log\" & PIDS+=($!)\n"
      << "\"$QUIC_TUN\" connect --dest 127.0.0.1:$TUN_UDP --bind 127.0.0.1:$TUN_TCP --insecure 2>\"$OUT/connect.log\" & PIDS+=($!)\n"
      << "sleep 1\n\n"
      << "CSV=\"$OUT/results.csv\"\n"
      << "echo \"" << kCsvHeader << "\" > \"$CSV\"\n\n"
      << "# run <scenario_id> <loss_pct> <delay_ms> <reorder_pct> <netem args>\n"
      << "run() {\n"
      << "    local id=$1 loss=$2 delay=$3 reorder=$4; shift 4\n"
      << "    tc qdisc replace dev \"$IFACE\" root netem \"$@\"\n"
      << "    for path in native_tcp tunnel; do\n"
      << "        local port=$IPERF_PORT\n"
      << "        [ \"$path\" = tunnel ] && port=$TUN_TCP\n"
      << "        for rep in $(seq 1 \"$REPS\"); do\n"
      << "            local json=\"$OUT/${id}-${path}-${rep}.json\"\n"
      << "            if ! iperf3 -c 127.0.0.1 -p \"$port\" -t \"$SECONDS_PER_RUN\" -J > \"$json\"; then\n"
      << "                echo \"$id $path rep $rep: iperf3 failed\" >&2\n"
      << "                continue\n"
      << "            fi\n"
      << "            python3 - \"$json\" \"$id\" \"$path\" \"$loss\" \"$delay\" \"$reorder\" \"$rep\" >> \"$CSV\" <<'PY'\n"
      << "import json, sys\n"
      << "f, sid, path, loss, delay, reorder, rep = sys.argv[1:]\n"
      << "end = json.load(open(f))['end']\n"
      << "cpu = end.get('cpu_utilization_percent', {})\n"
      << "for side, key, c in (('sndr', 'sum_sent', 'host_total'), ('rcvr', 'sum_received', 'remote_total')):\n"
      << "    print(','.join([sid, path, loss, delay, reorder, rep, side,\n"
      << "                    repr(end[key]['bits_per_second'] / 1e6), repr(cpu.get(c, 0.0))]))\n"
      << "PY\n"
      << "        done\n"
      << "    done\n"
      << "}\n\n";
    for (auto& c : g.cells) {
        std::string id = g.name + "-l" + num(c.loss_pct) + "-d" + num(c.delay_ms) + "-r" + num(c.reorder_pct);
        o << "run " << id << " " << num(c.loss_pct) << " " << num(c.delay_ms) << " " << num(c.reorder_pct) << " "
          << netem_arguments(c, g.rate_mbytes_per_sec) << "\n";
    }
    o << "\necho \"results in $CSV\"\n";
    return o.str();
}

}  // namespace quictun::bench
