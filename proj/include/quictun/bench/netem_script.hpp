#pragma once

// Shell scripts that rerun a grid of cells with kernel netem shaping, iperf3 and
// the quic-tun binary. Needed for native TCP under loss, delay or reorder, which
// cannot be impaired from userspace without privileges.

#include <string>
#include <vector>

namespace quictun::bench {

struct NetemCell {
    double loss_pct = 0;
    double delay_ms = 0;
    double reorder_pct = 0;
};

struct NetemGrid {
    std::string name;
    std::vector<NetemCell> cells;
    double rate_mbytes_per_sec = 10;
    unsigned repetitions = 5;
    unsigned seconds = 10;
};

NetemGrid loss_grid();     // 0, 5, 10, 15, 20 % loss
NetemGrid delay_grid();    // 0, 50, 100, 200, 500, 1000 ms
NetemGrid reorder_grid();  // 0, 5, 10, 15, 20 % out of order

// The tc netem arguments for one cell, e.g. "loss 5% rate 80mbit".
std::string netem_arguments(const NetemCell& cell, double rate_mbytes_per_sec);

// A bash script that needs root, iperf3 and python3. It writes iperf3 JSON per
// run plus a results CSV in the bench CSV format.
std::string generate_netem_script(const NetemGrid& grid);

}  // namespace quictun::bench
