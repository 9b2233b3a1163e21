#include "s2nn/costmodel.hpp"

#include <cstdio>
#include <stdexcept>

namespace s2nn {

TrafficReport traffic_report(const PackedModel& m, int bus_width) {
    if (bus_width < 1) throw std::runtime_error("bus width must be >= 1");
    TrafficReport r;
    r.bus_width = bus_width;
    int layer = 0;
    for (const QuantizedLayer& q : m.layers) {
        LayerTraffic t;
        t.layer = layer++;
        t.passthrough = q.k_h <= 1 || q.k_h != q.k_w;
        const std::uint64_t kernels = std::uint64_t(q.c_out) * q.c_in;
        t.bsnn_bits = kernels * std::uint64_t(q.k_h) * q.k_w;
        if (t.passthrough) {
            t.s2nn_bits = t.bsnn_bits;
        } else {
            t.s2nn_bits = kernels * std::uint64_t(q.index_bits) +
                          (std::uint64_t{1} << q.index_bits) * std::uint64_t(q.k_h) * q.k_w;
        }
        t.bit_ratio = double(t.s2nn_bits) / double(t.bsnn_bits);
        t.bsnn_transfers = (t.bsnn_bits + bus_width - 1) / bus_width;
        t.s2nn_transfers = (t.s2nn_bits + bus_width - 1) / bus_width;
        r.layers.push_back(t);
    }
    return r;
}

EnergyReport energy_estimate(const PackedModel& m, Shape4 input, int timesteps,
                             double firing_rate, double e_mac_pj, double e_ac_pj) {
    if (!(e_mac_pj > 0.0) || !(e_ac_pj > 0.0))
        throw std::runtime_error("per-op energies must be positive");
    if (timesteps < 1) throw std::runtime_error("timesteps must be >= 1");
    if (!(firing_rate >= 0.0 && firing_rate <= 1.0))
        throw std::runtime_error("firing rate must be in [0,1]");

    EnergyReport r;
    r.e_mac_pj = e_mac_pj;
    r.e_ac_pj = e_ac_pj;
    int channels = input.c;
    bool first = true;
    for (const QuantizedLayer& q : m.layers) {
        if (q.c_in != channels) throw std::runtime_error("layer channel chain mismatch");
        const double flops =
            2.0 * q.k_h * q.k_w * q.c_in * double(input.h) * input.w * q.c_out;
        if (first) {
            r.first_layer_flops = flops;
            first = false;
        } else {
            r.downstream_sops += firing_rate * double(timesteps) * flops;
        }
        channels = q.c_out;
    }
    r.total_pj = e_mac_pj * r.first_layer_flops + e_ac_pj * r.downstream_sops;
    return r;
}

std::string traffic_csv(const TrafficReport& r) {
    std::string out =
        "layer,passthrough,bsnn_bits,s2nn_bits,bit_ratio,bsnn_transfers,s2nn_transfers\n";
    char line[200];
    for (const LayerTraffic& t : r.layers) {
        std::snprintf(line, sizeof(line), "%d,%d,%llu,%llu,%.6f,%llu,%llu\n", t.layer,
                      t.passthrough ? 1 : 0, (unsigned long long)t.bsnn_bits,
                      (unsigned long long)t.s2nn_bits, t.bit_ratio,
                      (unsigned long long)t.bsnn_transfers, (unsigned long long)t.s2nn_transfers);
        out += line;
    }
    std::snprintf(line, sizeof(line),
                  "note,fpga_measured_dram_reduction_reference,%.1f,"
                  "not reproduced by the bit-count model (access-unit convention unstated)\n",
                  kFpgaMeasuredDramReduction);
    out += line;
    return out;
}

std::string energy_summary(const EnergyReport& r) {
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "e_mac_pj,%.6g\ne_ac_pj,%.6g\nfirst_layer_flops,%.17g\n"
                  "downstream_sops,%.17g\ntotal_pj,%.17g\n",
                  r.e_mac_pj, r.e_ac_pj, r.first_layer_flops, r.downstream_sops, r.total_pj);
    return buf;
}

}  // namespace s2nn
