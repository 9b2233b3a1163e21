#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "s2nn/engine.hpp"
#include "s2nn/pack.hpp"

namespace s2nn {

struct LayerTraffic {
    int layer = 0;
    bool passthrough = false;          // layers exempt from sub-bit storage
    std::uint64_t bsnn_bits = 0;       // c_out*c_in*k_w*k_h
    std::uint64_t s2nn_bits = 0;       // c_out*c_in*index_bits + 2^index_bits*k_w*k_h
    double bit_ratio = 0.0;            // s2nn/bsnn
    std::uint64_t bsnn_transfers = 0;  // ceil(bits / bus_width)
    std::uint64_t s2nn_transfers = 0;
};

struct TrafficReport {
    int bus_width = 32;
    std::vector<LayerTraffic> layers;
};

// The reduction the original FPGA measurement reports for its DRAM access
// counts. The pure bit-count model above does not reproduce it (the
// measurement's access-unit convention is not public), so it is carried as
// a reference value only.
inline constexpr double kFpgaMeasuredDramReduction = 3.6;

TrafficReport traffic_report(const PackedModel& m, int bus_width = 32);

struct EnergyReport {
    double e_mac_pj = 0, e_ac_pj = 0;
    double first_layer_flops = 0;  // charged at e_mac (real-valued input drive)
    double downstream_sops = 0;    // spiking layers, charged at e_ac
    double total_pj = 0;
};

// total = e_mac * first-layer FLOPs + e_ac * sum of later layers' SOPs,
// with SOPs = firing_rate * timesteps * FLOPs per layer.
EnergyReport energy_estimate(const PackedModel& m, Shape4 input, int timesteps,
                             double firing_rate, double e_mac_pj = 4.6, double e_ac_pj = 0.9);

// CSV: layer,passthrough,bsnn_bits,s2nn_bits,bit_ratio,bsnn_transfers,s2nn_transfers
// plus a trailing note row carrying the unmatched FPGA reference.
std::string traffic_csv(const TrafficReport& r);
std::string energy_summary(const EnergyReport& r);

}  // namespace s2nn
