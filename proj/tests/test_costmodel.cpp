#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "s2nn/costmodel.hpp"
#include "s2nn/rng.hpp"

using namespace s2nn;

namespace {

QuantizedLayer make_layer(int c_out, int c_in, int k, int eta, Rng& rng) {
    QuantizedLayer q;
    q.c_out = c_out;
    q.c_in = c_in;
    q.k_h = q.k_w = k;
    q.index_bits = eta;
    q.codebook = sample_codebook(k, k, eta, rng.next());
    q.indices.assign(q.kernel_count(), 0);
    q.alpha.assign(std::size_t(c_out), 1.0);
    return q;
}

}  // namespace

TEST_CASE("bit counts for the 64 to 128 layer at five index bits") {
    Rng rng(1);
    PackedModel m;
    m.layers.push_back(make_layer(128, 64, 3, 5, rng));
    const TrafficReport r = traffic_report(m, 32);
    REQUIRE(r.layers.size() == 1);
    CHECK(r.layers[0].bsnn_bits == 73728);
    CHECK(r.layers[0].s2nn_bits == 41248);  // 40960 index + 288 codebook
    CHECK(r.layers[0].bit_ratio == doctest::Approx(41248.0 / 73728.0).epsilon(1e-12));
    CHECK(r.layers[0].bit_ratio == doctest::Approx(0.559).epsilon(1e-2));
    CHECK(r.layers[0].bsnn_transfers == 73728 / 32);
    CHECK(r.layers[0].s2nn_transfers == 41248 / 32);
}

TEST_CASE("ratio approaches eta over kernel area as the layer widens") {
    Rng rng(2);
    PackedModel m;
    m.layers.push_back(make_layer(256, 256, 3, 5, rng));
    const TrafficReport r = traffic_report(m);
    const double limit = 5.0 / 9.0;
    CHECK(std::fabs(r.layers[0].bit_ratio - limit) / limit < 0.01);
    // Codebook share below 0.1% of the index bits at this width.
    CHECK(288.0 / (5.0 * 256 * 256) < 1e-3);
}

TEST_CASE("ratio stays below one exactly when the width threshold holds") {
    Rng rng(3);
    for (int eta : {4, 5, 6, 8}) {
        const double threshold = double(std::uint64_t{1} << eta) * 9.0 / (9.0 - eta);
        for (int channels : {1, 2, 4, 8, 16, 32, 64}) {
            PackedModel m;
            m.layers.push_back(make_layer(channels, channels, 3, eta, rng));
            const TrafficReport r = traffic_report(m);
            const bool wide_enough = double(channels) * channels >= threshold;
            if (wide_enough) CHECK(r.layers[0].bit_ratio < 1.0);
        }
    }
}

TEST_CASE("traffic csv carries the unmatched FPGA reference note") {
    Rng rng(4);
    PackedModel m;
    m.layers.push_back(make_layer(8, 8, 3, 5, rng));
    const std::string csv = traffic_csv(traffic_report(m));
    CHECK(csv.find("layer,passthrough,bsnn_bits,s2nn_bits,bit_ratio") != std::string::npos);
    CHECK(csv.find("fpga_measured_dram_reduction_reference,3.6") != std::string::npos);
    CHECK(kFpgaMeasuredDramReduction == 3.6);
}

TEST_CASE("energy splits the first layer from the spiking rest") {
    Rng rng(5);
    PackedModel m;
    m.layers.push_back(make_layer(8, 2, 3, 4, rng));
    m.layers.push_back(make_layer(8, 8, 3, 4, rng));
    const Shape4 input{1, 2, 16, 16};

    const EnergyReport zero_fr = energy_estimate(m, input, 4, 0.0);
    CHECK(zero_fr.downstream_sops == 0.0);
    CHECK(zero_fr.total_pj == zero_fr.e_mac_pj * zero_fr.first_layer_flops);
    CHECK(zero_fr.e_ac_pj == 0.9);  // default

    const EnergyReport base = energy_estimate(m, input, 4, 0.25);
    const EnergyReport doubled_T = energy_estimate(m, input, 8, 0.25);
    CHECK(doubled_T.first_layer_flops == base.first_layer_flops);
    CHECK(doubled_T.downstream_sops ==
          doctest::Approx(2.0 * base.downstream_sops).epsilon(1e-15));

    // Monotone in firing rate and timesteps.
    const EnergyReport more_fr = energy_estimate(m, input, 4, 0.5);
    CHECK(more_fr.total_pj > base.total_pj);
    CHECK(doubled_T.total_pj > base.total_pj);
    CHECK(base.total_pj >= 0.0);
}

TEST_CASE("invalid energy arguments are rejected") {
    Rng rng(6);
    PackedModel m;
    m.layers.push_back(make_layer(4, 2, 3, 4, rng));
    const Shape4 input{1, 2, 8, 8};
    CHECK_THROWS(energy_estimate(m, input, 4, -0.1));
    CHECK_THROWS(energy_estimate(m, input, 4, 0.5, 0.0, 0.9));
    CHECK_THROWS(energy_estimate(m, input, 0, 0.5));
}

TEST_CASE("energy summary lists the configured per-op costs") {
    Rng rng(7);
    PackedModel m;
    m.layers.push_back(make_layer(4, 2, 3, 4, rng));
    const std::string text =
        energy_summary(energy_estimate(m, Shape4{1, 2, 8, 8}, 4, 0.2, 4.6, 0.9));
    CHECK(text.find("e_mac_pj,4.6") != std::string::npos);
    CHECK(text.find("e_ac_pj,0.9") != std::string::npos);
    CHECK(text.find("total_pj,") != std::string::npos);
}
