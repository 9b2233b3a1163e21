#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstring>
#include <vector>

#include "s2nn/pack.hpp"
#include "s2nn/rng.hpp"

using namespace s2nn;

namespace {

QuantizedLayer random_layer(int c_out, int c_in, int k, int eta, Rng& rng) {
    QuantizedLayer q;
    q.c_out = c_out;
    q.c_in = c_in;
    q.k_h = q.k_w = k;
    q.index_bits = eta;
    q.codebook = sample_codebook(k, k, eta, rng.next());
    q.indices.resize(q.kernel_count());
    for (std::uint32_t& i : q.indices) i = std::uint32_t(rng.below(std::uint64_t(1) << eta));
    q.alpha.resize(std::size_t(c_out));
    for (double& a : q.alpha) a = rng.uniform(0.05, 2.0);
    return q;
}

bool layers_equal(const QuantizedLayer& a, const QuantizedLayer& b) {
    if (a.c_out != b.c_out || a.c_in != b.c_in || a.k_h != b.k_h || a.k_w != b.k_w ||
        a.index_bits != b.index_bits || a.indices != b.indices)
        return false;
    if (a.codebook.ids() != b.codebook.ids()) return false;
    // Alpha survives at float32 precision.
    for (std::size_t o = 0; o < a.alpha.size(); ++o)
        if (float(a.alpha[o]) != float(b.alpha[o])) return false;
    const BinaryConvWeights wa = reconstruct(a), wb = reconstruct(b);
    return wa.sign == wb.sign;
}

}  // namespace

TEST_CASE("round trip reproduces a random 2-layer model bit for bit") {
    Rng rng(2);
    PackedModel m;
    m.layers.push_back(random_layer(4, 3, 3, 4, rng));
    m.layers.push_back(random_layer(5, 4, 5, 6, rng));
    const std::vector<std::uint8_t> bytes = pack(m);
    const PackedModel back = unpack(bytes);
    REQUIRE(back.layers.size() == 2);
    CHECK(layers_equal(m.layers[0], back.layers[0]));
    CHECK(layers_equal(m.layers[1], back.layers[1]));
    // Re-packing the decoded model gives the identical stream.
    CHECK(pack(back) == bytes);
}

TEST_CASE("byte budget for the one-kernel nibble case") {
    Rng rng(3);
    PackedModel m;
    QuantizedLayer q = random_layer(1, 1, 3, 4, rng);
    m.layers.push_back(q);
    // 4 magic + 2 version + 2 count + 11 header + 18 codebook (16*9 bits)
    // + 1 index byte (one 4-bit field, padded) + 4 alpha.
    CHECK(pack(m).size() == 4u + 2 + 2 + 11 + 18 + 1 + 4);
}

TEST_CASE("pack is deterministic") {
    Rng rng(5);
    PackedModel m;
    m.layers.push_back(random_layer(6, 2, 3, 5, rng));
    CHECK(pack(m) == pack(m));
}

TEST_CASE("decode errors are distinct and fail closed") {
    Rng rng(7);
    PackedModel m;
    m.layers.push_back(random_layer(3, 2, 3, 4, rng));
    const std::vector<std::uint8_t> bytes = pack(m);

    SUBCASE("bad magic") {
        std::vector<std::uint8_t> bad = bytes;
        bad[0] = 'X';
        CHECK_THROWS_WITH(unpack(bad), "bad magic");
    }
    SUBCASE("version mismatch") {
        std::vector<std::uint8_t> bad = bytes;
        bad[4] = 9;
        CHECK_THROWS_WITH(unpack(bad), "version mismatch");
    }
    SUBCASE("truncated stream") {
        std::vector<std::uint8_t> bad(bytes.begin(), bytes.end() - 3);
        CHECK_THROWS_WITH(unpack(bad), "truncated stream");
    }
    SUBCASE("trailing data") {
        std::vector<std::uint8_t> bad = bytes;
        bad.push_back(0);
        CHECK_THROWS_WITH(unpack(bad), "trailing data");
    }
    SUBCASE("encode rejects an index outside the codebook") {
        PackedModel broken = m;
        broken.layers[0].indices[0] = 16;  // 2^4 slots
        CHECK_THROWS_WITH(pack(broken), "index out of codebook range");
    }
}

TEST_CASE("reconstruction expands indices through the codebook") {
    Rng rng(11);
    const QuantizedLayer q = random_layer(3, 2, 3, 4, rng);
    const BinaryConvWeights w = reconstruct(q);
    CHECK(w.alpha == q.alpha);
    for (std::size_t k = 0; k < q.kernel_count(); ++k) {
        const std::uint64_t id = q.codebook.id(int(q.indices[k]));
        CHECK(encode_codeword(w.kernel(k), int(q.kernel_len())) == id);
    }
}

TEST_CASE("compression ratio pins the published bits-per-weight points") {
    Rng rng(13);
    auto layer = [&](int channels, int eta) {
        return random_layer(channels, channels, 3, eta, rng);
    };
    CHECK(compression_ratio(layer(256, 4)).bits_per_weight ==
          doctest::Approx(0.44).epsilon(0.02));
    CHECK(compression_ratio(layer(256, 5)).bits_per_weight ==
          doctest::Approx(0.56).epsilon(0.02));
    CHECK(compression_ratio(layer(256, 6)).bits_per_weight ==
          doctest::Approx(0.67).epsilon(0.02));

    // Tiny layers are dominated by the codebook itself: (4*1 + 16*9)/9.
    const QuantizedLayer tiny = layer(1, 4);
    CHECK(compression_ratio(tiny).bits_per_weight ==
          doctest::Approx(148.0 / 9.0).epsilon(1e-12));
    CHECK(compression_ratio(tiny).bits_per_weight_all_in >
          compression_ratio(tiny).bits_per_weight);
}

TEST_CASE("exact ratio converges to eta/(kw*kh) for wide layers") {
    Rng rng(17);
    for (int eta : {4, 5, 6}) {
        const QuantizedLayer q = random_layer(128, 128, 3, eta, rng);  // 16384 kernels
        const double limit = double(eta) / 9.0;
        const double ratio = compression_ratio(q).bits_per_weight;
        CHECK(std::fabs(ratio - limit) / limit < 0.01);
    }
}

TEST_CASE("on-chip saving") {
    CHECK(onchip_saving(4, 3, 3) == 5.0 / 9.0);  // exact
    CHECK(onchip_saving(6, 3, 3) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    CHECK_THROWS_WITH(onchip_saving(9, 3, 3), "not sub-bit");
}

TEST_CASE("header dump names the layout") {
    Rng rng(19);
    PackedModel m;
    m.layers.push_back(random_layer(4, 2, 3, 4, rng));
    const std::string text = dump_header(pack(m));
    CHECK(text.find("magic=S2NN version=1 layers=1") != std::string::npos);
    CHECK(text.find("c_out=4 c_in=2 k=3x3 index_bits=4") != std::string::npos);
}
