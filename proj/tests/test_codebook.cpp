#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <set>
#include <vector>

#include "s2nn/codebook.hpp"
#include "s2nn/rng.hpp"

using namespace s2nn;

TEST_CASE("encode/decode is a bijection over all 512 3x3 codewords") {
    for (std::uint64_t id = 0; id < 512; ++id) {
        double kernel[9];
        decode_codeword(id, 9, kernel);
        for (double v : kernel) CHECK((v == 1.0 || v == -1.0));
        CHECK(encode_codeword(kernel, 9) == id);
    }
}

TEST_CASE("sampling draws distinct codewords, reproducibly") {
    const CompactCodebook cb = sample_codebook(3, 3, 4, 1234);
    CHECK(cb.size() == 16);
    std::set<std::uint64_t> ids(cb.ids().begin(), cb.ids().end());
    CHECK(ids.size() == 16);
    for (std::uint64_t id : ids) CHECK(id < 512);

    const CompactCodebook again = sample_codebook(3, 3, 4, 1234);
    CHECK(again.ids() == cb.ids());
    const CompactCodebook other = sample_codebook(3, 3, 4, 1235);
    CHECK(other.ids() != cb.ids());

    // Five index bits buy 32 codewords (5/9 of a bit per weight for 3x3).
    CHECK(sample_codebook(3, 3, 5, 1).size() == 32);

    // Latents start at the codewords themselves.
    for (int s = 0; s < cb.size(); ++s)
        for (int p = 0; p < cb.kernel_len(); ++p)
            CHECK(cb.latent(s)[p] == cb.codeword(s)[p]);
}

TEST_CASE("eta at or above the kernel size is not sub-bit") {
    CHECK_THROWS_WITH(sample_codebook(3, 3, 9, 1), "not sub-bit");
    CHECK_THROWS_WITH(sample_codebook(3, 3, 10, 1), "not sub-bit");
    CHECK_NOTHROW(sample_codebook(3, 3, 8, 1));
    CHECK_NOTHROW(sample_codebook(5, 5, 6, 1));
}

namespace {

BinaryConvWeights weights_from_ids(const std::vector<std::uint64_t>& ids, int k) {
    BinaryConvWeights w;
    w.c_out = int(ids.size());
    w.c_in = 1;
    w.k_h = w.k_w = k;
    w.alpha.assign(ids.size(), 1.0);
    w.sign.resize(ids.size() * std::size_t(k) * k);
    for (std::size_t i = 0; i < ids.size(); ++i)
        decode_codeword(ids[i], k * k, w.sign.data() + i * std::size_t(k) * k);
    return w;
}

}  // namespace

TEST_CASE("cluster stats on a degenerate layer") {
    const BinaryConvWeights w = weights_from_ids(std::vector<std::uint64_t>(12, 37), 3);
    const ClusterStats st = cluster_stats(w);
    CHECK(st.total == 12);
    CHECK(st.histogram.size() == 1);
    CHECK(st.histogram[0].first == 37);
    CHECK(st.topk(1) == 1.0);
    CHECK(st.topk(512) == 1.0);
}

TEST_CASE("cluster stats on uniform occupancy") {
    std::vector<std::uint64_t> ids(512);
    for (std::size_t i = 0; i < 512; ++i) ids[i] = i;
    const ClusterStats st = cluster_stats(weights_from_ids(ids, 3));
    CHECK(st.total == 512);
    CHECK(st.topk(2) == doctest::Approx(2.0 / 512).epsilon(1e-15));
    CHECK(st.topk(512) == 1.0);
    // topk is non-decreasing.
    double prev = 0.0;
    for (std::size_t k = 1; k <= 512; k *= 2) {
        CHECK(st.topk(k) >= prev);
        prev = st.topk(k);
    }
}

TEST_CASE("histogram counts sum to the kernel count") {
    Rng rng(3);
    std::vector<std::uint64_t> ids;
    for (int i = 0; i < 300; ++i) ids.push_back(rng.draw_bits(9));
    const ClusterStats st = cluster_stats(weights_from_ids(ids, 3));
    std::size_t sum = 0;
    for (const auto& [id, count] : st.histogram) sum += count;
    CHECK(sum == 300);
}

TEST_CASE("csv export carries rows and a topk block") {
    const ClusterStats st = cluster_stats(weights_from_ids({5, 5, 9}, 3));
    const std::string csv = cluster_stats_csv("conv0", st);
    CHECK(csv.find("conv0,5,2\n") != std::string::npos);
    CHECK(csv.find("conv0,9,1\n") != std::string::npos);
    CHECK(csv.find("topk,conv0,1,0.666667\n") != std::string::npos);
}

TEST_CASE("zero gradients leave the codebook unchanged") {
    CompactCodebook cb = sample_codebook(3, 3, 4, 99);
    const std::vector<std::uint64_t> before = cb.ids();
    const std::vector<double> latents = cb.latents();
    cb.update_latents(std::vector<double>(latents.size(), 0.0), 0.1);
    CHECK(cb.ids() == before);
    CHECK(cb.latents() == latents);
}

TEST_CASE("a latent pushed across zero flips its codeword bit") {
    CompactCodebook cb = sample_codebook(3, 3, 4, 7);
    const std::uint64_t id0 = cb.id(0);
    const double first = cb.latent(0)[0];  // ±1 initially
    std::vector<double> grads(cb.latents().size(), 0.0);
    grads[0] = first > 0 ? 3.0 : -3.0;  // push element 0 through zero
    cb.update_latents(grads, 1.0);
    // Slot 0 re-signs first, so it simply keeps the flipped pattern; any
    // later slot that now collides is the one that gets repaired.
    CHECK(cb.id(0) == (id0 ^ 1u));
    std::set<std::uint64_t> distinct(cb.ids().begin(), cb.ids().end());
    CHECK(distinct.size() == std::size_t(cb.size()));
    for (int s = 0; s < cb.size(); ++s)
        CHECK(encode_codeword(cb.latent(s), cb.kernel_len()) == cb.id(s));
}

TEST_CASE("collision repair keeps codewords distinct under adversarial updates") {
    CompactCodebook cb = sample_codebook(3, 3, 4, 21);
    // Drive every latent toward codeword 0's pattern.
    const std::uint64_t target = cb.id(0);
    double pattern[9];
    decode_codeword(target, 9, pattern);
    std::vector<double> grads(cb.latents().size());
    for (int s = 0; s < cb.size(); ++s)
        for (int p = 0; p < 9; ++p)
            grads[std::size_t(s) * 9 + p] = cb.latent(s)[p] - 2.0 * pattern[p];
    cb.update_latents(grads, 1.0);
    std::set<std::uint64_t> ids(cb.ids().begin(), cb.ids().end());
    CHECK(ids.size() == 16);
    for (int s = 0; s < cb.size(); ++s)
        CHECK(encode_codeword(cb.latent(s), cb.kernel_len()) == cb.id(s));
}

TEST_CASE("distinctness holds across random update sequences") {
    Rng rng(1001);
    CompactCodebook cb = sample_codebook(3, 3, 5, 55);
    for (int step = 0; step < 200; ++step) {
        std::vector<double> grads(cb.latents().size());
        for (double& g : grads) g = rng.normal(0.0, 2.0);
        cb.update_latents(grads, 0.7);
        std::set<std::uint64_t> ids(cb.ids().begin(), cb.ids().end());
        CHECK(ids.size() == std::size_t(cb.size()));
    }
}

TEST_CASE("latent restore rejects inconsistent signs") {
    CompactCodebook cb = sample_codebook(3, 3, 4, 4);
    std::vector<double> latents = cb.latents();
    CHECK_NOTHROW(cb.set_latents(latents));
    latents[0] = -latents[0];
    CHECK_THROWS(cb.set_latents(latents));
}
