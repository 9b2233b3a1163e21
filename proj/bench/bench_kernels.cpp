// Timing harness comparing the serial reference implementations against the
// OpenMP kernels, plus the codeword-reuse path against plain binary
// convolution. Build target: bench_kernels.

#include <chrono>
#include <cstdio>
#include <limits>
#include <vector>

#include "s2nn/engine.hpp"
#include "s2nn/osquant.hpp"
#include "s2nn/parallel.hpp"
#include "s2nn/reference.hpp"
#include "s2nn/rng.hpp"

using namespace s2nn;

namespace {

volatile double g_sink = 0.0;

template <class F>
double time_ms(F&& f, int repeats) {
    // One warmup round, then the best of `repeats`.
    f();
    double best = 1e300;
    for (int r = 0; r < repeats; ++r) {
        const auto start = std::chrono::steady_clock::now();
        f();
        const double ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
                .count();
        if (ms < best) best = ms;
    }
    return best;
}

}  // namespace

int main() {
    Rng rng(7);
    std::printf("threads: %d\n\n", max_threads());

    // Convolution: 32 -> 64 channels, 3x3, 32x32 input.
    BinaryConvWeights w;
    w.c_out = 64;
    w.c_in = 32;
    w.k_h = w.k_w = 3;
    w.sign.resize(w.kernel_count() * 9);
    for (std::int8_t& s : w.sign) s = rng.bernoulli(0.5) ? 1 : -1;
    w.alpha.assign(64, 1.0);
    SpikeTensor spikes(Shape4{1, 32, 32, 32});
    for (std::size_t p = 0; p < spikes.shape().volume(); ++p)
        spikes.set_flat(p, rng.bernoulli(0.3));

    const double serial_conv_ms =
        time_ms([&] { g_sink = reference::binary_conv(spikes, w).at(0, 0, 0, 0); }, 3);
    const double popcount_conv_ms =
        time_ms([&] { g_sink = binary_conv(spikes, w).at(0, 0, 0, 0); }, 5);

    // The same layer expressed through a compact codebook.
    QuantizedLayer q;
    q.c_out = 64;
    q.c_in = 32;
    q.k_h = q.k_w = 3;
    q.index_bits = 5;
    q.codebook = sample_codebook(3, 3, 5, 11);
    q.indices.resize(q.kernel_count());
    for (std::uint32_t& i : q.indices) i = std::uint32_t(rng.below(32));
    q.alpha.assign(64, 1.0);
    OpCounters reuse_counters;
    const double subbit_ms = time_ms(
        [&] {
            auto [out, counters] = subbit_conv(spikes, q);
            reuse_counters = counters;
            g_sink = out.at(0, 0, 0, 0);
        },
        5);
    OpCounters plain_counters;
    const BinaryConvWeights expanded = reconstruct(q);
    const double expanded_ms = time_ms(
        [&] {
            plain_counters = OpCounters{};
            g_sink = binary_conv(spikes, expanded, &plain_counters).at(0, 0, 0, 0);
        },
        5);

    std::printf("binary conv 32->64 3x3 on 32x32\n");
    std::printf("  serial reference    %8.2f ms\n", serial_conv_ms);
    std::printf("  popcount + OpenMP   %8.2f ms   (%.1fx)\n", popcount_conv_ms,
                serial_conv_ms / popcount_conv_ms);
    std::printf("  codeword reuse      %8.2f ms   (%.1fx vs expanded %.2f ms)\n", subbit_ms,
                expanded_ms / subbit_ms, expanded_ms);
    std::printf("  pattern evals: reuse %llu vs plain %llu (%.3fx), adds equal: %s\n\n",
                (unsigned long long)reuse_counters.multiplies,
                (unsigned long long)plain_counters.multiplies,
                double(plain_counters.multiplies) / double(reuse_counters.multiplies),
                reuse_counters.adds == plain_counters.adds ? "yes" : "NO");

    // Layer quantization: serial scan vs the parallel driver.
    DenseConvWeights dense;
    dense.c_out = 256;
    dense.c_in = 128;
    dense.k_h = dense.k_w = 3;
    dense.data.resize(dense.kernel_count() * 9);
    for (double& v : dense.data) v = rng.normal(0.0, 1.0);

    std::vector<double> flat(std::size_t(q.codebook.size()) * 9);
    for (int s = 0; s < q.codebook.size(); ++s)
        for (int p = 0; p < 9; ++p) flat[std::size_t(s) * 9 + p] = q.codebook.codeword(s)[p];
    const double serial_scan_ms = time_ms(
        [&] {
            int acc = 0;
            for (std::size_t kk = 0; kk < dense.kernel_count(); ++kk)
                acc += reference::nearest_codeword(dense.kernel(kk), flat.data(),
                                                   q.codebook.size(), 9)
                           .slot;
            g_sink = acc;
        },
        3);
    const double parallel_scan_ms = time_ms(
        [&] {
            g_sink = double(
                quantize_layer(dense, q.codebook, std::numeric_limits<double>::infinity())
                    .indices[0]);
        },
        3);
    const double parallel_fences_ms = time_ms(
        [&] { g_sink = double(quantize_layer(dense, q.codebook, 1.5).indices[0]); }, 3);

    std::printf("layer quantization 256x128 kernels, 32 codewords\n");
    std::printf("  serial scan          %8.2f ms\n", serial_scan_ms);
    std::printf("  parallel scan        %8.2f ms   (%.1fx)\n", parallel_scan_ms,
                serial_scan_ms / parallel_scan_ms);
    std::printf("  parallel + fences    %8.2f ms   (outlier handling on)\n",
                parallel_fences_ms);
    return 0;
}
