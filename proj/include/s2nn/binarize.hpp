#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace s2nn {

// Real convolution weights [c_out, c_in, k_h, k_w], row-major.
struct DenseConvWeights {
    int c_out = 0, c_in = 0, k_h = 0, k_w = 0;
    std::vector<double> data;

    std::size_t kernel_len() const { return std::size_t(k_h) * k_w; }
    std::size_t kernel_count() const { return std::size_t(c_out) * c_in; }
    const double* kernel(std::size_t idx) const { return data.data() + idx * kernel_len(); }
    double* kernel(std::size_t idx) { return data.data() + idx * kernel_len(); }
};

// Sign weights in {-1, +1} plus the per-output-channel scale that is applied
// after the bitwise accumulation.
struct BinaryConvWeights {
    int c_out = 0, c_in = 0, k_h = 0, k_w = 0;
    std::vector<std::int8_t> sign;  // +1 / -1, same layout as DenseConvWeights
    std::vector<double> alpha;      // size c_out, mean |w| of the channel

    std::size_t kernel_len() const { return std::size_t(k_h) * k_w; }
    std::size_t kernel_count() const { return std::size_t(c_out) * c_in; }
    const std::int8_t* kernel(std::size_t idx) const { return sign.data() + idx * kernel_len(); }
};

// Elementwise sign with sign(0) = +1; alpha[o] is the mean absolute dense
// weight of output channel o (zero only for an all-zero channel).
BinaryConvWeights sign_binarize(const DenseConvWeights& w);

}  // namespace s2nn
