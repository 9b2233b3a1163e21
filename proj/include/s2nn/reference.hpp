#pragma once

#include <cstdint>
#include <vector>

#include "s2nn/binarize.hpp"
#include "s2nn/tensor.hpp"

namespace s2nn {
// Serial reference implementations, written as plain triple loops with no
// bit tricks and no shared helpers from the optimized paths. Tests use them
// as oracles; the bench target times them against the OpenMP kernels. Keep
// them boring.
namespace reference {

// Stride-1 zero same-padded convolution of {0,1} spikes with ±1 weights,
// real arithmetic throughout, alpha applied at the end.
Tensor4 binary_conv(const SpikeTensor& s, const BinaryConvWeights& w);

// Exhaustive nearest-codeword scan. Codewords are passed as a flat ±1
// array, `count` kernels of `len` elements; returns (slot, squared
// distance), ties to the lowest slot.
struct Nearest {
    int slot = 0;
    double distance = 0;
};
Nearest nearest_codeword(const double* kernel, const double* codewords, int count, int len);

// Gram matrix of row-major flattened potentials, normalized by its
// Frobenius norm, computed with nested loops.
std::vector<double> normalized_gram(const Tensor4& u);

}  // namespace reference
}  // namespace s2nn
