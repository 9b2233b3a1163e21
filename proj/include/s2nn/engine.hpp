#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "s2nn/binarize.hpp"
#include "s2nn/neuron.hpp"
#include "s2nn/pack.hpp"
#include "s2nn/tensor.hpp"

namespace s2nn {

// multiplies: kernel-pattern dot products actually evaluated (popcount
// evaluations of a pattern against a receptive field);
// adds: accumulations of a pattern result into an output element -- reuse
// saves pattern evaluations, never accumulations, so this matches between
// the reference and the codeword-reuse paths;
// lut_hits: pattern results served from the per-position bank instead of
// being recomputed.
struct OpCounters {
    std::uint64_t multiplies = 0, adds = 0, lut_hits = 0;

    OpCounters& operator+=(const OpCounters& o) {
        multiplies += o.multiplies;
        adds += o.adds;
        lut_hits += o.lut_hits;
        return *this;
    }
};

// Stride-1 zero same-padded binary convolution: integer popcount
// accumulation of sign weights against {0,1} spikes, then the per-channel
// alpha scale.
Tensor4 binary_conv(const SpikeTensor& s, const BinaryConvWeights& w,
                    OpCounters* counters = nullptr);

// Same output as binary_conv on reconstruct(q), computed by evaluating each
// distinct codeword of an input channel's index column once per spatial
// position and reusing the result across output channels.
std::pair<Tensor4, OpCounters> subbit_conv(const SpikeTensor& s, const QuantizedLayer& q);

// Sign-weight fully connected layer (inference plumbing): out[o] =
// alpha[o] * sum_i sign[o*in+i] * x[i] for each batch row.
std::vector<double> fc_sign(const std::vector<double>& x, std::size_t batch,
                            const std::vector<std::int8_t>& sign, std::size_t out_dim,
                            std::size_t in_dim, const std::vector<double>& alpha);

struct OpCount {
    double flops = 0, sops = 0;
};

// Dense FLOPs per layer (2 * k*k * c_in ops per output element) and the
// spike-driven count sops = firing_rate * timesteps * flops.
OpCount count_ops(const PackedModel& m, Shape4 input, int timesteps, double firing_rate);

struct PackedRunResult {
    // Mean spike rate per channel of the last layer, over batch, space and
    // time.
    std::vector<double> logits;
    OpCounters counters;
    double output_firing_rate = 0.0;
};

// Runs the packed conv stack as an SNN: subbit_conv drive, LIF dynamics,
// layer by layer over the input spike train. use_reconstructed switches the
// drive to binary_conv on the expanded weights (for equivalence checks).
PackedRunResult run_packed_snn(const PackedModel& m, const std::vector<SpikeTensor>& input,
                               const LifConfig& cfg, bool use_reconstructed = false);

}  // namespace s2nn
