#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "s2nn/binarize.hpp"
#include "s2nn/codebook.hpp"

namespace s2nn {

// One stored sub-bit conv layer: per-kernel codeword indices, the codebook
// they point into, and the per-output-channel scales.
struct QuantizedLayer {
    int c_out = 0, c_in = 0, k_h = 0, k_w = 0;
    int index_bits = 0;
    CompactCodebook codebook;
    std::vector<std::uint32_t> indices;  // c_out * c_in codebook slots
    std::vector<double> alpha;           // c_out scales

    std::size_t kernel_count() const { return std::size_t(c_out) * c_in; }
    std::size_t kernel_len() const { return std::size_t(k_h) * k_w; }
};

// Expands indices + codebook back into sign weights.
BinaryConvWeights reconstruct(const QuantizedLayer& q);

struct PackedModel {
    std::uint16_t version = 1;
    std::vector<QuantizedLayer> layers;
};

// .s2nn byte layout, little-endian throughout, bit streams filling bytes
// LSB-first:
//   "S2NN"  magic
//   u16     version
//   u16     layer count
//   per layer:
//     u32 c_out, u32 c_in, u8 k_h, u8 k_w, u8 index_bits
//     codebook: ceil(2^index_bits * k_w*k_h / 8) bytes, codewords in slot
//               order, each contributing kernel-element bits row-major
//               (+1 <-> 1)
//     indices:  ceil(c_out*c_in * index_bits / 8) bytes of packed
//               index_bits-wide fields, kernel order o*c_in + i
//     alpha:    c_out float32 values
std::vector<std::uint8_t> pack(const PackedModel& m);
PackedModel unpack(const std::vector<std::uint8_t>& bytes);

struct CompressionRatio {
    // (index_bits*cin*cout + 2^index_bits*kw*kh) / (kw*kh*cin*cout):
    // bits per weight counting indices and codebook only.
    double bits_per_weight = 0.0;
    // Same numerator plus alpha (32 bits per output channel) and the fixed
    // 88-bit layer header.
    double bits_per_weight_all_in = 0.0;
};

CompressionRatio compression_ratio(const QuantizedLayer& q);

// On-chip weight storage saved versus 1-bit weights: 1 - index_bits/(kw*kh).
// Requires a sub-bit configuration.
double onchip_saving(int index_bits, int k_w, int k_h);

// Human-readable header listing for a packed byte stream.
std::string dump_header(const std::vector<std::uint8_t>& bytes);

}  // namespace s2nn
