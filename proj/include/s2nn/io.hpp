#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "s2nn/binarize.hpp"
#include "s2nn/tensor.hpp"

namespace s2nn {

// Dense-weight container (.s2nw), little-endian:
//   "S2NW", u16 version, u16 layer count,
//   per layer: u32 c_out, u32 c_in, u8 k_h, u8 k_w,
//              c_out*c_in*k_h*k_w float64 values, row-major.
void write_dense_weights(const std::string& path, const std::vector<DenseConvWeights>& layers);
std::vector<DenseConvWeights> read_dense_weights(const std::string& path);

// Spike-train input (.s2ns), little-endian:
//   "S2NS", u16 version, u16 timesteps, u32 b, u32 c, u32 h, u32 w,
//   then timesteps segments of ceil(b*c*h*w / 8) bytes, bits LSB-first,
//   row-major element order.
void write_spike_input(const std::string& path, const std::vector<SpikeTensor>& steps);
std::vector<SpikeTensor> read_spike_input(const std::string& path);

// Named-tensor checkpoint (.s2nt), the trainer's resume sidecar:
//   "S2NT", u16 version, u16 array count,
//   per array: u8 name length, name bytes, u8 rank, u32 dims..., float64 data.
struct NamedTensor {
    std::string name;
    std::vector<std::uint32_t> dims;
    std::vector<double> data;
};
void write_checkpoint(const std::string& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_checkpoint(const std::string& path);

}  // namespace s2nn
