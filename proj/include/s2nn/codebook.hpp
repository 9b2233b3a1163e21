#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "s2nn/binarize.hpp"

namespace s2nn {

// Codeword ids: bit b of the id holds flattened element b of the kernel
// (row-major), with +1 <-> 1 and -1 <-> 0.
std::uint64_t encode_codeword(const double* kernel, int len);
std::uint64_t encode_codeword(const std::int8_t* sign, int len);
void decode_codeword(std::uint64_t id, int len, double* out);
void decode_codeword(std::uint64_t id, int len, std::int8_t* out);

// A layer's compact codebook: 2^index_bits distinct sign kernels plus the
// real-valued latents they are re-signed from while training. The class
// keeps sign(latent[slot]) == codeword[slot] at all times.
class CompactCodebook {
public:
    CompactCodebook() = default;
    // Builds from explicit ids (used by sampling and by unpack).
    CompactCodebook(int k_w, int k_h, int index_bits, std::vector<std::uint64_t> ids,
                    std::uint64_t seed);

    int k_w() const { return k_w_; }
    int k_h() const { return k_h_; }
    int index_bits() const { return index_bits_; }
    int kernel_len() const { return k_w_ * k_h_; }
    int size() const { return int(ids_.size()); }
    std::uint64_t seed() const { return seed_; }

    std::uint64_t id(int slot) const { return ids_[std::size_t(slot)]; }
    const std::vector<std::uint64_t>& ids() const { return ids_; }

    // ±1 values, kernel_len() doubles per slot.
    const double* codeword(int slot) const { return signs_.data() + std::size_t(slot) * kernel_len(); }
    const double* latent(int slot) const { return latents_.data() + std::size_t(slot) * kernel_len(); }
    const std::vector<double>& latents() const { return latents_; }

    // latents -= lr * grads, then re-sign. When re-signing makes two slots
    // collide, the later slot's smallest-magnitude latent elements are
    // sign-flipped until all codewords are distinct again.
    void update_latents(const std::vector<double>& grads, double lr);

    // Checkpoint restore path; the latents must re-sign to the stored ids.
    void set_latents(std::vector<double> latents);

private:
    int k_w_ = 0, k_h_ = 0, index_bits_ = 0;
    std::uint64_t seed_ = 0;
    std::vector<std::uint64_t> ids_;
    std::vector<double> signs_;    // materialized ±1 codewords
    std::vector<double> latents_;

    void resign_and_repair();
};

// Uniform sample without replacement of 2^index_bits codewords out of the
// full 2^(k_w*k_h) set, drawn with a seeded mt19937_64. Latents start at the
// ±1 codewords. index_bits >= k_w*k_h is rejected ("not sub-bit").
CompactCodebook sample_codebook(int k_w, int k_h, int index_bits, std::uint64_t seed);

// Occupancy of codeword ids across a layer's sign kernels.
struct ClusterStats {
    // (id, count), sorted by count descending then id ascending.
    std::vector<std::pair<std::uint64_t, std::size_t>> histogram;
    std::size_t total = 0;

    // Fraction of kernels covered by the k most frequent codewords.
    double topk(std::size_t k) const;
};

ClusterStats cluster_stats(const BinaryConvWeights& w);

// CSV rows "layer,codeword_id,count" followed by a "topk,..." summary block.
std::string cluster_stats_csv(const std::string& layer_name, const ClusterStats& stats);

}  // namespace s2nn
