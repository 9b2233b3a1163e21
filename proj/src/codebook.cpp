#include "s2nn/codebook.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include "s2nn/rng.hpp"

namespace s2nn {

std::uint64_t encode_codeword(const double* kernel, int len) {
    std::uint64_t id = 0;
    for (int b = 0; b < len; ++b)
        if (kernel[b] >= 0.0) id |= std::uint64_t{1} << b;
    return id;
}

std::uint64_t encode_codeword(const std::int8_t* sign, int len) {
    std::uint64_t id = 0;
    for (int b = 0; b < len; ++b)
        if (sign[b] > 0) id |= std::uint64_t{1} << b;
    return id;
}

void decode_codeword(std::uint64_t id, int len, double* out) {
    for (int b = 0; b < len; ++b) out[b] = (id >> b) & 1u ? 1.0 : -1.0;
}

void decode_codeword(std::uint64_t id, int len, std::int8_t* out) {
    for (int b = 0; b < len; ++b) out[b] = (id >> b) & 1u ? 1 : -1;
}

CompactCodebook::CompactCodebook(int k_w, int k_h, int index_bits,
                                 std::vector<std::uint64_t> ids, std::uint64_t seed)
    : k_w_(k_w), k_h_(k_h), index_bits_(index_bits), seed_(seed), ids_(std::move(ids)) {
    if (k_w * k_h > 64) throw std::runtime_error("kernel too large for codeword ids");
    if (index_bits < 1 || index_bits >= k_w * k_h) throw std::runtime_error("not sub-bit");
    if (ids_.size() != (std::size_t{1} << index_bits))
        throw std::runtime_error("codebook size must be 2^index_bits");
    std::unordered_set<std::uint64_t> seen(ids_.begin(), ids_.end());
    if (seen.size() != ids_.size()) throw std::runtime_error("codebook ids must be distinct");

    const int len = kernel_len();
    signs_.resize(ids_.size() * std::size_t(len));
    for (std::size_t s = 0; s < ids_.size(); ++s)
        decode_codeword(ids_[s], len, signs_.data() + s * std::size_t(len));
    latents_ = signs_;
}

void CompactCodebook::update_latents(const std::vector<double>& grads, double lr) {
    if (grads.size() != latents_.size())
        throw std::runtime_error("latent gradient size mismatch");
    for (std::size_t p = 0; p < latents_.size(); ++p) latents_[p] -= lr * grads[p];
    resign_and_repair();
}

void CompactCodebook::set_latents(std::vector<double> latents) {
    if (latents.size() != latents_.size()) throw std::runtime_error("latent size mismatch");
    const int len = kernel_len();
    for (std::size_t s = 0; s < ids_.size(); ++s)
        if (encode_codeword(latents.data() + s * std::size_t(len), len) != ids_[s])
            throw std::runtime_error("latents disagree with codewords");
    latents_ = std::move(latents);
}

void CompactCodebook::resign_and_repair() {
    const int len = kernel_len();
    std::unordered_set<std::uint64_t> used;
    for (std::size_t s = 0; s < ids_.size(); ++s) {
        double* lat = latents_.data() + s * std::size_t(len);
        std::uint64_t id = encode_codeword(lat, len);
        if (!used.insert(id).second) {
            // Collision: the later slot gives way. Search flip sets over the
            // latent elements in order of flip count, preferring the
            // smallest magnitudes, and take the first free codeword.
            std::vector<int> order(static_cast<std::size_t>(len));
            std::iota(order.begin(), order.end(), 0);
            std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
                return std::fabs(lat[a]) < std::fabs(lat[b]);
            });
            bool placed = false;
            for (int flips = 1; flips <= len && !placed; ++flips) {
                std::vector<int> pick(static_cast<std::size_t>(flips));
                std::iota(pick.begin(), pick.end(), 0);
                while (true) {
                    std::uint64_t candidate = id;
                    for (int i : pick) candidate ^= std::uint64_t{1} << order[std::size_t(i)];
                    if (!used.count(candidate)) {
                        for (int i : pick) {
                            double& v = lat[order[std::size_t(i)]];
                            v = v == 0.0 ? -1e-12 : -v;
                        }
                        id = candidate;
                        used.insert(id);
                        placed = true;
                        break;
                    }
                    // Next combination of `flips` positions.
                    int j = flips - 1;
                    while (j >= 0 && pick[std::size_t(j)] == len - flips + j) --j;
                    if (j < 0) break;
                    ++pick[std::size_t(j)];
                    for (int i = j + 1; i < flips; ++i)
                        pick[std::size_t(i)] = pick[std::size_t(i - 1)] + 1;
                }
            }
        }
        ids_[s] = id;
        decode_codeword(id, len, signs_.data() + s * std::size_t(len));
    }
}

CompactCodebook sample_codebook(int k_w, int k_h, int index_bits, std::uint64_t seed) {
    const int len = k_w * k_h;
    if (index_bits >= len) throw std::runtime_error("not sub-bit");
    if (index_bits < 1) throw std::runtime_error("index_bits must be >= 1");

    Rng rng(seed);
    std::unordered_set<std::uint64_t> seen;
    std::vector<std::uint64_t> ids;
    const std::size_t want = std::size_t{1} << index_bits;
    ids.reserve(want);
    while (ids.size() < want) {
        const std::uint64_t id = rng.draw_bits(len);
        if (seen.insert(id).second) ids.push_back(id);
    }
    return CompactCodebook(k_w, k_h, index_bits, std::move(ids), seed);
}

double ClusterStats::topk(std::size_t k) const {
    if (total == 0) return 0.0;
    std::size_t covered = 0;
    for (std::size_t i = 0; i < histogram.size() && i < k; ++i) covered += histogram[i].second;
    return double(covered) / double(total);
}

ClusterStats cluster_stats(const BinaryConvWeights& w) {
    if (w.k_h != w.k_w || w.k_h <= 1)
        throw std::runtime_error("cluster_stats: kernels must be square with side > 1");
    const int len = int(w.kernel_len());
    std::unordered_map<std::uint64_t, std::size_t> counts;
    for (std::size_t k = 0; k < w.kernel_count(); ++k)
        ++counts[encode_codeword(w.kernel(k), len)];

    ClusterStats st;
    st.total = w.kernel_count();
    st.histogram.assign(counts.begin(), counts.end());
    std::sort(st.histogram.begin(), st.histogram.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    return st;
}

std::string cluster_stats_csv(const std::string& layer_name, const ClusterStats& stats) {
    std::string out;
    for (const auto& [id, count] : stats.histogram)
        out += layer_name + "," + std::to_string(id) + "," + std::to_string(count) + "\n";
    for (std::size_t k : {std::size_t{1}, std::size_t{2}, std::size_t{4}, std::size_t{8},
                          std::size_t{16}, std::size_t{32}, std::size_t{64}, std::size_t{128}}) {
        char line[96];
        std::snprintf(line, sizeof(line), "topk,%s,%zu,%.6f\n", layer_name.c_str(), k,
                      stats.topk(k));
        out += line;
    }
    return out;
}

}  // namespace s2nn
