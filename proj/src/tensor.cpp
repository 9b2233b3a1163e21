#include "s2nn/tensor.hpp"

#include <bit>
#include <stdexcept>

namespace s2nn {

std::size_t SpikeTensor::count() const {
    std::size_t n = 0;
    for (std::uint64_t w : words_) n += std::popcount(w);
    return n;
}

std::vector<std::uint8_t> SpikeTensor::to_bytes() const {
    const std::size_t nbits = shape_.volume();
    std::vector<std::uint8_t> out((nbits + 7) / 8, 0);
    for (std::size_t p = 0; p < nbits; ++p)
        if (get_flat(p)) out[p >> 3] |= std::uint8_t(1u << (p & 7));
    return out;
}

SpikeTensor SpikeTensor::from_bytes(Shape4 s, const std::vector<std::uint8_t>& bytes) {
    const std::size_t nbits = s.volume();
    if (bytes.size() < (nbits + 7) / 8) throw std::runtime_error("spike payload truncated");
    SpikeTensor t(s);
    for (std::size_t p = 0; p < nbits; ++p)
        t.set_flat(p, (bytes[p >> 3] >> (p & 7)) & 1u);
    return t;
}

double firing_rate(const std::vector<SpikeTensor>& steps) {
    if (steps.empty()) throw std::runtime_error("no timesteps");
    const Shape4 shape = steps.front().shape();
    const std::size_t vol = shape.volume();
    if (vol == 0) throw std::runtime_error("empty tensor");
    std::size_t spikes = 0;
    for (const SpikeTensor& s : steps) {
        if (!(s.shape() == shape)) throw std::runtime_error("shape mismatch across timesteps");
        spikes += s.count();
    }
    return double(spikes) / (double(steps.size()) * double(vol));
}

}  // namespace s2nn
