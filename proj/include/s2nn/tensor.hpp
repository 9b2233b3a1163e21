#pragma once

#include <cassert>
#include <cstddef>
#include <cstdint>
#include <vector>

namespace s2nn {

struct Shape4 {
    int b = 0, c = 0, h = 0, w = 0;

    std::size_t volume() const {
        return std::size_t(b) * std::size_t(c) * std::size_t(h) * std::size_t(w);
    }
    bool operator==(const Shape4&) const = default;
};

// Dense [batch, channel, height, width] tensor, row-major, 64-bit reals.
// 32-bit floats appear only at serialization boundaries.
class Tensor4 {
public:
    Tensor4() = default;
    explicit Tensor4(Shape4 s, double fill = 0.0) : shape_(s), data_(s.volume(), fill) {}

    const Shape4& shape() const { return shape_; }
    std::size_t size() const { return data_.size(); }

    std::size_t index(int i, int j, int k, int l) const {
        assert(i >= 0 && i < shape_.b && j >= 0 && j < shape_.c);
        assert(k >= 0 && k < shape_.h && l >= 0 && l < shape_.w);
        return ((std::size_t(i) * shape_.c + j) * shape_.h + k) * shape_.w + l;
    }

    double& at(int i, int j, int k, int l) { return data_[index(i, j, k, l)]; }
    double at(int i, int j, int k, int l) const { return data_[index(i, j, k, l)]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

private:
    Shape4 shape_;
    std::vector<double> data_;
};

// {0,1} activations bit-packed into 64-bit words, indexed like Tensor4.
// count() is a popcount over the whole tensor, i.e. the number of spikes.
class SpikeTensor {
public:
    SpikeTensor() = default;
    explicit SpikeTensor(Shape4 s) : shape_(s), words_((s.volume() + 63) / 64, 0) {}

    const Shape4& shape() const { return shape_; }

    bool get(int i, int j, int k, int l) const { return get_flat(index(i, j, k, l)); }
    void set(int i, int j, int k, int l, bool v) { set_flat(index(i, j, k, l), v); }

    bool get_flat(std::size_t p) const { return (words_[p >> 6] >> (p & 63)) & 1u; }
    void set_flat(std::size_t p, bool v) {
        const std::uint64_t bit = std::uint64_t{1} << (p & 63);
        if (v)
            words_[p >> 6] |= bit;
        else
            words_[p >> 6] &= ~bit;
    }

    std::size_t count() const;

    // LSB-first byte packing; the bijection partner of from_bytes.
    std::vector<std::uint8_t> to_bytes() const;
    static SpikeTensor from_bytes(Shape4 s, const std::vector<std::uint8_t>& bytes);

private:
    Shape4 shape_;
    std::vector<std::uint64_t> words_;

    std::size_t index(int i, int j, int k, int l) const {
        assert(i >= 0 && i < shape_.b && j >= 0 && j < shape_.c);
        assert(k >= 0 && k < shape_.h && l >= 0 && l < shape_.w);
        return ((std::size_t(i) * shape_.c + j) * shape_.h + k) * shape_.w + l;
    }
};

// Mean firing rate of a spike train: total spikes / (T * volume).
// Throws "no timesteps" on an empty train.
double firing_rate(const std::vector<SpikeTensor>& steps);

}  // namespace s2nn
