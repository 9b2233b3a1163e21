#include "s2nn/engine.hpp"

#include <algorithm>
#include <bit>
#include <stdexcept>

#include "s2nn/parallel.hpp"

namespace s2nn {

namespace {

// Receptive-field bits for one (batch, channel, output y, output x), kernel
// element b at bit b (row-major), zero padding outside the input.
std::uint64_t gather_field(const SpikeTensor& s, int b, int i, int y, int x, int k_h, int k_w,
                           int pad_h, int pad_w) {
    const Shape4 sh = s.shape();
    std::uint64_t field = 0;
    for (int ky = 0; ky < k_h; ++ky) {
        const int sy = y + ky - pad_h;
        if (sy < 0 || sy >= sh.h) continue;
        for (int kx = 0; kx < k_w; ++kx) {
            const int sx = x + kx - pad_w;
            if (sx < 0 || sx >= sh.w) continue;
            if (s.get(b, i, sy, sx)) field |= std::uint64_t{1} << (ky * k_w + kx);
        }
    }
    return field;
}

// Sign-weight dot product against a spike field: +1 bits minus -1 bits over
// the spiking positions.
inline std::int64_t pattern_dot(std::uint64_t field, std::uint64_t weight_bits) {
    return 2 * std::int64_t(std::popcount(field & weight_bits)) -
           std::int64_t(std::popcount(field));
}

void check_conv_shapes(const Shape4& s, int c_in, int k_h, int k_w) {
    if (s.c != c_in) throw std::runtime_error("input channel mismatch");
    if (k_h % 2 == 0 || k_w % 2 == 0) throw std::runtime_error("kernel side must be odd");
    if (s.h < 1 || s.w < 1 || s.b < 1) throw std::runtime_error("empty input");
}

}  // namespace

Tensor4 binary_conv(const SpikeTensor& s, const BinaryConvWeights& w, OpCounters* counters) {
    const Shape4 in = s.shape();
    check_conv_shapes(in, w.c_in, w.k_h, w.k_w);
    const int pad_h = w.k_h / 2, pad_w = w.k_w / 2;
    const int len = int(w.kernel_len());

    std::vector<std::uint64_t> wbits(w.kernel_count());
    for (std::size_t k = 0; k < w.kernel_count(); ++k)
        wbits[k] = encode_codeword(w.kernel(k), len);

    Tensor4 out(Shape4{in.b, w.c_out, in.h, in.w});
    std::uint64_t mul = 0, add = 0;
    const std::ptrdiff_t rows = std::ptrdiff_t(in.b) * in.h;

#pragma omp parallel for num_threads(max_threads()) schedule(static) reduction(+ : mul, add)
    for (std::ptrdiff_t row = 0; row < rows; ++row) {
        const int b = int(row / in.h);
        const int y = int(row % in.h);
        std::vector<std::uint64_t> fields(std::size_t(w.c_in));
        for (int x = 0; x < in.w; ++x) {
            for (int i = 0; i < w.c_in; ++i)
                fields[std::size_t(i)] = gather_field(s, b, i, y, x, w.k_h, w.k_w, pad_h, pad_w);
            for (int o = 0; o < w.c_out; ++o) {
                std::int64_t acc = 0;
                for (int i = 0; i < w.c_in; ++i) {
                    acc += pattern_dot(fields[std::size_t(i)],
                                       wbits[std::size_t(o) * w.c_in + i]);
                    ++mul;
                    ++add;
                }
                out.at(b, o, y, x) = w.alpha[std::size_t(o)] * double(acc);
            }
        }
    }
    if (counters) {
        counters->multiplies += mul;
        counters->adds += add;
    }
    return out;
}

std::pair<Tensor4, OpCounters> subbit_conv(const SpikeTensor& s, const QuantizedLayer& q) {
    const Shape4 in = s.shape();
    check_conv_shapes(in, q.c_in, q.k_h, q.k_w);
    const int pad_h = q.k_h / 2, pad_w = q.k_w / 2;
    const int slots = q.codebook.size();

    Tensor4 out(Shape4{in.b, q.c_out, in.h, in.w});
    std::uint64_t mul = 0, add = 0, lut = 0;
    const std::ptrdiff_t rows = std::ptrdiff_t(in.b) * in.h;

#pragma omp parallel for num_threads(max_threads()) schedule(static) reduction(+ : mul, add, lut)
    for (std::ptrdiff_t row = 0; row < rows; ++row) {
        const int b = int(row / in.h);
        const int y = int(row % in.h);
        std::vector<std::int64_t> bank(std::size_t(slots), 0);
        std::vector<std::uint32_t> stamp(std::size_t(slots), 0);
        std::uint32_t epoch = 0;
        std::vector<std::int64_t> acc(std::size_t(q.c_out));

        for (int x = 0; x < in.w; ++x) {
            std::fill(acc.begin(), acc.end(), 0);
            for (int i = 0; i < q.c_in; ++i) {
                // The bank is keyed per (input channel, position): one entry
                // per distinct codeword of this channel's index column.
                ++epoch;
                const std::uint64_t field =
                    gather_field(s, b, i, y, x, q.k_h, q.k_w, pad_h, pad_w);
                for (int o = 0; o < q.c_out; ++o) {
                    const std::uint32_t slot = q.indices[std::size_t(o) * q.c_in + i];
                    if (stamp[slot] != epoch) {
                        // The codebook id already holds the codeword's sign
                        // bits in kernel-element order.
                        bank[slot] = pattern_dot(field, q.codebook.id(int(slot)));
                        stamp[slot] = epoch;
                        ++mul;
                    } else {
                        ++lut;
                    }
                    acc[std::size_t(o)] += bank[slot];
                    ++add;
                }
            }
            for (int o = 0; o < q.c_out; ++o)
                out.at(b, o, y, x) = q.alpha[std::size_t(o)] * double(acc[std::size_t(o)]);
        }
    }
    return {std::move(out), OpCounters{mul, add, lut}};
}

std::vector<double> fc_sign(const std::vector<double>& x, std::size_t batch,
                            const std::vector<std::int8_t>& sign, std::size_t out_dim,
                            std::size_t in_dim, const std::vector<double>& alpha) {
    if (x.size() != batch * in_dim || sign.size() != out_dim * in_dim ||
        alpha.size() != out_dim)
        throw std::runtime_error("fc_sign: size mismatch");
    std::vector<double> out(batch * out_dim, 0.0);
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t o = 0; o < out_dim; ++o) {
            double acc = 0.0;
            for (std::size_t i = 0; i < in_dim; ++i)
                acc += double(sign[o * in_dim + i]) * x[b * in_dim + i];
            out[b * out_dim + o] = alpha[o] * acc;
        }
    return out;
}

OpCount count_ops(const PackedModel& m, Shape4 input, int timesteps, double firing_rate) {
    if (timesteps < 1) throw std::runtime_error("timesteps must be >= 1");
    if (!(firing_rate >= 0.0 && firing_rate <= 1.0))
        throw std::runtime_error("firing rate must be in [0,1]");
    OpCount c;
    int channels = input.c;
    for (const QuantizedLayer& q : m.layers) {
        if (q.c_in != channels) throw std::runtime_error("layer channel chain mismatch");
        const double flops =
            2.0 * q.k_h * q.k_w * q.c_in * double(input.h) * input.w * q.c_out;
        c.flops += flops;
        c.sops += firing_rate * double(timesteps) * flops;
        channels = q.c_out;
    }
    return c;
}

PackedRunResult run_packed_snn(const PackedModel& m, const std::vector<SpikeTensor>& input,
                               const LifConfig& cfg, bool use_reconstructed) {
    if (input.empty()) throw std::runtime_error("no timesteps");
    if (m.layers.empty()) throw std::runtime_error("empty model");

    std::vector<SpikeTensor> current = input;
    PackedRunResult r;
    for (const QuantizedLayer& q : m.layers) {
        BinaryConvWeights dense;
        if (use_reconstructed) dense = reconstruct(q);

        const Shape4 in_shape = current.front().shape();
        LifState state = make_lif_state(Shape4{in_shape.b, q.c_out, in_shape.h, in_shape.w});
        std::vector<SpikeTensor> next;
        next.reserve(current.size());
        for (const SpikeTensor& s_t : current) {
            Tensor4 drive;
            if (use_reconstructed) {
                drive = binary_conv(s_t, dense, &r.counters);
            } else {
                auto [d, counters] = subbit_conv(s_t, q);
                drive = std::move(d);
                r.counters += counters;
            }
            LifResult step = lif_step(state, drive, cfg);
            state = std::move(step.state);
            next.push_back(std::move(step.spikes));
        }
        current = std::move(next);
    }

    const Shape4 out_shape = current.front().shape();
    r.logits.assign(std::size_t(out_shape.c), 0.0);
    for (const SpikeTensor& s_t : current)
        for (int b = 0; b < out_shape.b; ++b)
            for (int c = 0; c < out_shape.c; ++c)
                for (int y = 0; y < out_shape.h; ++y)
                    for (int x = 0; x < out_shape.w; ++x)
                        if (s_t.get(b, c, y, x)) r.logits[std::size_t(c)] += 1.0;
    const double denom =
        double(current.size()) * out_shape.b * out_shape.h * out_shape.w;
    for (double& v : r.logits) v /= denom;
    r.output_firing_rate = firing_rate(current);
    return r;
}

}  // namespace s2nn
