#include "s2nn/reference.hpp"

#include <cmath>
#include <stdexcept>

namespace s2nn {
namespace reference {

Tensor4 binary_conv(const SpikeTensor& s, const BinaryConvWeights& w) {
    const Shape4 in = s.shape();
    if (in.c != w.c_in) throw std::runtime_error("input channel mismatch");
    const int pad_h = w.k_h / 2, pad_w = w.k_w / 2;

    Tensor4 out(Shape4{in.b, w.c_out, in.h, in.w});
    for (int b = 0; b < in.b; ++b)
        for (int o = 0; o < w.c_out; ++o)
            for (int y = 0; y < in.h; ++y)
                for (int x = 0; x < in.w; ++x) {
                    double acc = 0.0;
                    for (int i = 0; i < w.c_in; ++i)
                        for (int ky = 0; ky < w.k_h; ++ky)
                            for (int kx = 0; kx < w.k_w; ++kx) {
                                const int sy = y + ky - pad_h;
                                const int sx = x + kx - pad_w;
                                if (sy < 0 || sy >= in.h || sx < 0 || sx >= in.w) continue;
                                const double spike = s.get(b, i, sy, sx) ? 1.0 : 0.0;
                                const std::int8_t weight =
                                    w.sign[((std::size_t(o) * w.c_in + i) * w.k_h + ky) * w.k_w +
                                           kx];
                                acc += double(weight) * spike;
                            }
                    out.at(b, o, y, x) = w.alpha[std::size_t(o)] * acc;
                }
    return out;
}

Nearest nearest_codeword(const double* kernel, const double* codewords, int count, int len) {
    Nearest best;
    best.slot = 0;
    best.distance = 0.0;
    for (int p = 0; p < len; ++p) {
        const double d = codewords[p] - kernel[p];
        best.distance += d * d;
    }
    for (int s = 1; s < count; ++s) {
        double dist = 0.0;
        for (int p = 0; p < len; ++p) {
            const double d = codewords[std::size_t(s) * len + p] - kernel[p];
            dist += d * d;
        }
        if (dist < best.distance) {
            best.slot = s;
            best.distance = dist;
        }
    }
    return best;
}

std::vector<double> normalized_gram(const Tensor4& u) {
    const Shape4 s = u.shape();
    const std::size_t b = std::size_t(s.b);
    const std::size_t n = std::size_t(s.c) * s.h * s.w;
    std::vector<double> m(b * b, 0.0);
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < b; ++j) {
            double dot = 0.0;
            for (std::size_t p = 0; p < n; ++p) dot += u.data()[i * n + p] * u.data()[j * n + p];
            m[i * b + j] = dot;
        }
    double norm = 0.0;
    for (double v : m) norm += v * v;
    norm = std::sqrt(norm);
    if (norm == 0.0) throw std::runtime_error("degenerate Gram");
    for (double& v : m) v /= norm;
    return m;
}

}  // namespace reference
}  // namespace s2nn
