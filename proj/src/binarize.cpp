#include "s2nn/binarize.hpp"

#include <cmath>

#include "s2nn/parallel.hpp"

namespace s2nn {

BinaryConvWeights sign_binarize(const DenseConvWeights& w) {
    BinaryConvWeights b;
    b.c_out = w.c_out;
    b.c_in = w.c_in;
    b.k_h = w.k_h;
    b.k_w = w.k_w;
    b.sign.resize(w.data.size());
    b.alpha.assign(std::size_t(w.c_out), 0.0);

    const std::size_t per_channel = std::size_t(w.c_in) * w.k_h * w.k_w;
#pragma omp parallel for num_threads(max_threads()) schedule(static)
    for (int o = 0; o < w.c_out; ++o) {
        const std::size_t base = std::size_t(o) * per_channel;
        double abs_sum = 0.0;
        for (std::size_t p = 0; p < per_channel; ++p) {
            const double v = w.data[base + p];
            b.sign[base + p] = v < 0.0 ? -1 : 1;
            abs_sum += std::fabs(v);
        }
        b.alpha[o] = per_channel ? abs_sum / double(per_channel) : 0.0;
    }
    return b;
}

}  // namespace s2nn
