#include "s2nn/neuron.hpp"

#include <cmath>
#include <stdexcept>

#include "s2nn/parallel.hpp"

namespace s2nn {

LifResult lif_step(const LifState& state, const Tensor4& drive, const LifConfig& cfg) {
    const Shape4 shape = drive.shape();
    if (!(state.u.shape() == shape)) throw std::runtime_error("lif_step: shape mismatch");

    LifResult r{SpikeTensor(shape), LifState{Tensor4(shape), Tensor4(shape)}};
    const std::size_t n = shape.volume();
    const double* u_prev = state.u.data();
    const double* in = drive.data();
    double* pre = r.state.u_pre.data();
    double* u_new = r.state.u.data();

    // SpikeTensor bit writes share words, so spikes are filled serially after
    // the potentials.
#pragma omp parallel for num_threads(max_threads()) schedule(static)
    for (std::ptrdiff_t p = 0; p < std::ptrdiff_t(n); ++p) {
        const double v = cfg.leak * u_prev[p] + in[p];
        pre[p] = v;
        u_new[p] = v >= cfg.threshold ? 0.0 : v;
    }
    for (std::size_t p = 0; p < n; ++p)
        if (pre[p] >= cfg.threshold) r.spikes.set_flat(p, true);
    return r;
}

double surrogate_grad_at(double u_pre, const LifConfig& cfg) {
    const double a = cfg.surrogate_width;
    return std::fabs(u_pre - cfg.threshold) <= a ? 1.0 / (2.0 * a) : 0.0;
}

Tensor4 surrogate_grad(const Tensor4& u_pre, const LifConfig& cfg) {
    Tensor4 g(u_pre.shape());
    const std::size_t n = u_pre.size();
    const double* in = u_pre.data();
    double* out = g.data();
    for (std::size_t p = 0; p < n; ++p) out[p] = surrogate_grad_at(in[p], cfg);
    return g;
}

}  // namespace s2nn
