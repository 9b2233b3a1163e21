#pragma once

#include "s2nn/tensor.hpp"

namespace s2nn {

struct LifConfig {
    double leak = 0.25;            // carry-over factor on the reset potential, in [0, 1)
    double threshold = 1.0;        // spike threshold, > 0
    double surrogate_width = 0.5;  // half-width of the rectangular surrogate window
};

// Post-reset membrane potential plus the pre-reset one, which is what
// distillation taps.
struct LifState {
    Tensor4 u;      // after hard reset; exactly 0 wherever the last spike fired
    Tensor4 u_pre;  // before reset
};

struct LifResult {
    SpikeTensor spikes;
    LifState state;
};

inline LifState make_lif_state(Shape4 s) { return LifState{Tensor4(s), Tensor4(s)}; }

// One step: pre = leak * u + drive; spike where pre >= threshold; spiking
// entries reset to exactly zero (pre * (1 - spike)).
LifResult lif_step(const LifState& state, const Tensor4& drive, const LifConfig& cfg);

// Rectangular surrogate derivative of the spike function: 1/(2a) where
// |pre - threshold| <= a (boundary inclusive), else 0.
double surrogate_grad_at(double u_pre, const LifConfig& cfg);
Tensor4 surrogate_grad(const Tensor4& u_pre, const LifConfig& cfg);

}  // namespace s2nn
