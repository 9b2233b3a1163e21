#pragma once

#include <cstddef>
#include <vector>

#include "s2nn/tensor.hpp"

namespace s2nn {

// Row-major matrix just big enough for the Gram math here.
struct Mat {
    std::size_t rows = 0, cols = 0;
    std::vector<double> a;

    Mat() = default;
    Mat(std::size_t r, std::size_t c) : rows(r), cols(c), a(r * c, 0.0) {}
    double& at(std::size_t i, std::size_t j) { return a[i * cols + j]; }
    double at(std::size_t i, std::size_t j) const { return a[i * cols + j]; }
};

// batch x batch Gram matrix of flattened potentials, normalized to unit
// Frobenius norm.
struct GramFeature {
    int batch = 0;
    std::vector<double> g;  // row-major batch*batch
    Shape4 source_shape;

    double at(int i, int j) const { return g[std::size_t(i) * batch + j]; }
};

struct LayerPair {
    int teacher_layer = 0, student_layer = 0;
};
using LayerPairing = std::vector<LayerPair>;

// Recorded pre-reset potentials: [layer][timestep].
using PotentialTrace = std::vector<std::vector<Tensor4>>;

// [b,c,h,w] -> b x (c*h*w), row-major per batch element.
Mat flatten_q(const Tensor4& u);

// Throws "degenerate Gram" when the unnormalized Gram is all-zero.
GramFeature gram(const Tensor4& u);

// Sum over pairs and timesteps of the Frobenius norm of the Gram
// difference. Teacher and student batches must match. skip_degenerate drops
// (pair, t) terms whose Gram is degenerate instead of throwing.
double mpfd_loss(const PotentialTrace& teacher, const PotentialTrace& student,
                 const LayerPairing& pairing, int timesteps, bool skip_degenerate = false);

// Analytic gradient of mpfd_loss with respect to every student potential;
// the teacher side is a constant. Layout matches the student trace.
PotentialTrace mpfd_grad(const PotentialTrace& teacher, const PotentialTrace& student,
                         const LayerPairing& pairing, int timesteps,
                         bool skip_degenerate = false);

}  // namespace s2nn
