#pragma once

#include <vector>

#include "s2nn/binarize.hpp"
#include "s2nn/codebook.hpp"
#include "s2nn/pack.hpp"

namespace s2nn {

// Tukey fences on a kernel's value distribution. Quartiles are linear
// interpolation at 0.25*(n-1) and 0.75*(n-1) on the sorted sample.
struct OutlierBounds {
    double q1 = 0, q3 = 0, iqr = 0;
    double lo = 0, hi = 0;  // [q1 - gamma*iqr, q3 + gamma*iqr]
    double gamma = 0;
};

// Kernel positions are 1-based (row, col), matching the fence/neighbor
// conventions used throughout.
struct KernelCoord {
    int row = 0, col = 0;
    bool operator==(const KernelCoord&) const = default;
};

struct OutlierReport {
    std::vector<KernelCoord> coords;  // row-major order
    std::vector<double> omega;        // parallel to coords, all > 0
};

// What to do when an outlier equals all of its neighbors (omega would be 0):
// raise throws "degenerate omega"; keep_unscaled drops the coordinate from
// the report so the value passes through unchanged.
enum class DegenerateOmega { raise, keep_unscaled };

OutlierBounds outlier_bounds(const double* kernel, int k_h, int k_w, double gamma);

// Strictly outside [lo, hi]; fence values themselves are normal.
std::vector<KernelCoord> detect_outliers(const double* kernel, int k_h, int k_w,
                                         const OutlierBounds& bounds);

// Mean absolute difference between the value at `at` and its in-bounds
// 4-neighbors. Throws "degenerate omega" when that mean is zero.
double omega(const double* kernel, int k_h, int k_w, KernelCoord at);

// Bounds + detection + omega in one pass. A non-finite gamma disables
// detection entirely (the report comes back empty).
OutlierReport outlier_report(const double* kernel, int k_h, int k_w, double gamma,
                             DegenerateOmega policy = DegenerateOmega::raise);

// Divides each reported outlier by its omega; every other coordinate is
// copied bit-identically.
std::vector<double> scale_outliers(const double* kernel, int k_h, int k_w,
                                   const OutlierReport& report);

struct QuantAssignment {
    int slot = 0;          // codebook slot of the argmin, ties to the lowest slot
    double distance = 0;   // squared L2 at the argmin
};

// Exhaustive nearest-codeword scan on the raw kernel.
QuantAssignment assign_baseline(const double* kernel, const CompactCodebook& cb);

// Nearest-codeword scan on the outlier-scaled kernel. gamma = inf degrades
// to the baseline exactly.
QuantAssignment assign_osquant(const double* kernel, const CompactCodebook& cb, double gamma,
                               DegenerateOmega policy = DegenerateOmega::raise);

// Pass-through gradient masked by 1_{|w_b| <= 1}. Sign weights sit exactly
// on the mask boundary, which is checked rather than assumed.
std::vector<double> ste_backward(const std::vector<double>& grad_out, const double* w_b,
                                 int len);

// Backward of scale_outliers with omega treated as a constant of the
// forward pass: gradient is multiplied by 1/omega on reported coordinates.
std::vector<double> scale_backward(const std::vector<double>& grad_scaled, int k_h, int k_w,
                                   const OutlierReport& report);

// Fraction of a layer's kernels with a non-empty outlier set.
double outlier_occurrence(const DenseConvWeights& layer, double gamma);

// Whole-layer driver: binarizes for alpha, assigns every kernel in parallel
// and assembles the storable layer. gamma = inf selects the baseline
// assignment; degenerate omegas fall back to leaving the value unscaled.
QuantizedLayer quantize_layer(const DenseConvWeights& w, const CompactCodebook& cb,
                              double gamma);

// CSV rows "layer,kernel_index,i,j,value,omega" for every outlier in the
// layer (degenerate omegas reported with omega 0 and left unscaled).
std::string outlier_report_csv(const std::string& layer_name, const DenseConvWeights& w,
                               double gamma);

}  // namespace s2nn
