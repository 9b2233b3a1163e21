#include "s2nn/osquant.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "s2nn/parallel.hpp"

namespace s2nn {

namespace {

double interpolated_quantile(const std::vector<double>& sorted, double pos) {
    const std::size_t lo = std::size_t(pos);
    const double frac = pos - double(lo);
    if (lo + 1 >= sorted.size()) return sorted.back();
    return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

double squared_distance(const double* a, const double* b, int len) {
    double d = 0.0;
    for (int p = 0; p < len; ++p) {
        const double diff = a[p] - b[p];
        d += diff * diff;
    }
    return d;
}

QuantAssignment nearest_codeword(const double* kernel, const CompactCodebook& cb) {
    QuantAssignment best{0, squared_distance(kernel, cb.codeword(0), cb.kernel_len())};
    for (int s = 1; s < cb.size(); ++s) {
        const double d = squared_distance(kernel, cb.codeword(s), cb.kernel_len());
        if (d < best.distance) best = QuantAssignment{s, d};
    }
    return best;
}

}  // namespace

OutlierBounds outlier_bounds(const double* kernel, int k_h, int k_w, double gamma) {
    const int n = k_h * k_w;
    if (n < 4) throw std::runtime_error("kernel too small for quartiles");
    std::vector<double> sorted(kernel, kernel + n);
    std::sort(sorted.begin(), sorted.end());

    OutlierBounds b;
    b.gamma = gamma;
    b.q1 = interpolated_quantile(sorted, 0.25 * double(n - 1));
    b.q3 = interpolated_quantile(sorted, 0.75 * double(n - 1));
    b.iqr = b.q3 - b.q1;
    b.lo = b.q1 - gamma * b.iqr;
    b.hi = b.q3 + gamma * b.iqr;
    return b;
}

std::vector<KernelCoord> detect_outliers(const double* kernel, int k_h, int k_w,
                                         const OutlierBounds& bounds) {
    std::vector<KernelCoord> out;
    for (int i = 0; i < k_h; ++i)
        for (int j = 0; j < k_w; ++j) {
            const double v = kernel[i * k_w + j];
            if (v < bounds.lo || v > bounds.hi) out.push_back({i + 1, j + 1});
        }
    return out;
}

double omega(const double* kernel, int k_h, int k_w, KernelCoord at) {
    if (at.row < 1 || at.row > k_h || at.col < 1 || at.col > k_w)
        throw std::runtime_error("coordinate outside kernel");
    const double v = kernel[(at.row - 1) * k_w + (at.col - 1)];
    double sum = 0.0;
    int count = 0;
    const int dr[4] = {-1, 1, 0, 0};
    const int dc[4] = {0, 0, -1, 1};
    for (int d = 0; d < 4; ++d) {
        const int r = at.row + dr[d], c = at.col + dc[d];
        if (r < 1 || r > k_h || c < 1 || c > k_w) continue;
        sum += std::fabs(v - kernel[(r - 1) * k_w + (c - 1)]);
        ++count;
    }
    const double result = sum / double(count);
    if (result == 0.0) throw std::runtime_error("degenerate omega");
    return result;
}

OutlierReport outlier_report(const double* kernel, int k_h, int k_w, double gamma,
                             DegenerateOmega policy) {
    OutlierReport report;
    if (!std::isfinite(gamma)) return report;  // detection disabled
    const OutlierBounds bounds = outlier_bounds(kernel, k_h, k_w, gamma);
    for (const KernelCoord& coord : detect_outliers(kernel, k_h, k_w, bounds)) {
        double om;
        try {
            om = omega(kernel, k_h, k_w, coord);
        } catch (const std::runtime_error&) {
            if (policy == DegenerateOmega::raise) throw;
            continue;  // value equal to all neighbors cannot dominate; keep it
        }
        report.coords.push_back(coord);
        report.omega.push_back(om);
    }
    return report;
}

std::vector<double> scale_outliers(const double* kernel, int k_h, int k_w,
                                   const OutlierReport& report) {
    std::vector<double> adjusted(kernel, kernel + std::size_t(k_h) * k_w);
    for (std::size_t p = 0; p < report.coords.size(); ++p) {
        const KernelCoord& c = report.coords[p];
        adjusted[(c.row - 1) * k_w + (c.col - 1)] /= report.omega[p];
    }
    return adjusted;
}

QuantAssignment assign_baseline(const double* kernel, const CompactCodebook& cb) {
    return nearest_codeword(kernel, cb);
}

QuantAssignment assign_osquant(const double* kernel, const CompactCodebook& cb, double gamma,
                               DegenerateOmega policy) {
    const OutlierReport report = outlier_report(kernel, cb.k_h(), cb.k_w(), gamma, policy);
    const std::vector<double> adjusted = scale_outliers(kernel, cb.k_h(), cb.k_w(), report);
    return nearest_codeword(adjusted.data(), cb);
}

std::vector<double> ste_backward(const std::vector<double>& grad_out, const double* w_b,
                                 int len) {
    if (grad_out.size() != std::size_t(len)) throw std::runtime_error("gradient size mismatch");
    std::vector<double> grad_in(grad_out.size());
    for (int p = 0; p < len; ++p) {
        if (std::fabs(w_b[p]) != 1.0) throw std::runtime_error("weights must be sign values");
        grad_in[std::size_t(p)] = std::fabs(w_b[p]) <= 1.0 ? grad_out[std::size_t(p)] : 0.0;
    }
    return grad_in;
}

std::vector<double> scale_backward(const std::vector<double>& grad_scaled, int k_h, int k_w,
                                   const OutlierReport& report) {
    if (grad_scaled.size() != std::size_t(k_h) * k_w)
        throw std::runtime_error("gradient size mismatch");
    std::vector<double> grad = grad_scaled;
    for (std::size_t p = 0; p < report.coords.size(); ++p) {
        const KernelCoord& c = report.coords[p];
        grad[(c.row - 1) * k_w + (c.col - 1)] /= report.omega[p];
    }
    return grad;
}

double outlier_occurrence(const DenseConvWeights& layer, double gamma) {
    if (layer.kernel_count() == 0) return 0.0;
    std::vector<char> has(layer.kernel_count(), 0);
#pragma omp parallel for num_threads(max_threads()) schedule(static)
    for (std::ptrdiff_t k = 0; k < std::ptrdiff_t(layer.kernel_count()); ++k) {
        if (!std::isfinite(gamma)) continue;
        const OutlierBounds b = outlier_bounds(layer.kernel(k), layer.k_h, layer.k_w, gamma);
        has[k] = !detect_outliers(layer.kernel(k), layer.k_h, layer.k_w, b).empty();
    }
    std::size_t n = 0;
    for (char c : has) n += c;
    return double(n) / double(layer.kernel_count());
}

QuantizedLayer quantize_layer(const DenseConvWeights& w, const CompactCodebook& cb,
                              double gamma) {
    if (w.k_h != cb.k_h() || w.k_w != cb.k_w())
        throw std::runtime_error("kernel shape disagrees with codebook");
    if (w.k_h != w.k_w || w.k_h <= 1)
        throw std::runtime_error("kernels must be square with side > 1");

    const BinaryConvWeights b = sign_binarize(w);
    QuantizedLayer q;
    q.c_out = w.c_out;
    q.c_in = w.c_in;
    q.k_h = w.k_h;
    q.k_w = w.k_w;
    q.index_bits = cb.index_bits();
    q.codebook = cb;
    q.alpha = b.alpha;
    q.indices.resize(w.kernel_count());
#pragma omp parallel for num_threads(max_threads()) schedule(static)
    for (std::ptrdiff_t k = 0; k < std::ptrdiff_t(w.kernel_count()); ++k) {
        const QuantAssignment a =
            assign_osquant(w.kernel(k), cb, gamma, DegenerateOmega::keep_unscaled);
        q.indices[k] = std::uint32_t(a.slot);
    }
    return q;
}

std::string outlier_report_csv(const std::string& layer_name, const DenseConvWeights& w,
                               double gamma) {
    std::string out;
    char line[160];
    for (std::size_t k = 0; k < w.kernel_count(); ++k) {
        if (!std::isfinite(gamma)) break;
        const double* kernel = w.kernel(k);
        const OutlierBounds b = outlier_bounds(kernel, w.k_h, w.k_w, gamma);
        for (const KernelCoord& c : detect_outliers(kernel, w.k_h, w.k_w, b)) {
            double om = 0.0;
            try {
                om = omega(kernel, w.k_h, w.k_w, c);
            } catch (const std::runtime_error&) {
            }
            std::snprintf(line, sizeof(line), "%s,%zu,%d,%d,%.17g,%.17g\n", layer_name.c_str(),
                          k, c.row, c.col, kernel[(c.row - 1) * w.k_w + (c.col - 1)], om);
            out += line;
        }
    }
    return out;
}

}  // namespace s2nn
