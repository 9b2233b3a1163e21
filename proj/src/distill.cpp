#include "s2nn/distill.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "s2nn/parallel.hpp"

namespace s2nn {

namespace {

double frob_inner(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t p = 0; p < a.size(); ++p) s += a[p] * b[p];
    return s;
}

// Unnormalized Gram Q*Q^T and its Frobenius norm.
void raw_gram(const Mat& q, std::vector<double>& m, double& norm) {
    const std::size_t b = q.rows, n = q.cols;
    m.assign(b * b, 0.0);
#pragma omp parallel for num_threads(max_threads()) schedule(static)
    for (std::ptrdiff_t i = 0; i < std::ptrdiff_t(b); ++i) {
        for (std::size_t j = std::size_t(i); j < b; ++j) {
            double dot = 0.0;
            const double* ri = q.a.data() + std::size_t(i) * n;
            const double* rj = q.a.data() + j * n;
            for (std::size_t p = 0; p < n; ++p) dot += ri[p] * rj[p];
            m[std::size_t(i) * b + j] = dot;
            m[j * b + std::size_t(i)] = dot;
        }
    }
    norm = std::sqrt(frob_inner(m, m));
}

void check_pairing(const PotentialTrace& teacher, const PotentialTrace& student,
                   const LayerPairing& pairing, int timesteps) {
    for (const LayerPair& p : pairing) {
        if (p.teacher_layer < 0 || std::size_t(p.teacher_layer) >= teacher.size() ||
            p.student_layer < 0 || std::size_t(p.student_layer) >= student.size())
            throw std::runtime_error("layer pair out of range");
        if (teacher[std::size_t(p.teacher_layer)].size() < std::size_t(timesteps) ||
            student[std::size_t(p.student_layer)].size() < std::size_t(timesteps))
            throw std::runtime_error("trace shorter than timestep count");
    }
}

}  // namespace

Mat flatten_q(const Tensor4& u) {
    const Shape4 s = u.shape();
    Mat q(std::size_t(s.b), std::size_t(s.c) * s.h * s.w);
    // Row-major [b,c,h,w] means each batch row is already contiguous.
    std::copy(u.data(), u.data() + u.size(), q.a.begin());
    return q;
}

GramFeature gram(const Tensor4& u) {
    const Shape4 s = u.shape();
    if (s.b < 1) throw std::runtime_error("gram: empty batch");
    const Mat q = flatten_q(u);
    std::vector<double> m;
    double norm;
    raw_gram(q, m, norm);
    if (norm == 0.0) throw std::runtime_error("degenerate Gram");

    GramFeature g;
    g.batch = s.b;
    g.source_shape = s;
    g.g.resize(m.size());
    for (std::size_t p = 0; p < m.size(); ++p) g.g[p] = m[p] / norm;
    return g;
}

double mpfd_loss(const PotentialTrace& teacher, const PotentialTrace& student,
                 const LayerPairing& pairing, int timesteps, bool skip_degenerate) {
    check_pairing(teacher, student, pairing, timesteps);
    double loss = 0.0;
    for (const LayerPair& p : pairing) {
        for (int t = 0; t < timesteps; ++t) {
            const Tensor4& ut = teacher[std::size_t(p.teacher_layer)][std::size_t(t)];
            const Tensor4& us = student[std::size_t(p.student_layer)][std::size_t(t)];
            if (ut.shape().b != us.shape().b) throw std::runtime_error("batch size mismatch");
            GramFeature gt, gs;
            try {
                gt = gram(ut);
                gs = gram(us);
            } catch (const std::runtime_error&) {
                if (skip_degenerate) continue;
                throw;
            }
            double d2 = 0.0;
            for (std::size_t q = 0; q < gt.g.size(); ++q) {
                const double d = gt.g[q] - gs.g[q];
                d2 += d * d;
            }
            loss += std::sqrt(d2);
        }
    }
    return loss;
}

PotentialTrace mpfd_grad(const PotentialTrace& teacher, const PotentialTrace& student,
                         const LayerPairing& pairing, int timesteps, bool skip_degenerate) {
    check_pairing(teacher, student, pairing, timesteps);

    PotentialTrace grad(student.size());
    for (std::size_t l = 0; l < student.size(); ++l) {
        grad[l].reserve(student[l].size());
        for (const Tensor4& u : student[l]) grad[l].emplace_back(u.shape());
    }

    for (const LayerPair& p : pairing) {
        for (int t = 0; t < timesteps; ++t) {
            const Tensor4& ut = teacher[std::size_t(p.teacher_layer)][std::size_t(t)];
            const Tensor4& us = student[std::size_t(p.student_layer)][std::size_t(t)];
            if (ut.shape().b != us.shape().b) throw std::runtime_error("batch size mismatch");

            GramFeature gt;
            try {
                gt = gram(ut);
            } catch (const std::runtime_error&) {
                if (skip_degenerate) continue;
                throw;
            }
            const Mat q = flatten_q(us);
            std::vector<double> m;
            double norm;
            raw_gram(q, m, norm);
            if (norm == 0.0) {
                if (skip_degenerate) continue;
                throw std::runtime_error("degenerate Gram");
            }

            const std::size_t b = q.rows, n = q.cols;
            std::vector<double> g(m.size());
            for (std::size_t i = 0; i < m.size(); ++i) g[i] = m[i] / norm;

            // d = g_stu - g_tea; loss term is its Frobenius norm.
            std::vector<double> d(g.size());
            double d2 = 0.0;
            for (std::size_t i = 0; i < g.size(); ++i) {
                d[i] = g[i] - gt.g[i];
                d2 += d[i] * d[i];
            }
            const double dn = std::sqrt(d2);
            if (dn == 0.0) continue;  // exact minimum, zero gradient

            // Chain: dL/dG = d/dn; dL/dM = (P - <P,G>G)/norm; dL/dQ = 2*S*Q.
            std::vector<double> s(g.size());
            double pg = 0.0;
            for (std::size_t i = 0; i < g.size(); ++i) pg += (d[i] / dn) * g[i];
            for (std::size_t i = 0; i < g.size(); ++i) s[i] = (d[i] / dn - pg * g[i]) / norm;

            Tensor4& out = grad[std::size_t(p.student_layer)][std::size_t(t)];
            double* gq = out.data();
#pragma omp parallel for num_threads(max_threads()) schedule(static)
            for (std::ptrdiff_t i = 0; i < std::ptrdiff_t(b); ++i) {
                for (std::size_t k = 0; k < n; ++k) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < b; ++j)
                        acc += s[std::size_t(i) * b + j] * q.a[j * n + k];
                    gq[std::size_t(i) * n + k] += 2.0 * acc;
                }
            }
        }
    }
    return grad;
}

}  // namespace s2nn
