#include "s2nn/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "s2nn/parallel.hpp"
#include "s2nn/rng.hpp"

namespace s2nn {

namespace {

constexpr double kBnEps = 1e-5;

Tensor4 conv_forward(const Tensor4& x, const DenseConvWeights& w) {
    const Shape4 in = x.shape();
    const int pad = w.k_h / 2;
    Tensor4 out(Shape4{in.b, w.c_out, in.h, in.w});
    const std::ptrdiff_t jobs = std::ptrdiff_t(in.b) * w.c_out;
#pragma omp parallel for num_threads(max_threads()) schedule(static)
    for (std::ptrdiff_t job = 0; job < jobs; ++job) {
        const int b = int(job / w.c_out);
        const int o = int(job % w.c_out);
        for (int y = 0; y < in.h; ++y)
            for (int x2 = 0; x2 < in.w; ++x2) {
                double acc = 0.0;
                for (int i = 0; i < w.c_in; ++i)
                    for (int ky = 0; ky < w.k_h; ++ky) {
                        const int sy = y + ky - pad;
                        if (sy < 0 || sy >= in.h) continue;
                        for (int kx = 0; kx < w.k_w; ++kx) {
                            const int sx = x2 + kx - pad;
                            if (sx < 0 || sx >= in.w) continue;
                            acc += w.data[((std::size_t(o) * w.c_in + i) * w.k_h + ky) * w.k_w +
                                          kx] *
                                   x.at(b, i, sy, sx);
                        }
                    }
                out.at(b, o, y, x2) = acc;
            }
    }
    return out;
}

void conv_backward_weights(const Tensor4& x, const Tensor4& ddrive, const DenseConvWeights& w,
                           std::vector<double>& dw) {
    const Shape4 in = x.shape();
    const int pad = w.k_h / 2;
#pragma omp parallel for num_threads(max_threads()) schedule(static)
    for (int o = 0; o < w.c_out; ++o)
        for (int i = 0; i < w.c_in; ++i)
            for (int ky = 0; ky < w.k_h; ++ky)
                for (int kx = 0; kx < w.k_w; ++kx) {
                    double acc = 0.0;
                    for (int b = 0; b < in.b; ++b)
                        for (int y = 0; y < in.h; ++y) {
                            const int sy = y + ky - pad;
                            if (sy < 0 || sy >= in.h) continue;
                            for (int x2 = 0; x2 < in.w; ++x2) {
                                const int sx = x2 + kx - pad;
                                if (sx < 0 || sx >= in.w) continue;
                                acc += ddrive.at(b, o, y, x2) * x.at(b, i, sy, sx);
                            }
                        }
                    dw[((std::size_t(o) * w.c_in + i) * w.k_h + ky) * w.k_w + kx] += acc;
                }
}

Tensor4 conv_backward_input(const Tensor4& ddrive, const DenseConvWeights& w, Shape4 in_shape) {
    const int pad = w.k_h / 2;
    Tensor4 dx(in_shape);
    const std::ptrdiff_t jobs = std::ptrdiff_t(in_shape.b) * w.c_in;
#pragma omp parallel for num_threads(max_threads()) schedule(static)
    for (std::ptrdiff_t job = 0; job < jobs; ++job) {
        const int b = int(job / w.c_in);
        const int i = int(job % w.c_in);
        for (int sy = 0; sy < in_shape.h; ++sy)
            for (int sx = 0; sx < in_shape.w; ++sx) {
                double acc = 0.0;
                for (int o = 0; o < w.c_out; ++o)
                    for (int ky = 0; ky < w.k_h; ++ky) {
                        const int y = sy - ky + pad;
                        if (y < 0 || y >= in_shape.h) continue;
                        for (int kx = 0; kx < w.k_w; ++kx) {
                            const int x2 = sx - kx + pad;
                            if (x2 < 0 || x2 >= in_shape.w) continue;
                            acc += ddrive.at(b, o, y, x2) *
                                   w.data[((std::size_t(o) * w.c_in + i) * w.k_h + ky) * w.k_w +
                                          kx];
                        }
                    }
                dx.at(b, i, sy, sx) = acc;
            }
    }
    return dx;
}

struct BnStats {
    std::vector<double> mean, inv_std;  // per channel
};

// Per-channel standardize over (batch, h, w) with a learned affine.
BnStats bn_forward(const Tensor4& x, const std::vector<double>& gamma,
                   const std::vector<double>& beta, Tensor4& out) {
    const Shape4 s = x.shape();
    const double n = double(s.b) * s.h * s.w;
    BnStats st;
    st.mean.assign(std::size_t(s.c), 0.0);
    st.inv_std.assign(std::size_t(s.c), 0.0);
    out = Tensor4(s);
#pragma omp parallel for num_threads(max_threads()) schedule(static)
    for (int c = 0; c < s.c; ++c) {
        double sum = 0.0;
        for (int b = 0; b < s.b; ++b)
            for (int y = 0; y < s.h; ++y)
                for (int x2 = 0; x2 < s.w; ++x2) sum += x.at(b, c, y, x2);
        const double mean = sum / n;
        double var = 0.0;
        for (int b = 0; b < s.b; ++b)
            for (int y = 0; y < s.h; ++y)
                for (int x2 = 0; x2 < s.w; ++x2) {
                    const double d = x.at(b, c, y, x2) - mean;
                    var += d * d;
                }
        var /= n;
        const double inv_std = 1.0 / std::sqrt(var + kBnEps);
        st.mean[std::size_t(c)] = mean;
        st.inv_std[std::size_t(c)] = inv_std;
        for (int b = 0; b < s.b; ++b)
            for (int y = 0; y < s.h; ++y)
                for (int x2 = 0; x2 < s.w; ++x2)
                    out.at(b, c, y, x2) =
                        gamma[std::size_t(c)] * (x.at(b, c, y, x2) - mean) * inv_std +
                        beta[std::size_t(c)];
    }
    return st;
}

void bn_backward(const Tensor4& x, const BnStats& st, const std::vector<double>& gamma,
                 const Tensor4& dout, Tensor4& dx, std::vector<double>& dgamma,
                 std::vector<double>& dbeta) {
    const Shape4 s = x.shape();
    const double n = double(s.b) * s.h * s.w;
    dx = Tensor4(s);
#pragma omp parallel for num_threads(max_threads()) schedule(static)
    for (int c = 0; c < s.c; ++c) {
        const double mean = st.mean[std::size_t(c)];
        const double inv_std = st.inv_std[std::size_t(c)];
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (int b = 0; b < s.b; ++b)
            for (int y = 0; y < s.h; ++y)
                for (int x2 = 0; x2 < s.w; ++x2) {
                    const double dy = dout.at(b, c, y, x2);
                    const double xhat = (x.at(b, c, y, x2) - mean) * inv_std;
                    sum_dy += dy;
                    sum_dy_xhat += dy * xhat;
                }
        dgamma[std::size_t(c)] += sum_dy_xhat;
        dbeta[std::size_t(c)] += sum_dy;
        const double g = gamma[std::size_t(c)];
        for (int b = 0; b < s.b; ++b)
            for (int y = 0; y < s.h; ++y)
                for (int x2 = 0; x2 < s.w; ++x2) {
                    const double dy = dout.at(b, c, y, x2);
                    const double xhat = (x.at(b, c, y, x2) - mean) * inv_std;
                    dx.at(b, c, y, x2) =
                        g * inv_std * (dy - sum_dy / n - xhat * sum_dy_xhat / n);
                }
    }
}

LayerPairing default_pairing(std::size_t teacher_layers, std::size_t student_layers) {
    LayerPairing p;
    const std::size_t n = std::min(teacher_layers, student_layers);
    for (std::size_t l = 0; l < n; ++l) p.push_back({int(l), int(l)});
    return p;
}

}  // namespace

struct TrainerCache {
    std::vector<LayerQuant> quant;
    // Indexed [layer][timestep].
    std::vector<std::vector<Tensor4>> x, drive, bn_out, u_pre, spikes, u_post;
    std::vector<std::vector<BnStats>> bn;
    std::vector<std::vector<double>> logits_t;  // [t], batch*classes
    std::vector<double> logits;                 // batch*classes, time mean
    PotentialTrace teacher_potentials;
    int batch = 0;
};

SpikeDataset make_synthetic_dataset(int samples, int h, int w, int timesteps,
                                    std::uint64_t seed) {
    Rng rng(seed);
    SpikeDataset data;
    for (int s = 0; s < samples; ++s) {
        const int label = s % 2;
        const double jitter = rng.uniform(-0.04, 0.04);
        std::vector<double> rate(std::size_t(h) * w, 0.0);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                // Class 0 lights every third column, class 1 every third row.
                const bool on = label == 0 ? (x % 3 == 1) : (y % 3 == 1);
                rate[std::size_t(y) * w + x] =
                    std::clamp(on ? 0.9 + jitter : 0.05 + jitter, 0.0, 1.0);
            }
        std::vector<SpikeTensor> steps;
        for (int t = 0; t < timesteps; ++t) {
            SpikeTensor st(Shape4{1, 1, h, w});
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x)
                    st.set(0, 0, y, x, rng.bernoulli(rate[std::size_t(y) * w + x]));
            steps.push_back(std::move(st));
        }
        data.inputs.push_back(std::move(steps));
        data.labels.push_back(label);
    }
    return data;
}

std::vector<Tensor4> batch_inputs(const SpikeDataset& data, const std::vector<int>& indices) {
    if (indices.empty()) throw std::runtime_error("empty batch");
    const Shape4 s = data.inputs[std::size_t(indices[0])][0].shape();
    const int timesteps = int(data.inputs[std::size_t(indices[0])].size());
    std::vector<Tensor4> xs;
    for (int t = 0; t < timesteps; ++t) {
        Tensor4 x(Shape4{int(indices.size()), s.c, s.h, s.w});
        for (std::size_t b = 0; b < indices.size(); ++b) {
            const SpikeTensor& st = data.inputs[std::size_t(indices[b])][std::size_t(t)];
            for (int c = 0; c < s.c; ++c)
                for (int y = 0; y < s.h; ++y)
                    for (int x2 = 0; x2 < s.w; ++x2)
                        x.at(int(b), c, y, x2) = st.get(0, c, y, x2) ? 1.0 : 0.0;
        }
        xs.push_back(std::move(x));
    }
    return xs;
}

std::vector<int> batch_labels(const SpikeDataset& data, const std::vector<int>& indices) {
    std::vector<int> out;
    for (int i : indices) out.push_back(data.labels[std::size_t(i)]);
    return out;
}

ToyNet::ToyNet(const ToyNetSpec& spec, std::uint64_t seed) : spec_(spec) {
    if (spec.convs.empty()) throw std::runtime_error("need at least one conv layer");
    if (spec.classes < 2) throw std::runtime_error("need at least two classes");
    for (std::size_t l = 0; l < spec.convs.size(); ++l) {
        const ConvSpec& c = spec.convs[l];
        if (c.kernel <= 1 || c.kernel % 2 == 0)
            throw std::runtime_error("conv kernels must be odd with side > 1");
        if (l > 0 && c.in_ch != spec.convs[l - 1].out_ch)
            throw std::runtime_error("conv channel chain mismatch");
    }

    Rng rng(seed);
    for (const ConvSpec& c : spec.convs) {
        ConvLayer layer;
        layer.codebook = sample_codebook(c.kernel, c.kernel, c.index_bits, rng.next());
        layer.w.c_out = c.out_ch;
        layer.w.c_in = c.in_ch;
        layer.w.k_h = layer.w.k_w = c.kernel;
        layer.w.data.resize(layer.w.kernel_count() * layer.w.kernel_len());
        const double stddev = std::sqrt(2.0 / (double(c.in_ch) * c.kernel * c.kernel));
        for (double& v : layer.w.data) v = rng.normal(0.0, stddev);
        layer.bn_gamma.assign(std::size_t(c.out_ch), 1.0);
        layer.bn_beta.assign(std::size_t(c.out_ch), 0.0);
        convs_.push_back(std::move(layer));
    }
    const std::size_t fc_in = spec.fc_in();
    fc_w_.resize(std::size_t(spec.classes) * fc_in);
    const double fc_std = 1.0 / std::sqrt(double(fc_in));
    for (double& v : fc_w_) v = rng.normal(0.0, fc_std);
    fc_b_.assign(std::size_t(spec.classes), 0.0);
}

ToyNet::~ToyNet() = default;
ToyNet::ToyNet(const ToyNet&) = default;
ToyNet& ToyNet::operator=(const ToyNet&) = default;
ToyNet::ToyNet(ToyNet&&) noexcept = default;
ToyNet& ToyNet::operator=(ToyNet&&) noexcept = default;

std::vector<LayerQuant> ToyNet::quantize(QuantMode mode, double fence_gamma) const {
    std::vector<LayerQuant> out(convs_.size());
    for (std::size_t l = 0; l < convs_.size(); ++l) {
        const ConvLayer& layer = convs_[l];
        LayerQuant& q = out[l];
        q.w_eff = layer.w;  // shape template; data overwritten below for quant modes

        if (mode == QuantMode::full_precision) {
            q.alpha.assign(std::size_t(layer.w.c_out), 1.0);
            continue;
        }

        const BinaryConvWeights bin = sign_binarize(layer.w);
        q.alpha = bin.alpha;
        const std::size_t kernels = layer.w.kernel_count();
        const int len = int(layer.w.kernel_len());
        q.assignments.resize(kernels);
        q.w_b.resize(kernels * std::size_t(len));
        q.scaled.resize(kernels * std::size_t(len));
        q.reports.resize(kernels);

#pragma omp parallel for num_threads(max_threads()) schedule(static)
        for (std::ptrdiff_t k = 0; k < std::ptrdiff_t(kernels); ++k) {
            const double* kernel = layer.w.kernel(std::size_t(k));
            OutlierReport report;
            if (mode == QuantMode::osquant)
                report = outlier_report(kernel, layer.w.k_h, layer.w.k_w, fence_gamma,
                                        DegenerateOmega::keep_unscaled);
            const std::vector<double> scaled =
                scale_outliers(kernel, layer.w.k_h, layer.w.k_w, report);
            const QuantAssignment a = assign_baseline(scaled.data(), layer.codebook);
            q.assignments[std::size_t(k)] = std::uint32_t(a.slot);
            std::copy(scaled.begin(), scaled.end(), q.scaled.begin() + k * len);
            const double* cw = layer.codebook.codeword(a.slot);
            std::copy(cw, cw + len, q.w_b.begin() + k * len);
            q.reports[std::size_t(k)] = std::move(report);
        }

        for (std::size_t k = 0; k < kernels; ++k) {
            const int o = int(k / std::size_t(layer.w.c_in));
            for (int p = 0; p < len; ++p)
                q.w_eff.data[k * std::size_t(len) + p] =
                    q.alpha[std::size_t(o)] * q.w_b[k * std::size_t(len) + p];
        }
    }
    return out;
}

namespace {

struct RunArgs {
    const ToyNet* net;
    const std::vector<Tensor4>* xs;
    const std::vector<int>* labels;
    const std::vector<LayerQuant>* quant;
    const PotentialTrace* teacher_trace;  // null: no distillation terms
    double lambda = 0.0;
    const TrainerCache* base = nullptr;  // non-null: linearized replay
    bool* flip = nullptr;
};

ForwardResult run_forward(const RunArgs& a, TrainerCache& cache) {
    const ToyNet& net = *a.net;
    const ToyNetSpec& spec = net.spec();
    const int T = spec.timesteps;
    if (int(a.xs->size()) != T) throw std::runtime_error("input timestep count mismatch");
    const int B = (*a.xs)[0].shape().b;
    if (int(a.labels->size()) != B) throw std::runtime_error("label count mismatch");

    const std::size_t L = net.convs().size();
    cache.quant = *a.quant;
    cache.batch = B;
    cache.x.assign(L, {});
    cache.drive.assign(L, {});
    cache.bn.assign(L, {});
    cache.bn_out.assign(L, {});
    cache.u_pre.assign(L, {});
    cache.spikes.assign(L, {});
    cache.u_post.assign(L, {});

    for (std::size_t l = 0; l < L; ++l) {
        const ConvSpec& cs = spec.convs[l];
        const LifConfig& lif = cs.lif;
        const LayerQuant& q = cache.quant[l];
        for (int t = 0; t < T; ++t) {
            const Tensor4& input = l == 0 ? (*a.xs)[std::size_t(t)]
                                          : cache.spikes[l - 1][std::size_t(t)];
            cache.x[l].push_back(input);

            Tensor4 drive = conv_forward(input, q.w_eff);
            Tensor4 bn_out;
            cache.bn[l].push_back(
                bn_forward(drive, net.convs()[l].bn_gamma, net.convs()[l].bn_beta, bn_out));
            cache.drive[l].push_back(std::move(drive));

            const Shape4 shape = bn_out.shape();
            Tensor4 u_pre(shape), spikes(shape), u_post(shape);
            const Tensor4* u_prev = t > 0 ? &cache.u_post[l][std::size_t(t - 1)] : nullptr;
            const std::size_t n = shape.volume();
            for (std::size_t p = 0; p < n; ++p) {
                const double carried = u_prev ? lif.leak * u_prev->data()[p] : 0.0;
                const double v = carried + bn_out.data()[p];
                u_pre.data()[p] = v;
                double s;
                if (a.base == nullptr) {
                    s = v >= lif.threshold ? 1.0 : 0.0;
                } else {
                    // Straight-through replay: spike decisions frozen at the
                    // base point, first-order in the potential around it.
                    const double v0 = a.base->u_pre[l][std::size_t(t)].data()[p];
                    const double s0 = a.base->spikes[l][std::size_t(t)].data()[p];
                    if (a.flip && ((v >= lif.threshold ? 1.0 : 0.0) != s0)) *a.flip = true;
                    s = s0 + surrogate_grad_at(v0, lif) * (v - v0);
                }
                spikes.data()[p] = s;
                u_post.data()[p] = v * (1.0 - s);
            }
            cache.bn_out[l].push_back(std::move(bn_out));
            cache.u_pre[l].push_back(std::move(u_pre));
            cache.spikes[l].push_back(std::move(spikes));
            cache.u_post[l].push_back(std::move(u_post));
        }
    }

    // Readout: fully connected on the last layer's spikes, averaged over
    // timesteps.
    const std::size_t fc_in = spec.fc_in();
    const std::size_t classes = std::size_t(spec.classes);
    cache.logits_t.assign(std::size_t(T), std::vector<double>(std::size_t(B) * classes, 0.0));
    cache.logits.assign(std::size_t(B) * classes, 0.0);
    for (int t = 0; t < T; ++t) {
        const Tensor4& s_last = cache.spikes[L - 1][std::size_t(t)];
        for (int b = 0; b < B; ++b) {
            const double* row = s_last.data() + std::size_t(b) * fc_in;
            for (std::size_t k = 0; k < classes; ++k) {
                double acc = net.fc_b()[k];
                const double* wrow = net.fc_w().data() + k * fc_in;
                for (std::size_t j = 0; j < fc_in; ++j) acc += wrow[j] * row[j];
                cache.logits_t[std::size_t(t)][std::size_t(b) * classes + k] = acc;
                cache.logits[std::size_t(b) * classes + k] += acc / double(T);
            }
        }
    }

    ForwardResult r;
    r.logits = cache.logits;
    r.potentials = cache.u_pre;
    for (std::size_t l = 0; l < L; ++l) r.assignments.push_back(cache.quant[l].assignments);

    // Cross entropy on the time-mean logits.
    double ce = 0.0;
    for (int b = 0; b < B; ++b) {
        const double* z = cache.logits.data() + std::size_t(b) * classes;
        double zmax = z[0];
        int arg = 0;
        for (std::size_t k = 1; k < classes; ++k)
            if (z[k] > zmax) {
                zmax = z[k];
                arg = int(k);
            }
        double lse = 0.0;
        for (std::size_t k = 0; k < classes; ++k) lse += std::exp(z[k] - zmax);
        ce += std::log(lse) + zmax - z[std::size_t((*a.labels)[std::size_t(b)])];
        if (arg == (*a.labels)[std::size_t(b)]) ++r.correct;
    }
    r.ce = ce / double(B);

    if (a.teacher_trace) {
        cache.teacher_potentials = *a.teacher_trace;
        const LayerPairing pairing = default_pairing(a.teacher_trace->size(), L);
        r.mpfd = mpfd_loss(*a.teacher_trace, cache.u_pre, pairing, T, /*skip_degenerate=*/true);
    }
    r.loss = r.ce + a.lambda * r.mpfd;
    return r;
}

PotentialTrace teacher_trace(const ToyNet& teacher, const std::vector<Tensor4>& xs) {
    const std::vector<LayerQuant> quant =
        teacher.quantize(QuantMode::full_precision, 1.5);
    const std::vector<int> dummy_labels(std::size_t(xs[0].shape().b), 0);
    RunArgs args;
    args.net = &teacher;
    args.xs = &xs;
    args.labels = &dummy_labels;
    args.quant = &quant;
    TrainerCache cache;
    run_forward(args, cache);
    return cache.u_pre;
}

struct Adam {
    double lr;
    double b1 = 0.9, b2 = 0.999, eps = 1e-8;

    struct State {
        std::vector<double> m, v;
        long t = 0;
    };

    // In-place parameter update.
    void step(State& st, std::vector<double>& params, const std::vector<double>& grads) {
        std::vector<double> delta;
        step_delta(st, grads, delta);
        for (std::size_t p = 0; p < params.size(); ++p) params[p] -= delta[p];
    }

    // The additive step alone (the codebook applies it itself so it can
    // re-sign afterwards).
    void step_delta(State& st, const std::vector<double>& grads, std::vector<double>& delta) {
        if (st.m.empty()) {
            st.m.assign(grads.size(), 0.0);
            st.v.assign(grads.size(), 0.0);
        }
        ++st.t;
        const double c1 = 1.0 - std::pow(b1, double(st.t));
        const double c2 = 1.0 - std::pow(b2, double(st.t));
        delta.resize(grads.size());
        for (std::size_t p = 0; p < grads.size(); ++p) {
            st.m[p] = b1 * st.m[p] + (1.0 - b1) * grads[p];
            st.v[p] = b2 * st.v[p] + (1.0 - b2) * grads[p] * grads[p];
            const double mhat = st.m[p] / c1;
            const double vhat = st.v[p] / c2;
            delta[p] = lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
};

}  // namespace

ForwardResult ToyNet::forward_iteration(const std::vector<Tensor4>& xs,
                                        const std::vector<int>& labels, const ToyNet* teacher,
                                        const TrainConfig& cfg) const {
    const std::vector<LayerQuant> quant = quantize(cfg.mode, cfg.fence_gamma);
    PotentialTrace tt;
    if (teacher) tt = teacher_trace(*teacher, xs);
    RunArgs args;
    args.net = this;
    args.xs = &xs;
    args.labels = &labels;
    args.quant = &quant;
    args.teacher_trace = teacher ? &tt : nullptr;
    args.lambda = cfg.distill_weight;
    TrainerCache cache;
    return run_forward(args, cache);
}

ForwardResult ToyNet::compute_gradients(const std::vector<Tensor4>& xs,
                                        const std::vector<int>& labels, const ToyNet* teacher,
                                        const TrainConfig& cfg, Gradients& grads,
                                        std::shared_ptr<TrainerCache>* cache_out) const {
    auto cache = std::make_shared<TrainerCache>();
    const std::vector<LayerQuant> quant = quantize(cfg.mode, cfg.fence_gamma);
    PotentialTrace tt;
    if (teacher) tt = teacher_trace(*teacher, xs);

    RunArgs args;
    args.net = this;
    args.xs = &xs;
    args.labels = &labels;
    args.quant = &quant;
    args.teacher_trace = teacher ? &tt : nullptr;
    args.lambda = cfg.distill_weight;
    const ForwardResult result = run_forward(args, *cache);

    const ToyNetSpec& sp = spec_;
    const int T = sp.timesteps;
    const int B = cache->batch;
    const std::size_t L = convs_.size();
    const std::size_t classes = std::size_t(sp.classes);
    const std::size_t fc_in = sp.fc_in();

    grads.convs.assign(L, {});
    for (std::size_t l = 0; l < L; ++l) {
        grads.convs[l].w.assign(convs_[l].w.data.size(), 0.0);
        grads.convs[l].latents.assign(convs_[l].codebook.latents().size(), 0.0);
        grads.convs[l].bn_gamma.assign(convs_[l].bn_gamma.size(), 0.0);
        grads.convs[l].bn_beta.assign(convs_[l].bn_beta.size(), 0.0);
    }
    grads.fc_w.assign(fc_w_.size(), 0.0);
    grads.fc_b.assign(fc_b_.size(), 0.0);

    // Cross-entropy backward on the time-mean logits.
    std::vector<double> dlogits(std::size_t(B) * classes, 0.0);
    for (int b = 0; b < B; ++b) {
        const double* z = cache->logits.data() + std::size_t(b) * classes;
        double zmax = z[0];
        for (std::size_t k = 1; k < classes; ++k) zmax = std::max(zmax, z[k]);
        double lse = 0.0;
        for (std::size_t k = 0; k < classes; ++k) lse += std::exp(z[k] - zmax);
        for (std::size_t k = 0; k < classes; ++k) {
            const double softmax = std::exp(z[k] - zmax) / lse;
            const double onehot = int(k) == labels[std::size_t(b)] ? 1.0 : 0.0;
            dlogits[std::size_t(b) * classes + k] = (softmax - onehot) / double(B);
        }
    }

    // Per-layer, per-timestep gradient flowing into the spike outputs.
    std::vector<std::vector<Tensor4>> dspikes(L);
    for (std::size_t l = 0; l < L; ++l)
        for (int t = 0; t < T; ++t) dspikes[l].emplace_back(cache->spikes[l][std::size_t(t)].shape());

    // Readout backward, accumulated per timestep.
    for (int t = 0; t < T; ++t) {
        const Tensor4& s_last = cache->spikes[L - 1][std::size_t(t)];
        Tensor4& ds_last = dspikes[L - 1][std::size_t(t)];
        for (int b = 0; b < B; ++b) {
            const double* row = s_last.data() + std::size_t(b) * fc_in;
            double* drow = ds_last.data() + std::size_t(b) * fc_in;
            for (std::size_t k = 0; k < classes; ++k) {
                const double d = dlogits[std::size_t(b) * classes + k] / double(T);
                grads.fc_b[k] += d;
                const double* wrow = fc_w_.data() + k * fc_in;
                double* gwrow = grads.fc_w.data() + k * fc_in;
                for (std::size_t j = 0; j < fc_in; ++j) {
                    gwrow[j] += d * row[j];
                    drow[j] += d * wrow[j];
                }
            }
        }
    }

    // Distillation gradient straight into the recorded potentials.
    PotentialTrace mpfd_g;
    const bool distill = teacher && cfg.distill_weight != 0.0;
    if (distill) {
        const LayerPairing pairing = default_pairing(tt.size(), L);
        mpfd_g = mpfd_grad(tt, cache->u_pre, pairing, T, /*skip_degenerate=*/true);
    }

    // Reverse through the conv stack, each layer backward through time.
    std::vector<DenseConvWeights> dw_eff(L);
    for (std::size_t l = 0; l < L; ++l) {
        dw_eff[l] = cache->quant[l].w_eff;
        std::fill(dw_eff[l].data.begin(), dw_eff[l].data.end(), 0.0);
    }

    for (std::size_t l = L; l-- > 0;) {
        const ConvSpec& cs = sp.convs[l];
        const LifConfig& lif = cs.lif;
        Tensor4 du_carry(cache->u_post[l][0].shape());  // d/d u_post[t], from t+1
        for (int t = T - 1; t >= 0; --t) {
            const Tensor4& u_pre = cache->u_pre[l][std::size_t(t)];
            const Tensor4& spikes = cache->spikes[l][std::size_t(t)];
            Tensor4 du_pre(u_pre.shape());
            const std::size_t n = u_pre.size();
            for (std::size_t p = 0; p < n; ++p) {
                const double g = surrogate_grad_at(u_pre.data()[p], lif);
                const double s = spikes.data()[p];
                double d = dspikes[l][std::size_t(t)].data()[p] * g +
                           du_carry.data()[p] * ((1.0 - s) - u_pre.data()[p] * g);
                if (distill && l < mpfd_g.size())
                    d += cfg.distill_weight * mpfd_g[l][std::size_t(t)].data()[p];
                du_pre.data()[p] = d;
            }

            Tensor4 ddrive;
            bn_backward(cache->drive[l][std::size_t(t)], cache->bn[l][std::size_t(t)],
                        convs_[l].bn_gamma, du_pre, ddrive, grads.convs[l].bn_gamma,
                        grads.convs[l].bn_beta);

            conv_backward_weights(cache->x[l][std::size_t(t)], ddrive, cache->quant[l].w_eff,
                                  dw_eff[l].data);
            if (l > 0) {
                Tensor4 dx = conv_backward_input(ddrive, cache->quant[l].w_eff,
                                                 cache->x[l][std::size_t(t)].shape());
                Tensor4& sink = dspikes[l - 1][std::size_t(t)];
                for (std::size_t p = 0; p < dx.size(); ++p) sink.data()[p] += dx.data()[p];
            }

            for (std::size_t p = 0; p < n; ++p)
                du_carry.data()[p] = lif.leak * du_pre.data()[p];
        }
    }

    // Straight-through mapping onto dense weights and codebook latents.
    for (std::size_t l = 0; l < L; ++l) {
        const LayerQuant& q = cache->quant[l];
        const DenseConvWeights& w = convs_[l].w;
        const int len = int(w.kernel_len());
        if (cfg.mode == QuantMode::full_precision) {
            grads.convs[l].w = dw_eff[l].data;
            continue;
        }
        for (std::size_t k = 0; k < w.kernel_count(); ++k) {
            const int o = int(k / std::size_t(w.c_in));
            std::vector<double> db(static_cast<std::size_t>(len));
            for (int p = 0; p < len; ++p)
                db[std::size_t(p)] =
                    q.alpha[std::size_t(o)] * dw_eff[l].data[k * std::size_t(len) + p];

            std::vector<double> dwk = ste_backward(db, q.w_b.data() + k * std::size_t(len), len);
            if (cfg.mode == QuantMode::osquant)
                dwk = scale_backward(dwk, w.k_h, w.k_w, q.reports[k]);
            for (int p = 0; p < len; ++p)
                grads.convs[l].w[k * std::size_t(len) + p] += dwk[std::size_t(p)];

            // The latent of the chosen codeword collects the plain STE
            // gradient of every kernel assigned to it.
            const std::size_t slot = q.assignments[k];
            for (int p = 0; p < len; ++p)
                grads.convs[l].latents[slot * std::size_t(len) + p] += db[std::size_t(p)];
        }
    }

    if (cache_out) *cache_out = std::move(cache);
    return result;
}

double ToyNet::linearized_loss(const std::vector<Tensor4>& xs, const std::vector<int>& labels,
                               const ToyNet* teacher, const TrainConfig& cfg,
                               const TrainerCache& base, bool* decision_flip) const {
    if (decision_flip) *decision_flip = false;

    // Effective weights re-linearized around the frozen base quantization.
    std::vector<LayerQuant> quant = base.quant;
    for (std::size_t l = 0; l < convs_.size(); ++l) {
        LayerQuant& q = quant[l];
        const DenseConvWeights& w = convs_[l].w;
        if (cfg.mode == QuantMode::full_precision) {
            q.w_eff = w;
            continue;
        }
        const int len = int(w.kernel_len());
        for (std::size_t k = 0; k < w.kernel_count(); ++k) {
            const int o = int(k / std::size_t(w.c_in));
            const std::vector<double> scaled_now =
                scale_outliers(w.kernel(k), w.k_h, w.k_w, q.reports[k]);
            for (int p = 0; p < len; ++p) {
                const double delta =
                    scaled_now[std::size_t(p)] - q.scaled[k * std::size_t(len) + p];
                q.w_eff.data[k * std::size_t(len) + p] =
                    q.alpha[std::size_t(o)] * (q.w_b[k * std::size_t(len) + p] + delta);
            }
        }
        if (decision_flip) {
            const std::vector<LayerQuant> now = quantize(cfg.mode, cfg.fence_gamma);
            if (now[l].assignments != q.assignments) *decision_flip = true;
        }
    }

    PotentialTrace tt;
    if (teacher) tt = teacher_trace(*teacher, xs);
    RunArgs args;
    args.net = this;
    args.xs = &xs;
    args.labels = &labels;
    args.quant = &quant;
    args.teacher_trace = teacher ? &tt : nullptr;
    args.lambda = cfg.distill_weight;
    args.base = &base;
    args.flip = decision_flip;
    TrainerCache scratch;
    return run_forward(args, scratch).loss;
}

PackedModel ToyNet::export_packed(QuantMode mode, double fence_gamma) const {
    const std::vector<LayerQuant> quant =
        quantize(mode == QuantMode::full_precision ? QuantMode::baseline : mode, fence_gamma);
    PackedModel m;
    for (std::size_t l = 0; l < convs_.size(); ++l) {
        QuantizedLayer q;
        q.c_out = convs_[l].w.c_out;
        q.c_in = convs_[l].w.c_in;
        q.k_h = convs_[l].w.k_h;
        q.k_w = convs_[l].w.k_w;
        q.index_bits = convs_[l].codebook.index_bits();
        q.codebook = convs_[l].codebook;
        q.indices = quant[l].assignments;
        q.alpha = quant[l].alpha;
        m.layers.push_back(std::move(q));
    }
    return m;
}

std::vector<NamedTensor> ToyNet::to_checkpoint() const {
    std::vector<NamedTensor> out;
    NamedTensor spec;
    spec.name = "spec";
    spec.dims = {std::uint32_t(5 + 4 * convs_.size())};
    spec.data = {double(convs_.size()), double(spec_.classes), double(spec_.timesteps),
                 double(spec_.input_h), double(spec_.input_w)};
    for (const ConvSpec& c : spec_.convs) {
        spec.data.push_back(double(c.in_ch));
        spec.data.push_back(double(c.out_ch));
        spec.data.push_back(double(c.kernel));
        spec.data.push_back(double(c.index_bits));
    }
    out.push_back(std::move(spec));

    for (std::size_t l = 0; l < convs_.size(); ++l) {
        const std::string prefix = "conv" + std::to_string(l) + ".";
        const ConvLayer& layer = convs_[l];
        const ConvSpec& cs = spec_.convs[l];
        out.push_back({prefix + "lif", {3},
                       {cs.lif.leak, cs.lif.threshold, cs.lif.surrogate_width}});
        out.push_back({prefix + "w",
                       {std::uint32_t(layer.w.c_out), std::uint32_t(layer.w.c_in),
                        std::uint32_t(layer.w.k_h), std::uint32_t(layer.w.k_w)},
                       layer.w.data});
        NamedTensor ids;
        ids.name = prefix + "codebook_ids";
        ids.dims = {std::uint32_t(layer.codebook.size())};
        for (int s = 0; s < layer.codebook.size(); ++s)
            ids.data.push_back(double(layer.codebook.id(s)));
        out.push_back(std::move(ids));
        out.push_back({prefix + "latents",
                       {std::uint32_t(layer.codebook.size()),
                        std::uint32_t(layer.codebook.kernel_len())},
                       layer.codebook.latents()});
        out.push_back({prefix + "bn_gamma", {std::uint32_t(layer.bn_gamma.size())},
                       layer.bn_gamma});
        out.push_back({prefix + "bn_beta", {std::uint32_t(layer.bn_beta.size())},
                       layer.bn_beta});
    }
    out.push_back({"fc.w", {std::uint32_t(spec_.classes), std::uint32_t(spec_.fc_in())},
                   fc_w_});
    out.push_back({"fc.b", {std::uint32_t(spec_.classes)}, fc_b_});
    return out;
}

ToyNet ToyNet::from_checkpoint(const std::vector<NamedTensor>& tensors) {
    auto find = [&](const std::string& name) -> const NamedTensor& {
        for (const NamedTensor& t : tensors)
            if (t.name == name) return t;
        throw std::runtime_error("checkpoint missing tensor: " + name);
    };

    const NamedTensor& spec_t = find("spec");
    if (spec_t.data.size() < 5) throw std::runtime_error("malformed spec tensor");
    ToyNetSpec spec;
    const std::size_t n_convs = std::size_t(spec_t.data[0]);
    spec.classes = int(spec_t.data[1]);
    spec.timesteps = int(spec_t.data[2]);
    spec.input_h = int(spec_t.data[3]);
    spec.input_w = int(spec_t.data[4]);
    for (std::size_t l = 0; l < n_convs; ++l) {
        ConvSpec c;
        c.in_ch = int(spec_t.data[5 + 4 * l]);
        c.out_ch = int(spec_t.data[6 + 4 * l]);
        c.kernel = int(spec_t.data[7 + 4 * l]);
        c.index_bits = int(spec_t.data[8 + 4 * l]);
        const NamedTensor& lif = find("conv" + std::to_string(l) + ".lif");
        c.lif.leak = lif.data[0];
        c.lif.threshold = lif.data[1];
        c.lif.surrogate_width = lif.data[2];
        spec.convs.push_back(c);
    }

    ToyNet net(spec, 0);
    for (std::size_t l = 0; l < n_convs; ++l) {
        const std::string prefix = "conv" + std::to_string(l) + ".";
        ConvLayer& layer = net.convs_[l];
        layer.w.data = find(prefix + "w").data;
        if (layer.w.data.size() != layer.w.kernel_count() * layer.w.kernel_len())
            throw std::runtime_error("checkpoint weight size mismatch");
        const NamedTensor& ids_t = find(prefix + "codebook_ids");
        std::vector<std::uint64_t> ids;
        for (double v : ids_t.data) ids.push_back(std::uint64_t(v));
        layer.codebook = CompactCodebook(layer.w.k_w, layer.w.k_h,
                                         spec.convs[l].index_bits, std::move(ids), 0);
        layer.codebook.set_latents(find(prefix + "latents").data);
        layer.bn_gamma = find(prefix + "bn_gamma").data;
        layer.bn_beta = find(prefix + "bn_beta").data;
    }
    net.fc_w_ = find("fc.w").data;
    net.fc_b_ = find("fc.b").data;
    if (net.fc_w_.size() != std::size_t(spec.classes) * spec.fc_in())
        throw std::runtime_error("checkpoint fc size mismatch");
    return net;
}

namespace {

bool spec_matches(const ToyNetSpec& a, const ToyNetSpec& b) {
    if (a.convs.size() != b.convs.size() || a.classes != b.classes ||
        a.timesteps != b.timesteps || a.input_h != b.input_h || a.input_w != b.input_w)
        return false;
    for (std::size_t l = 0; l < a.convs.size(); ++l) {
        const ConvSpec& x = a.convs[l];
        const ConvSpec& y = b.convs[l];
        if (x.in_ch != y.in_ch || x.out_ch != y.out_ch || x.kernel != y.kernel ||
            x.index_bits != y.index_bits || x.lif.leak != y.lif.leak ||
            x.lif.threshold != y.lif.threshold ||
            x.lif.surrogate_width != y.lif.surrogate_width)
            return false;
    }
    return true;
}

}  // namespace

TrainResult train_toy(const ToyNetSpec& spec, const TrainConfig& cfg, const SpikeDataset& data,
                      const ToyNet* teacher, const ToyNet* init) {
    if (data.inputs.empty()) throw std::runtime_error("empty dataset");
    if (init && !spec_matches(init->spec(), spec))
        throw std::runtime_error("resume checkpoint does not match the net spec");
    ToyNet net = init ? *init : ToyNet(spec, cfg.seed);

    Adam adam{cfg.lr};
    const std::size_t L = net.convs().size();
    std::vector<Adam::State> st_w(L), st_lat(L), st_gamma(L), st_beta(L);
    Adam::State st_fcw, st_fcb;

    Rng shuffle_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    std::vector<int> order(data.inputs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = int(i);

    TrainResult result;
    result.metrics_csv = "epoch,loss,ce,mpfd,acc,outlier_frac\n";

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[std::size_t(shuffle_rng.below(i))]);

        double sum_loss = 0, sum_ce = 0, sum_mpfd = 0;
        int correct = 0;
        for (std::size_t start = 0; start < order.size(); start += std::size_t(cfg.batch_size)) {
            const std::size_t end =
                std::min(order.size(), start + std::size_t(cfg.batch_size));
            const std::vector<int> idx(order.begin() + std::ptrdiff_t(start),
                                       order.begin() + std::ptrdiff_t(end));
            const std::vector<Tensor4> xs = batch_inputs(data, idx);
            const std::vector<int> ys = batch_labels(data, idx);

            Gradients grads;
            const ForwardResult r = net.compute_gradients(xs, ys, teacher, cfg, grads);
            if (!std::isfinite(r.loss))
                throw std::runtime_error("training diverged: loss is not finite at epoch " +
                                         std::to_string(epoch));
            const double bsz = double(idx.size());
            sum_loss += r.loss * bsz;
            sum_ce += r.ce * bsz;
            sum_mpfd += r.mpfd * bsz;
            correct += r.correct;

            for (std::size_t l = 0; l < L; ++l) {
                ToyNet::ConvLayer& layer = net.convs()[l];
                adam.step(st_w[l], layer.w.data, grads.convs[l].w);
                if (cfg.mode != QuantMode::full_precision) {
                    std::vector<double> delta;
                    adam.step_delta(st_lat[l], grads.convs[l].latents, delta);
                    layer.codebook.update_latents(delta, 1.0);
                }
                adam.step(st_gamma[l], layer.bn_gamma, grads.convs[l].bn_gamma);
                adam.step(st_beta[l], layer.bn_beta, grads.convs[l].bn_beta);
            }
            adam.step(st_fcw, net.fc_w(), grads.fc_w);
            adam.step(st_fcb, net.fc_b(), grads.fc_b);
        }

        EpochMetrics m;
        m.epoch = epoch;
        const double n = double(order.size());
        m.loss = sum_loss / n;
        m.ce = sum_ce / n;
        m.mpfd = sum_mpfd / n;
        m.acc = double(correct) / n;
        // Fraction reported under the gamma the quantizer actually applies;
        // 0 when outlier handling is off.
        if (cfg.mode == QuantMode::osquant && std::isfinite(cfg.fence_gamma)) {
            double frac = 0.0;
            for (const ToyNet::ConvLayer& layer : net.convs())
                frac += outlier_occurrence(layer.w, cfg.fence_gamma);
            m.outlier_frac = frac / double(L);
        }
        result.metrics.push_back(m);
        char line[200];
        std::snprintf(line, sizeof(line), "%d,%.17g,%.17g,%.17g,%.17g,%.17g\n", m.epoch, m.loss,
                      m.ce, m.mpfd, m.acc, m.outlier_frac);
        result.metrics_csv += line;

        if (m.acc >= cfg.early_stop_acc) break;
    }

    result.packed = net.export_packed(cfg.mode, cfg.fence_gamma);
    result.checkpoint = net.to_checkpoint();
    return result;
}

}  // namespace s2nn
