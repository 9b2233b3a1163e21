#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "s2nn/codebook.hpp"
#include "s2nn/distill.hpp"
#include "s2nn/io.hpp"
#include "s2nn/neuron.hpp"
#include "s2nn/osquant.hpp"
#include "s2nn/pack.hpp"
#include "s2nn/tensor.hpp"

namespace s2nn {

enum class QuantMode { osquant, baseline, full_precision };

struct ConvSpec {
    int in_ch = 0, out_ch = 0, kernel = 3;
    int index_bits = 4;
    LifConfig lif;
};

struct ToyNetSpec {
    std::vector<ConvSpec> convs;  // at least one sub-bit conv layer
    int classes = 2;
    int timesteps = 4;
    int input_h = 8, input_w = 8;

    std::size_t fc_in() const {
        return std::size_t(convs.back().out_ch) * input_h * input_w;
    }
};

struct TrainConfig {
    QuantMode mode = QuantMode::osquant;
    double fence_gamma = 1.5;     // non-finite disables outlier handling entirely
    double distill_weight = 1.0;  // weight on the Gram loss when a teacher is present
    double lr = 5e-4;
    int epochs = 200;
    int batch_size = 50;
    std::uint64_t seed = 1;
    double early_stop_acc = 2.0;  // > 1 never triggers
};

struct SpikeDataset {
    std::vector<std::vector<SpikeTensor>> inputs;  // [sample][t], each (1,1,h,w)
    std::vector<int> labels;
};

// Rate-coded two-class bar patterns (vertical vs horizontal), Bernoulli per
// pixel per timestep, fully determined by the seed.
SpikeDataset make_synthetic_dataset(int samples, int h, int w, int timesteps,
                                    std::uint64_t seed);

// Assembles dataset samples into per-timestep batch tensors (B,1,h,w) of
// 0/1 reals.
std::vector<Tensor4> batch_inputs(const SpikeDataset& data, const std::vector<int>& indices);
std::vector<int> batch_labels(const SpikeDataset& data, const std::vector<int>& indices);

// Current quantization of one conv layer: the per-kernel codeword choices
// plus everything the backward pass needs to route gradients through them.
struct LayerQuant {
    std::vector<std::uint32_t> assignments;  // c_out*c_in codebook slots
    std::vector<double> w_b;                 // ±1 values, dense layout
    std::vector<double> alpha;               // c_out channel scales
    std::vector<OutlierReport> reports;      // per kernel; empty rows when none
    std::vector<double> scaled;              // outlier-scaled kernels (dense layout)
    DenseConvWeights w_eff;                  // what the conv actually runs with
};

struct ForwardResult {
    std::vector<double> logits;  // batch*classes, mean over timesteps
    PotentialTrace potentials;   // recorded pre-reset potentials [conv layer][t]
    std::vector<std::vector<std::uint32_t>> assignments;  // per conv layer
    double ce = 0, mpfd = 0, loss = 0;
    int correct = 0;
};

struct Gradients {
    struct Layer {
        std::vector<double> w;        // dense weight gradient
        std::vector<double> latents;  // codebook latent gradient
        std::vector<double> bn_gamma, bn_beta;
    };
    std::vector<Layer> convs;
    std::vector<double> fc_w, fc_b;
};

struct TrainerCache;  // forward/backward intermediates, opaque here

// Toy spiking convnet: sub-bit quantized conv stages with per-channel batch
// norm and LIF dynamics, followed by a real-valued fully connected readout
// averaged over timesteps.
class ToyNet {
public:
    ToyNet(const ToyNetSpec& spec, std::uint64_t seed);
    ~ToyNet();
    ToyNet(const ToyNet&);
    ToyNet& operator=(const ToyNet&);
    ToyNet(ToyNet&&) noexcept;
    ToyNet& operator=(ToyNet&&) noexcept;

    const ToyNetSpec& spec() const { return spec_; }

    struct ConvLayer {
        DenseConvWeights w;
        CompactCodebook codebook;
        std::vector<double> bn_gamma, bn_beta;
    };
    std::vector<ConvLayer>& convs() { return convs_; }
    const std::vector<ConvLayer>& convs() const { return convs_; }
    std::vector<double>& fc_w() { return fc_w_; }
    std::vector<double>& fc_b() { return fc_b_; }
    const std::vector<double>& fc_w() const { return fc_w_; }
    const std::vector<double>& fc_b() const { return fc_b_; }

    // Quantizes every conv layer from the current dense weights.
    std::vector<LayerQuant> quantize(QuantMode mode, double fence_gamma) const;

    // One recorded forward pass over a batch. xs is one tensor per timestep.
    ForwardResult forward_iteration(const std::vector<Tensor4>& xs,
                                    const std::vector<int>& labels, const ToyNet* teacher,
                                    const TrainConfig& cfg) const;

    // Forward plus backward; the returned cache anchors linearized_loss.
    ForwardResult compute_gradients(const std::vector<Tensor4>& xs,
                                    const std::vector<int>& labels, const ToyNet* teacher,
                                    const TrainConfig& cfg, Gradients& grads,
                                    std::shared_ptr<TrainerCache>* cache = nullptr) const;

    // Loss of the surrogate functional the backward pass differentiates:
    // quantizer decisions, spike decisions and channel scales are frozen at
    // the base point and replaced by their straight-through linearizations,
    // everything else is evaluated exactly at the current parameters. Sets
    // *decision_flip when the current parameters would change a spike or a
    // codeword assignment, which marks the probe as unusable for finite
    // differences.
    double linearized_loss(const std::vector<Tensor4>& xs, const std::vector<int>& labels,
                           const ToyNet* teacher, const TrainConfig& cfg,
                           const TrainerCache& base, bool* decision_flip = nullptr) const;

    PackedModel export_packed(QuantMode mode, double fence_gamma) const;

    std::vector<NamedTensor> to_checkpoint() const;
    static ToyNet from_checkpoint(const std::vector<NamedTensor>& tensors);

private:
    ToyNetSpec spec_;
    std::vector<ConvLayer> convs_;
    std::vector<double> fc_w_, fc_b_;
};

struct EpochMetrics {
    int epoch = 0;
    double loss = 0, ce = 0, mpfd = 0, acc = 0, outlier_frac = 0;
};

struct TrainResult {
    std::vector<EpochMetrics> metrics;
    std::string metrics_csv;  // byte-stable across reruns with equal seeds
    PackedModel packed;
    std::vector<NamedTensor> checkpoint;
};

// Runs the full loop: quantize, forward, combined loss, straight-through
// backward, Adam updates of weights, codebook latents, batch norm and the
// readout. Aborts with a diagnostic when the loss stops being finite.
// `init` resumes from an existing net (checkpoint sidecar) instead of a
// fresh seed initialization; the optimizer state starts over.
TrainResult train_toy(const ToyNetSpec& spec, const TrainConfig& cfg,
                      const SpikeDataset& data, const ToyNet* teacher = nullptr,
                      const ToyNet* init = nullptr);

}  // namespace s2nn
