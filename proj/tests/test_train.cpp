#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <limits>

#include "s2nn/rng.hpp"
#include "s2nn/train.hpp"

using namespace s2nn;

namespace {

ToyNetSpec small_spec() {
    ToyNetSpec spec;
    spec.convs = {{1, 4, 3, 4, LifConfig{}}, {4, 4, 3, 4, LifConfig{}}};
    spec.classes = 2;
    spec.timesteps = 3;
    spec.input_h = 6;
    spec.input_w = 6;
    return spec;
}

TrainConfig quick_config() {
    TrainConfig cfg;
    cfg.mode = QuantMode::osquant;
    cfg.fence_gamma = 1.5;
    cfg.distill_weight = 0.0;
    cfg.lr = 2e-3;
    cfg.epochs = 4;
    cfg.batch_size = 16;
    cfg.seed = 11;
    return cfg;
}

}  // namespace

TEST_CASE("synthetic dataset is seeded and class-balanced") {
    const SpikeDataset a = make_synthetic_dataset(40, 6, 6, 3, 5);
    const SpikeDataset b = make_synthetic_dataset(40, 6, 6, 3, 5);
    const SpikeDataset c = make_synthetic_dataset(40, 6, 6, 3, 6);
    REQUIRE(a.inputs.size() == 40);
    int ones = 0;
    bool any_diff = false;
    for (std::size_t i = 0; i < 40; ++i) {
        ones += a.labels[i];
        for (int t = 0; t < 3; ++t) {
            CHECK(a.inputs[i][std::size_t(t)].to_bytes() ==
                  b.inputs[i][std::size_t(t)].to_bytes());
            any_diff = any_diff || a.inputs[i][std::size_t(t)].to_bytes() !=
                                       c.inputs[i][std::size_t(t)].to_bytes();
        }
    }
    CHECK(ones == 20);
    CHECK(any_diff);
}

TEST_CASE("forward iteration is bit-deterministic for equal seeds") {
    const ToyNetSpec spec = small_spec();
    const TrainConfig cfg = quick_config();
    const SpikeDataset data = make_synthetic_dataset(12, 6, 6, 3, 9);
    std::vector<int> idx(12);
    for (int i = 0; i < 12; ++i) idx[std::size_t(i)] = i;
    const std::vector<Tensor4> xs = batch_inputs(data, idx);
    const std::vector<int> ys = batch_labels(data, idx);

    ToyNet net1(spec, 21), net2(spec, 21);
    for (int step = 0; step < 5; ++step) {
        const ForwardResult r1 = net1.forward_iteration(xs, ys, nullptr, cfg);
        const ForwardResult r2 = net2.forward_iteration(xs, ys, nullptr, cfg);
        CHECK(r1.loss == r2.loss);  // bit identical
        CHECK(r1.logits == r2.logits);
        CHECK(r1.assignments == r2.assignments);
    }
}

TEST_CASE("without a teacher the loss is the cross entropy alone") {
    const ToyNetSpec spec = small_spec();
    TrainConfig cfg = quick_config();
    cfg.distill_weight = 1.0;
    const SpikeDataset data = make_synthetic_dataset(8, 6, 6, 3, 13);
    std::vector<int> idx(8);
    for (int i = 0; i < 8; ++i) idx[std::size_t(i)] = i;

    ToyNet net(spec, 3);
    const ForwardResult r =
        net.forward_iteration(batch_inputs(data, idx), batch_labels(data, idx), nullptr, cfg);
    CHECK(r.mpfd == 0.0);
    CHECK(r.loss == r.ce);
}

TEST_CASE("a student copied from its teacher starts at zero distillation loss") {
    const ToyNetSpec spec = small_spec();
    TrainConfig cfg = quick_config();
    cfg.mode = QuantMode::full_precision;  // identical forward on both sides
    cfg.distill_weight = 1.0;
    const SpikeDataset data = make_synthetic_dataset(8, 6, 6, 3, 17);
    std::vector<int> idx(8);
    for (int i = 0; i < 8; ++i) idx[std::size_t(i)] = i;

    ToyNet teacher(spec, 77);
    ToyNet student = ToyNet::from_checkpoint(teacher.to_checkpoint());
    const ForwardResult r = student.forward_iteration(batch_inputs(data, idx),
                                                      batch_labels(data, idx), &teacher, cfg);
    CHECK(r.mpfd <= 1e-12);
}

TEST_CASE("checkpoint round trip preserves the forward pass") {
    const ToyNetSpec spec = small_spec();
    const TrainConfig cfg = quick_config();
    const SpikeDataset data = make_synthetic_dataset(10, 6, 6, 3, 19);
    std::vector<int> idx(10);
    for (int i = 0; i < 10; ++i) idx[std::size_t(i)] = i;
    const std::vector<Tensor4> xs = batch_inputs(data, idx);
    const std::vector<int> ys = batch_labels(data, idx);

    ToyNet net(spec, 5);
    ToyNet restored = ToyNet::from_checkpoint(net.to_checkpoint());
    const ForwardResult a = net.forward_iteration(xs, ys, nullptr, cfg);
    const ForwardResult b = restored.forward_iteration(xs, ys, nullptr, cfg);
    CHECK(a.loss == b.loss);
    CHECK(a.logits == b.logits);
}

TEST_CASE("disabled outlier handling reproduces the baseline quantizer bit for bit") {
    const ToyNetSpec spec = small_spec();
    ToyNet net(spec, 42);
    const std::vector<LayerQuant> base = net.quantize(QuantMode::baseline, 1.5);
    const std::vector<LayerQuant> inf =
        net.quantize(QuantMode::osquant, std::numeric_limits<double>::infinity());
    REQUIRE(base.size() == inf.size());
    for (std::size_t l = 0; l < base.size(); ++l) {
        CHECK(base[l].assignments == inf[l].assignments);
        CHECK(base[l].w_eff.data == inf[l].w_eff.data);  // bit identical
        CHECK(base[l].alpha == inf[l].alpha);
    }
}

TEST_CASE("short training runs are byte-identical across reruns") {
    const ToyNetSpec spec = small_spec();
    TrainConfig cfg = quick_config();
    cfg.epochs = 3;
    const SpikeDataset data = make_synthetic_dataset(32, 6, 6, 3, 23);
    const TrainResult a = train_toy(spec, cfg, data);
    const TrainResult b = train_toy(spec, cfg, data);
    CHECK(a.metrics_csv == b.metrics_csv);
    CHECK(pack(a.packed) == pack(b.packed));
}

TEST_CASE("training loss decreases on the synthetic task") {
    ToyNetSpec spec = small_spec();
    TrainConfig cfg = quick_config();
    cfg.epochs = 12;
    const SpikeDataset data = make_synthetic_dataset(64, 6, 6, 3, 29);
    const TrainResult r = train_toy(spec, cfg, data);
    REQUIRE(r.metrics.size() >= 2);
    CHECK(r.metrics.back().loss < r.metrics.front().loss);
    CHECK(r.metrics.back().acc >= r.metrics.front().acc - 0.05);
}

TEST_CASE("distillation pulls the Gram features toward the teacher") {
    // Teacher: full-precision net trained briefly; students: identical
    // quantized runs except for the distillation weight.
    ToyNetSpec spec = small_spec();
    const SpikeDataset data = make_synthetic_dataset(48, 6, 6, 3, 31);

    TrainConfig teacher_cfg = quick_config();
    teacher_cfg.mode = QuantMode::full_precision;
    teacher_cfg.epochs = 20;
    teacher_cfg.lr = 5e-3;
    const TrainResult teacher_run = train_toy(spec, teacher_cfg, data);
    const ToyNet teacher = ToyNet::from_checkpoint(teacher_run.checkpoint);

    TrainConfig plain = quick_config();
    plain.epochs = 15;
    plain.distill_weight = 0.0;
    TrainConfig distilled = plain;
    distilled.distill_weight = 1.0;

    const TrainResult no_kd = train_toy(spec, plain, data, &teacher);
    const TrainResult kd = train_toy(spec, distilled, data, &teacher);
    // Both runs measure the Gram mismatch; only the second optimizes it.
    CHECK(kd.metrics.back().mpfd < no_kd.metrics.back().mpfd);
}

TEST_CASE("divergence aborts with a diagnostic") {
    // A poisoned resume checkpoint turns the very first loss non-finite.
    ToyNetSpec spec = small_spec();
    TrainConfig cfg = quick_config();
    const SpikeDataset data = make_synthetic_dataset(16, 6, 6, 3, 37);

    ToyNet seed_net(spec, 1);
    std::vector<NamedTensor> tensors = seed_net.to_checkpoint();
    for (NamedTensor& t : tensors)
        if (t.name == "fc.b") t.data[0] = std::numeric_limits<double>::quiet_NaN();
    const ToyNet poisoned = ToyNet::from_checkpoint(tensors);
    CHECK_THROWS_WITH_AS(train_toy(spec, cfg, data, nullptr, &poisoned),
                         doctest::Contains("training diverged"), std::runtime_error);
}

TEST_CASE("resume restarts from the checkpointed parameters") {
    ToyNetSpec spec = small_spec();
    TrainConfig cfg = quick_config();
    cfg.epochs = 2;
    const SpikeDataset data = make_synthetic_dataset(24, 6, 6, 3, 43);

    const TrainResult first = train_toy(spec, cfg, data);
    const ToyNet resumed = ToyNet::from_checkpoint(first.checkpoint);
    const TrainResult second = train_toy(spec, cfg, data, nullptr, &resumed);
    // Restarting from trained weights should not begin at the fresh-init loss.
    CHECK(second.metrics.front().loss != first.metrics.front().loss);

    ToyNetSpec other = spec;
    other.convs[0].out_ch = 8;
    other.convs[1].in_ch = 8;
    CHECK_THROWS(train_toy(other, cfg, data, nullptr, &resumed));
}

TEST_CASE("spec validation") {
    ToyNetSpec bad = small_spec();
    bad.convs[1].in_ch = 3;  // breaks the channel chain
    CHECK_THROWS(ToyNet(bad, 1));

    ToyNetSpec even = small_spec();
    even.convs[0].kernel = 4;
    CHECK_THROWS(ToyNet(even, 1));

    ToyNetSpec none = small_spec();
    none.convs.clear();
    CHECK_THROWS(ToyNet(none, 1));
}

TEST_CASE("full-stack gradient matches finite differences of the linearized loss") {
    const ToyNetSpec spec = small_spec();
    TrainConfig cfg = quick_config();
    cfg.distill_weight = 1.0;  // exercise the distillation path too
    const SpikeDataset data = make_synthetic_dataset(6, 6, 6, 3, 41);
    std::vector<int> idx(6);
    for (int i = 0; i < 6; ++i) idx[std::size_t(i)] = i;
    const std::vector<Tensor4> xs = batch_inputs(data, idx);
    const std::vector<int> ys = batch_labels(data, idx);

    ToyNet teacher(spec, 101);
    ToyNet net(spec, 7);
    Gradients grads;
    std::shared_ptr<TrainerCache> cache;
    net.compute_gradients(xs, ys, &teacher, cfg, grads, &cache);

    Rng rng(55);
    int checked = 0, skipped = 0;
    auto probe = [&](double* param, double analytic) {
        const double h = 1e-5 * std::max(1.0, std::fabs(*param));
        const double saved = *param;
        bool flip = false;
        *param = saved + h;
        const double up = net.linearized_loss(xs, ys, &teacher, cfg, *cache, &flip);
        bool flip2 = false;
        *param = saved - h;
        const double dn = net.linearized_loss(xs, ys, &teacher, cfg, *cache, &flip2);
        *param = saved;
        if (flip || flip2) {
            ++skipped;  // probe crossed a spike or assignment boundary
            return;
        }
        const double fd = (up - dn) / (2 * h);
        const double denom = std::max({std::fabs(fd), std::fabs(analytic), 1e-7});
        CHECK(std::fabs(fd - analytic) / denom <= 1e-3);
        ++checked;
    };

    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t l = rng.below(net.convs().size());
        auto& layer = net.convs()[l];
        const std::size_t p = rng.below(layer.w.data.size());
        probe(&layer.w.data[p], grads.convs[l].w[p]);
    }
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t p = rng.below(net.fc_w().size());
        probe(&net.fc_w()[p], grads.fc_w[p]);
    }
    for (int trial = 0; trial < 6; ++trial) {
        const std::size_t l = rng.below(net.convs().size());
        auto& layer = net.convs()[l];
        const std::size_t c = rng.below(layer.bn_gamma.size());
        probe(&layer.bn_gamma[c], grads.convs[l].bn_gamma[c]);
        probe(&layer.bn_beta[c], grads.convs[l].bn_beta[c]);
    }
    CHECK(checked >= 25);  // the flip guard must not eat the test
}
