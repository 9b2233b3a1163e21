// Command-line surface for the sub-bit spiking convnet toolkit: quantize
// dense weights, inspect packed models, run the reuse engine, emit the
// analysis tables, and drive the toy trainer.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "s2nn/codebook.hpp"
#include "s2nn/costmodel.hpp"
#include "s2nn/engine.hpp"
#include "s2nn/io.hpp"
#include "s2nn/osquant.hpp"
#include "s2nn/pack.hpp"
#include "s2nn/rng.hpp"
#include "s2nn/train.hpp"

namespace {

using json = nlohmann::json;

double parse_gamma(const std::string& text) {
    if (text == "inf" || text == "INF" || text == "Inf" || text == "disabled")
        return std::numeric_limits<double>::infinity();
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::runtime_error("bad gamma value: " + text);
    return v;
}

std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary | std::ios::ate);
    if (!f) throw std::runtime_error("cannot open: " + path);
    const std::streamsize size = f.tellg();
    f.seekg(0);
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(size));
    f.read(reinterpret_cast<char*>(bytes.data()), size);
    if (!f.good()) throw std::runtime_error("read failed: " + path);
    return bytes;
}

void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!f.good()) throw std::runtime_error("write failed: " + path);
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    f << text;
    if (!f.good()) throw std::runtime_error("write failed: " + path);
}

int cmd_quantize(const std::string& weights_path, int eta, const std::string& gamma_text,
                 bool baseline, std::uint64_t seed, const std::string& out_path) {
    const double gamma = parse_gamma(gamma_text);
    const std::vector<s2nn::DenseConvWeights> layers = s2nn::read_dense_weights(weights_path);
    s2nn::PackedModel model;
    s2nn::Rng seeds(seed);
    std::printf("layer,bits_per_weight,bits_per_weight_all_in,outlier_frac\n");
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const s2nn::DenseConvWeights& w = layers[l];
        const s2nn::CompactCodebook cb =
            s2nn::sample_codebook(w.k_w, w.k_h, eta, seeds.next());
        const double effective_gamma =
            baseline ? std::numeric_limits<double>::infinity() : gamma;
        s2nn::QuantizedLayer q = s2nn::quantize_layer(w, cb, effective_gamma);
        const s2nn::CompressionRatio ratio = s2nn::compression_ratio(q);
        const double frac =
            baseline || !std::isfinite(gamma) ? 0.0 : s2nn::outlier_occurrence(w, gamma);
        std::printf("%zu,%.6f,%.6f,%.6f\n", l, ratio.bits_per_weight,
                    ratio.bits_per_weight_all_in, frac);
        model.layers.push_back(std::move(q));
    }
    write_file(out_path, s2nn::pack(model));
    return 0;
}

int cmd_pack(const std::string& model_path, bool dump, bool verify) {
    const std::vector<std::uint8_t> bytes = read_file(model_path);
    if (dump) std::printf("%s", s2nn::dump_header(bytes).c_str());
    if (verify) {
        const s2nn::PackedModel m = s2nn::unpack(bytes);
        if (s2nn::pack(m) != bytes) throw std::runtime_error("repack differs from input");
        std::printf("verify,ok,%zu_layers\n", m.layers.size());
    }
    return 0;
}

int cmd_infer(const std::string& model_path, const std::string& input_path, int timesteps,
              bool reconstruct, double leak, double threshold) {
    const s2nn::PackedModel model = s2nn::unpack(read_file(model_path));
    std::vector<s2nn::SpikeTensor> input = s2nn::read_spike_input(input_path);
    if (int(input.size()) < timesteps)
        throw std::runtime_error("input has fewer timesteps than requested");
    input.resize(std::size_t(timesteps));

    s2nn::LifConfig cfg;
    cfg.leak = leak;
    cfg.threshold = threshold;
    const s2nn::PackedRunResult r = s2nn::run_packed_snn(model, input, cfg, reconstruct);

    std::printf("channel,logit\n");
    for (std::size_t c = 0; c < r.logits.size(); ++c)
        std::printf("%zu,%.17g\n", c, r.logits[c]);
    std::printf("counters,multiplies,adds,lut_hits,output_firing_rate\n");
    std::printf("counters,%llu,%llu,%llu,%.17g\n", (unsigned long long)r.counters.multiplies,
                (unsigned long long)r.counters.adds, (unsigned long long)r.counters.lut_hits,
                r.output_firing_rate);
    return 0;
}

int cmd_analyze(const std::string& weights_path, const std::string& gamma_text) {
    const double gamma = parse_gamma(gamma_text);
    const std::vector<s2nn::DenseConvWeights> layers = s2nn::read_dense_weights(weights_path);
    std::printf("layer,codeword_id,count\n");
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const s2nn::ClusterStats stats = s2nn::cluster_stats(s2nn::sign_binarize(layers[l]));
        std::printf("%s", s2nn::cluster_stats_csv("conv" + std::to_string(l), stats).c_str());
    }
    std::printf("outlier_frac,layer,value\n");
    for (std::size_t l = 0; l < layers.size(); ++l)
        std::printf("outlier_frac,conv%zu,%.6f\n", l,
                    s2nn::outlier_occurrence(layers[l], gamma));
    std::printf("layer,kernel_index,i,j,value,omega\n");
    for (std::size_t l = 0; l < layers.size(); ++l)
        std::printf("%s", s2nn::outlier_report_csv("conv" + std::to_string(l), layers[l], gamma)
                              .c_str());
    return 0;
}

int cmd_report(const std::string& model_path, const std::string& shape_text, int timesteps,
               double fr, int bus_width, double e_mac, double e_ac) {
    const s2nn::PackedModel model = s2nn::unpack(read_file(model_path));
    int c = 0, h = 0, w = 0;
    if (std::sscanf(shape_text.c_str(), "%d,%d,%d", &c, &h, &w) != 3)
        throw std::runtime_error("input shape must be c,h,w");
    const s2nn::Shape4 input{1, c, h, w};

    std::printf("%s", s2nn::traffic_csv(s2nn::traffic_report(model, bus_width)).c_str());
    const s2nn::OpCount ops = s2nn::count_ops(model, input, timesteps, fr);
    std::printf("ops,flops,sops\nops,%.17g,%.17g\n", ops.flops, ops.sops);
    std::printf("%s",
                s2nn::energy_summary(
                    s2nn::energy_estimate(model, input, timesteps, fr, e_mac, e_ac))
                    .c_str());
    return 0;
}

s2nn::QuantMode parse_mode(const std::string& mode) {
    if (mode == "osquant") return s2nn::QuantMode::osquant;
    if (mode == "baseline") return s2nn::QuantMode::baseline;
    if (mode == "fp") return s2nn::QuantMode::full_precision;
    throw std::runtime_error("mode must be osquant, baseline or fp");
}

int cmd_train_toy(const std::string& config_path) {
    std::ifstream f(config_path);
    if (!f) throw std::runtime_error("cannot open: " + config_path);
    json cfg_json = json::parse(f);

    s2nn::ToyNetSpec spec;
    spec.classes = cfg_json.value("classes", 2);
    spec.timesteps = cfg_json.value("timesteps", 4);
    const json dataset = cfg_json.value("dataset", json::object());
    const int samples = dataset.value("samples", 200);
    spec.input_h = dataset.value("height", 8);
    spec.input_w = dataset.value("width", 8);

    const int default_eta = cfg_json.value("eta", 4);
    s2nn::LifConfig lif;
    lif.leak = cfg_json.value("tau", 0.25);
    lif.threshold = cfg_json.value("theta", 1.0);
    lif.surrogate_width = cfg_json.value("surrogate_width", 0.5);
    for (const json& c : cfg_json.at("net").at("convs")) {
        s2nn::ConvSpec conv;
        conv.in_ch = c.at("in").get<int>();
        conv.out_ch = c.at("out").get<int>();
        conv.kernel = c.value("k", 3);
        conv.index_bits = c.value("eta", default_eta);
        conv.lif = lif;
        spec.convs.push_back(conv);
    }

    s2nn::TrainConfig cfg;
    cfg.mode = parse_mode(cfg_json.value("mode", std::string("osquant")));
    if (cfg_json.contains("gamma")) {
        const json& g = cfg_json.at("gamma");
        cfg.fence_gamma = g.is_string() ? parse_gamma(g.get<std::string>()) : g.get<double>();
    }
    cfg.distill_weight = cfg_json.value("lambda", 1.0);
    cfg.lr = cfg_json.value("lr", 5e-4);
    cfg.epochs = cfg_json.value("epochs", 200);
    cfg.batch_size = cfg_json.value("batch_size", 50);
    cfg.seed = cfg_json.value("seed", std::uint64_t{1});
    cfg.early_stop_acc = cfg_json.value("early_stop_acc", 2.0);

    const s2nn::SpikeDataset data = s2nn::make_synthetic_dataset(
        samples, spec.input_h, spec.input_w, spec.timesteps, cfg.seed ^ 0xda7a5e7ULL);

    std::optional<s2nn::ToyNet> teacher_net;
    if (cfg_json.contains("teacher"))
        teacher_net = s2nn::ToyNet::from_checkpoint(
            s2nn::read_checkpoint(cfg_json.at("teacher").get<std::string>()));
    const s2nn::ToyNet* teacher = teacher_net ? &*teacher_net : nullptr;

    std::optional<s2nn::ToyNet> resume_net;
    if (cfg_json.contains("resume"))
        resume_net = s2nn::ToyNet::from_checkpoint(
            s2nn::read_checkpoint(cfg_json.at("resume").get<std::string>()));
    const s2nn::ToyNet* init = resume_net ? &*resume_net : nullptr;

    const s2nn::TrainResult result = s2nn::train_toy(spec, cfg, data, teacher, init);

    const std::string prefix = cfg_json.value("out_prefix", std::string("toy"));
    write_file(prefix + ".s2nn", s2nn::pack(result.packed));
    s2nn::write_checkpoint(prefix + ".s2nt", result.checkpoint);
    write_text(prefix + "_metrics.csv", result.metrics_csv);

    // Dense conv weights on the side so quantize/analyze can consume the run.
    const s2nn::ToyNet trained = s2nn::ToyNet::from_checkpoint(result.checkpoint);
    std::vector<s2nn::DenseConvWeights> dense;
    for (const auto& layer : trained.convs()) dense.push_back(layer.w);
    s2nn::write_dense_weights(prefix + "_dense.s2nw", dense);

    const s2nn::EpochMetrics& last = result.metrics.back();
    std::printf("epoch,loss,ce,mpfd,acc,outlier_frac\n");
    std::printf("%d,%.17g,%.17g,%.17g,%.17g,%.17g\n", last.epoch, last.loss, last.ce, last.mpfd,
                last.acc, last.outlier_frac);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"sub-bit spiking convnet toolkit"};
    app.require_subcommand(1);

    auto* quantize = app.add_subcommand("quantize", "quantize dense weights to a packed model");
    std::string weights_path, gamma_text = "1.5", out_path;
    int eta = 4;
    bool baseline = false;
    std::uint64_t seed = 1;
    quantize->add_option("--weights", weights_path, "dense weight container (.s2nw)")
        ->required();
    quantize->add_option("--eta", eta, "index bits per kernel")->required();
    quantize->add_option("--gamma", gamma_text, "outlier fence factor, or inf to disable");
    quantize->add_flag("--baseline", baseline, "plain nearest-codeword assignment");
    quantize->add_option("--seed", seed, "codebook sampling seed");
    quantize->add_option("--out", out_path, "output packed model (.s2nn)")->required();

    auto* pack_cmd = app.add_subcommand("pack", "inspect or verify a packed model");
    std::string pack_model;
    bool dump_header = false, verify = false;
    pack_cmd->add_option("--model", pack_model, "packed model (.s2nn)")->required();
    pack_cmd->add_flag("--dump-header", dump_header, "print the header as text");
    pack_cmd->add_flag("--verify", verify, "decode and re-encode, compare bytes");

    auto* infer = app.add_subcommand("infer", "run the packed model on a spike input");
    std::string infer_model, infer_input;
    int infer_T = 1;
    bool reconstruct = false;
    double leak = 0.25, threshold = 1.0;
    infer->add_option("--model", infer_model, "packed model (.s2nn)")->required();
    infer->add_option("--input", infer_input, "spike input (.s2ns)")->required();
    infer->add_option("--T", infer_T, "timesteps to run")->required();
    infer->add_flag("--reconstruct", reconstruct,
                    "drive with expanded sign weights instead of the reuse engine");
    infer->add_option("--leak", leak, "membrane carry-over factor");
    infer->add_option("--threshold", threshold, "spike threshold");

    auto* analyze = app.add_subcommand("analyze", "codeword clustering and outlier tables");
    std::string analyze_weights, analyze_gamma = "1.5";
    analyze->add_option("--weights", analyze_weights, "dense weight container (.s2nw)")
        ->required();
    analyze->add_option("--gamma", analyze_gamma, "outlier fence factor");

    auto* report = app.add_subcommand("report", "traffic and energy model tables");
    std::string report_model, shape_text;
    int report_T = 1, bus_width = 32;
    double fr = 0.1, e_mac = 4.6, e_ac = 0.9;
    report->add_option("--model", report_model, "packed model (.s2nn)")->required();
    report->add_option("--input-shape", shape_text, "input as c,h,w")->required();
    report->add_option("--T", report_T, "timesteps")->required();
    report->add_option("--fr", fr, "mean firing rate in [0,1]")->required();
    report->add_option("--bus-width", bus_width, "transfer unit in bits");
    report->add_option("--e-mac", e_mac, "pJ per MAC");
    report->add_option("--e-ac", e_ac, "pJ per AC");

    auto* train = app.add_subcommand("train-toy", "train the toy net from a JSON config");
    std::string config_path;
    train->add_option("--config", config_path, "JSON config")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (quantize->parsed())
            return cmd_quantize(weights_path, eta, gamma_text, baseline, seed, out_path);
        if (pack_cmd->parsed()) return cmd_pack(pack_model, dump_header, verify);
        if (infer->parsed())
            return cmd_infer(infer_model, infer_input, infer_T, reconstruct, leak, threshold);
        if (analyze->parsed()) return cmd_analyze(analyze_weights, analyze_gamma);
        if (report->parsed())
            return cmd_report(report_model, shape_text, report_T, fr, bus_width, e_mac, e_ac);
        if (train->parsed()) return cmd_train_toy(config_path);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
