// Minimal packed-model inference runner. Deliberately compiled against the
// inference translation units only (tensor, neuron, binarize, codebook,
// pack, engine): if that set ever grows a dependency on the quantizer or
// the distillation code, this target stops linking.

#include <cstdio>
#include <fstream>
#include <vector>

#include "s2nn/engine.hpp"
#include "s2nn/pack.hpp"

int main(int argc, char** argv) {
    if (argc != 2) {
        std::fprintf(stderr, "usage: infer_nodeps <model.s2nn>\n");
        return 2;
    }
    std::ifstream f(argv[1], std::ios::binary | std::ios::ate);
    if (!f) {
        std::fprintf(stderr, "cannot open: %s\n", argv[1]);
        return 1;
    }
    const std::streamsize size = f.tellg();
    f.seekg(0);
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(size));
    f.read(reinterpret_cast<char*>(bytes.data()), size);

    const s2nn::PackedModel model = s2nn::unpack(bytes);
    const s2nn::QuantizedLayer& first = model.layers.front();

    // Deterministic checkerboard input.
    const s2nn::Shape4 shape{1, first.c_in, 6, 6};
    std::vector<s2nn::SpikeTensor> input;
    for (int t = 0; t < 2; ++t) {
        s2nn::SpikeTensor s(shape);
        for (std::size_t p = 0; p < shape.volume(); ++p) s.set_flat(p, (p + t) % 3 == 0);
        input.push_back(s);
    }

    const s2nn::PackedRunResult r = s2nn::run_packed_snn(model, input, s2nn::LifConfig{});
    for (std::size_t c = 0; c < r.logits.size(); ++c)
        std::printf("%zu,%.17g\n", c, r.logits[c]);
    std::printf("counters,%llu,%llu,%llu\n", (unsigned long long)r.counters.multiplies,
                (unsigned long long)r.counters.adds, (unsigned long long)r.counters.lut_hits);
    return 0;
}
