#include "s2nn/io.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace s2nn {

namespace {

void write_all(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!f.good()) throw std::runtime_error("write failed: " + path);
}

std::vector<std::uint8_t> read_all(const std::string& path) {
    std::ifstream f(path, std::ios::binary | std::ios::ate);
    if (!f) throw std::runtime_error("cannot open: " + path);
    const std::streamsize size = f.tellg();
    f.seekg(0);
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(size));
    f.read(reinterpret_cast<char*>(bytes.data()), size);
    if (!f.good()) throw std::runtime_error("read failed: " + path);
    return bytes;
}

struct Writer {
    std::vector<std::uint8_t> out;

    void magic(const char* m) { out.insert(out.end(), m, m + 4); }
    void u8(std::uint8_t v) { out.push_back(v); }
    void u16(std::uint16_t v) {
        out.push_back(std::uint8_t(v & 0xff));
        out.push_back(std::uint8_t(v >> 8));
    }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) out.push_back(std::uint8_t((v >> (8 * i)) & 0xff));
    }
    void f64(double v) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        for (int i = 0; i < 8; ++i) out.push_back(std::uint8_t((bits >> (8 * i)) & 0xff));
    }
};

struct Reader {
    const std::vector<std::uint8_t>& in;
    std::size_t pos = 0;

    const std::uint8_t* take(std::size_t n) {
        if (pos + n > in.size()) throw std::runtime_error("truncated stream");
        const std::uint8_t* p = in.data() + pos;
        pos += n;
        return p;
    }
    void expect_magic(const char* m) {
        if (std::memcmp(take(4), m, 4) != 0) throw std::runtime_error("bad magic");
    }
    std::uint8_t u8() { return *take(1); }
    std::uint16_t u16() {
        const std::uint8_t* p = take(2);
        return std::uint16_t(p[0] | (std::uint16_t(p[1]) << 8));
    }
    std::uint32_t u32() {
        const std::uint8_t* p = take(4);
        return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
               (std::uint32_t(p[3]) << 24);
    }
    double f64() {
        const std::uint8_t* p = take(8);
        std::uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) bits |= std::uint64_t(p[i]) << (8 * i);
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
    void done() const {
        if (pos != in.size()) throw std::runtime_error("trailing data");
    }
};

}  // namespace

void write_dense_weights(const std::string& path, const std::vector<DenseConvWeights>& layers) {
    Writer w;
    w.magic("S2NW");
    w.u16(1);
    w.u16(std::uint16_t(layers.size()));
    for (const DenseConvWeights& l : layers) {
        if (l.data.size() != l.kernel_count() * l.kernel_len())
            throw std::runtime_error("dense layer size mismatch");
        w.u32(std::uint32_t(l.c_out));
        w.u32(std::uint32_t(l.c_in));
        w.u8(std::uint8_t(l.k_h));
        w.u8(std::uint8_t(l.k_w));
        for (double v : l.data) w.f64(v);
    }
    write_all(path, w.out);
}

std::vector<DenseConvWeights> read_dense_weights(const std::string& path) {
    const std::vector<std::uint8_t> bytes = read_all(path);
    Reader r{bytes};
    r.expect_magic("S2NW");
    if (r.u16() != 1) throw std::runtime_error("version mismatch");
    const std::uint16_t count = r.u16();
    std::vector<DenseConvWeights> layers;
    for (std::uint16_t l = 0; l < count; ++l) {
        DenseConvWeights d;
        d.c_out = int(r.u32());
        d.c_in = int(r.u32());
        d.k_h = int(r.u8());
        d.k_w = int(r.u8());
        if (d.c_out <= 0 || d.c_in <= 0 || d.k_h <= 0 || d.k_w <= 0)
            throw std::runtime_error("invalid layer header");
        d.data.resize(d.kernel_count() * d.kernel_len());
        for (double& v : d.data) v = r.f64();
        layers.push_back(std::move(d));
    }
    r.done();
    return layers;
}

void write_spike_input(const std::string& path, const std::vector<SpikeTensor>& steps) {
    if (steps.empty()) throw std::runtime_error("no timesteps");
    const Shape4 s = steps.front().shape();
    Writer w;
    w.magic("S2NS");
    w.u16(1);
    w.u16(std::uint16_t(steps.size()));
    w.u32(std::uint32_t(s.b));
    w.u32(std::uint32_t(s.c));
    w.u32(std::uint32_t(s.h));
    w.u32(std::uint32_t(s.w));
    for (const SpikeTensor& t : steps) {
        if (!(t.shape() == s)) throw std::runtime_error("shape mismatch across timesteps");
        const std::vector<std::uint8_t> payload = t.to_bytes();
        w.out.insert(w.out.end(), payload.begin(), payload.end());
    }
    write_all(path, w.out);
}

std::vector<SpikeTensor> read_spike_input(const std::string& path) {
    const std::vector<std::uint8_t> bytes = read_all(path);
    Reader r{bytes};
    r.expect_magic("S2NS");
    if (r.u16() != 1) throw std::runtime_error("version mismatch");
    const std::uint16_t timesteps = r.u16();
    Shape4 s;
    s.b = int(r.u32());
    s.c = int(r.u32());
    s.h = int(r.u32());
    s.w = int(r.u32());
    if (timesteps == 0 || s.volume() == 0) throw std::runtime_error("invalid header");
    const std::size_t seg = (s.volume() + 7) / 8;
    std::vector<SpikeTensor> steps;
    for (std::uint16_t t = 0; t < timesteps; ++t) {
        const std::uint8_t* p = r.take(seg);
        steps.push_back(SpikeTensor::from_bytes(s, std::vector<std::uint8_t>(p, p + seg)));
    }
    r.done();
    return steps;
}

void write_checkpoint(const std::string& path, const std::vector<NamedTensor>& tensors) {
    Writer w;
    w.magic("S2NT");
    w.u16(1);
    w.u16(std::uint16_t(tensors.size()));
    for (const NamedTensor& t : tensors) {
        if (t.name.size() > 255) throw std::runtime_error("tensor name too long");
        std::size_t count = 1;
        for (std::uint32_t d : t.dims) count *= d;
        if (t.data.size() != count) throw std::runtime_error("tensor size mismatch: " + t.name);
        w.u8(std::uint8_t(t.name.size()));
        w.out.insert(w.out.end(), t.name.begin(), t.name.end());
        w.u8(std::uint8_t(t.dims.size()));
        for (std::uint32_t d : t.dims) w.u32(d);
        for (double v : t.data) w.f64(v);
    }
    write_all(path, w.out);
}

std::vector<NamedTensor> read_checkpoint(const std::string& path) {
    const std::vector<std::uint8_t> bytes = read_all(path);
    Reader r{bytes};
    r.expect_magic("S2NT");
    if (r.u16() != 1) throw std::runtime_error("version mismatch");
    const std::uint16_t count = r.u16();
    std::vector<NamedTensor> tensors;
    for (std::uint16_t i = 0; i < count; ++i) {
        NamedTensor t;
        const std::uint8_t name_len = r.u8();
        const std::uint8_t* name = r.take(name_len);
        t.name.assign(reinterpret_cast<const char*>(name), name_len);
        const std::uint8_t rank = r.u8();
        std::size_t total = 1;
        for (std::uint8_t d = 0; d < rank; ++d) {
            t.dims.push_back(r.u32());
            total *= t.dims.back();
        }
        t.data.resize(total);
        for (double& v : t.data) v = r.f64();
        tensors.push_back(std::move(t));
    }
    r.done();
    return tensors;
}

}  // namespace s2nn
