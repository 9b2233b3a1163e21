#include "s2nn/pack.hpp"

#include <cstring>
#include <stdexcept>

namespace s2nn {

namespace {

constexpr char kMagic[4] = {'S', '2', 'N', 'N'};
constexpr std::uint16_t kVersion = 1;
constexpr std::size_t kLayerHeaderBytes = 11;  // u32 + u32 + u8 + u8 + u8

class BitWriter {
public:
    explicit BitWriter(std::vector<std::uint8_t>& out) : out_(out) {}

    void put(std::uint64_t value, int nbits) {
        for (int b = 0; b < nbits; ++b) {
            if (fill_ == 0) out_.push_back(0);
            if ((value >> b) & 1u) out_.back() |= std::uint8_t(1u << fill_);
            fill_ = (fill_ + 1) & 7;
        }
    }

    void flush() { fill_ = 0; }

private:
    std::vector<std::uint8_t>& out_;
    int fill_ = 0;
};

class ByteReader {
public:
    ByteReader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}

    const std::uint8_t* take(std::size_t n) {
        if (pos_ + n > size_) throw std::runtime_error("truncated stream");
        const std::uint8_t* p = data_ + pos_;
        pos_ += n;
        return p;
    }

    std::uint16_t u16() {
        const std::uint8_t* p = take(2);
        return std::uint16_t(p[0] | (std::uint16_t(p[1]) << 8));
    }

    std::uint32_t u32() {
        const std::uint8_t* p = take(4);
        return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
               (std::uint32_t(p[3]) << 24);
    }

    std::uint8_t u8() { return *take(1); }

    std::size_t remaining() const { return size_ - pos_; }

private:
    const std::uint8_t* data_;
    std::size_t size_;
    std::size_t pos_ = 0;
};

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(std::uint8_t(v & 0xff));
    out.push_back(std::uint8_t(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(std::uint8_t((v >> (8 * i)) & 0xff));
}

std::uint64_t read_bits(const std::uint8_t* bytes, std::size_t bit_pos, int nbits) {
    std::uint64_t v = 0;
    for (int b = 0; b < nbits; ++b) {
        const std::size_t p = bit_pos + b;
        if ((bytes[p >> 3] >> (p & 7)) & 1u) v |= std::uint64_t{1} << b;
    }
    return v;
}

void validate_layer(const QuantizedLayer& q) {
    if (q.c_out <= 0 || q.c_in <= 0 || q.k_h <= 0 || q.k_w <= 0)
        throw std::runtime_error("invalid layer shape");
    if (q.index_bits != q.codebook.index_bits())
        throw std::runtime_error("index_bits disagrees with codebook");
    if (q.k_h != q.codebook.k_h() || q.k_w != q.codebook.k_w())
        throw std::runtime_error("kernel shape disagrees with codebook");
    if (q.indices.size() != q.kernel_count())
        throw std::runtime_error("index count mismatch");
    if (q.alpha.size() != std::size_t(q.c_out)) throw std::runtime_error("alpha count mismatch");
    for (std::uint32_t idx : q.indices)
        if (idx >= std::uint32_t(q.codebook.size()))
            throw std::runtime_error("index out of codebook range");
}

}  // namespace

BinaryConvWeights reconstruct(const QuantizedLayer& q) {
    validate_layer(q);
    BinaryConvWeights w;
    w.c_out = q.c_out;
    w.c_in = q.c_in;
    w.k_h = q.k_h;
    w.k_w = q.k_w;
    w.alpha = q.alpha;
    const int len = int(q.kernel_len());
    w.sign.resize(q.kernel_count() * std::size_t(len));
    for (std::size_t k = 0; k < q.kernel_count(); ++k)
        decode_codeword(q.codebook.id(int(q.indices[k])), len,
                        w.sign.data() + k * std::size_t(len));
    return w;
}

std::vector<std::uint8_t> pack(const PackedModel& m) {
    std::vector<std::uint8_t> out;
    out.insert(out.end(), kMagic, kMagic + 4);
    put_u16(out, m.version);
    put_u16(out, std::uint16_t(m.layers.size()));

    for (const QuantizedLayer& q : m.layers) {
        validate_layer(q);
        put_u32(out, std::uint32_t(q.c_out));
        put_u32(out, std::uint32_t(q.c_in));
        out.push_back(std::uint8_t(q.k_h));
        out.push_back(std::uint8_t(q.k_w));
        out.push_back(std::uint8_t(q.index_bits));

        const int len = int(q.kernel_len());
        BitWriter cb(out);
        for (int s = 0; s < q.codebook.size(); ++s) cb.put(q.codebook.id(s), len);
        cb.flush();

        BitWriter idx(out);
        for (std::uint32_t i : q.indices) idx.put(i, q.index_bits);
        idx.flush();

        for (double a : q.alpha) {
            const float f = float(a);
            std::uint32_t bits;
            std::memcpy(&bits, &f, 4);
            put_u32(out, bits);
        }
    }
    return out;
}

PackedModel unpack(const std::vector<std::uint8_t>& bytes) {
    ByteReader r(bytes.data(), bytes.size());
    const std::uint8_t* magic = r.take(4);
    if (std::memcmp(magic, kMagic, 4) != 0) throw std::runtime_error("bad magic");
    PackedModel m;
    m.version = r.u16();
    if (m.version != kVersion) throw std::runtime_error("version mismatch");
    const std::uint16_t layer_count = r.u16();

    for (std::uint16_t l = 0; l < layer_count; ++l) {
        QuantizedLayer q;
        q.c_out = int(r.u32());
        q.c_in = int(r.u32());
        q.k_h = int(r.u8());
        q.k_w = int(r.u8());
        q.index_bits = int(r.u8());
        if (q.c_out <= 0 || q.c_in <= 0 || q.k_h <= 0 || q.k_w <= 0 || q.index_bits < 1 ||
            q.index_bits >= q.k_h * q.k_w || q.k_h * q.k_w > 64)
            throw std::runtime_error("invalid layer header");

        const int len = q.k_h * q.k_w;
        const std::size_t slots = std::size_t{1} << q.index_bits;
        const std::size_t cb_bytes = (slots * std::size_t(len) + 7) / 8;
        const std::uint8_t* cb_data = r.take(cb_bytes);
        std::vector<std::uint64_t> ids(slots);
        for (std::size_t s = 0; s < slots; ++s)
            ids[s] = read_bits(cb_data, s * std::size_t(len), len);
        q.codebook = CompactCodebook(q.k_w, q.k_h, q.index_bits, std::move(ids), 0);

        const std::size_t nkern = q.kernel_count();
        const std::size_t idx_bytes = (nkern * std::size_t(q.index_bits) + 7) / 8;
        const std::uint8_t* idx_data = r.take(idx_bytes);
        q.indices.resize(nkern);
        for (std::size_t k = 0; k < nkern; ++k) {
            const std::uint64_t v = read_bits(idx_data, k * std::size_t(q.index_bits), q.index_bits);
            if (v >= slots) throw std::runtime_error("index out of codebook range");
            q.indices[k] = std::uint32_t(v);
        }

        q.alpha.resize(std::size_t(q.c_out));
        for (int o = 0; o < q.c_out; ++o) {
            const std::uint32_t bits = r.u32();
            float f;
            std::memcpy(&f, &bits, 4);
            q.alpha[std::size_t(o)] = double(f);
        }
        m.layers.push_back(std::move(q));
    }
    if (r.remaining() != 0) throw std::runtime_error("trailing data");
    return m;
}

CompressionRatio compression_ratio(const QuantizedLayer& q) {
    if (q.index_bits >= q.k_h * q.k_w) throw std::runtime_error("not sub-bit");
    const double kernels = double(q.c_out) * q.c_in;
    const double kk = double(q.k_h) * q.k_w;
    const double payload = double(q.index_bits) * kernels + double(std::uint64_t{1} << q.index_bits) * kk;
    CompressionRatio r;
    r.bits_per_weight = payload / (kk * kernels);
    r.bits_per_weight_all_in =
        (payload + 32.0 * q.c_out + 8.0 * kLayerHeaderBytes) / (kk * kernels);
    return r;
}

double onchip_saving(int index_bits, int k_w, int k_h) {
    const int kk = k_w * k_h;
    if (index_bits >= kk) throw std::runtime_error("not sub-bit");
    return double(kk - index_bits) / double(kk);
}

std::string dump_header(const std::vector<std::uint8_t>& bytes) {
    ByteReader r(bytes.data(), bytes.size());
    const std::uint8_t* magic = r.take(4);
    if (std::memcmp(magic, kMagic, 4) != 0) throw std::runtime_error("bad magic");
    const std::uint16_t version = r.u16();
    const std::uint16_t layer_count = r.u16();
    std::string out = "magic=S2NN version=" + std::to_string(version) +
                      " layers=" + std::to_string(layer_count) + "\n";
    for (std::uint16_t l = 0; l < layer_count; ++l) {
        const std::uint32_t c_out = r.u32();
        const std::uint32_t c_in = r.u32();
        const int k_h = r.u8();
        const int k_w = r.u8();
        const int index_bits = r.u8();
        if (index_bits < 1 || index_bits >= k_h * k_w || k_h * k_w > 64)
            throw std::runtime_error("invalid layer header");
        const std::size_t slots = std::size_t{1} << index_bits;
        const std::size_t cb_bytes = (slots * std::size_t(k_h) * k_w + 7) / 8;
        const std::size_t idx_bytes =
            (std::size_t(c_out) * c_in * std::size_t(index_bits) + 7) / 8;
        r.take(cb_bytes + idx_bytes + 4 * std::size_t(c_out));
        out += "layer " + std::to_string(l) + ": c_out=" + std::to_string(c_out) +
               " c_in=" + std::to_string(c_in) + " k=" + std::to_string(k_h) + "x" +
               std::to_string(k_w) + " index_bits=" + std::to_string(index_bits) +
               " codebook_bytes=" + std::to_string(cb_bytes) +
               " index_bytes=" + std::to_string(idx_bytes) + "\n";
    }
    return out;
}

}  // namespace s2nn
