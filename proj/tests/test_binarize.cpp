#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "s2nn/binarize.hpp"
#include "s2nn/rng.hpp"

using namespace s2nn;

namespace {

DenseConvWeights random_weights(int c_out, int c_in, int k, std::uint64_t seed) {
    Rng rng(seed);
    DenseConvWeights w{c_out, c_in, k, k, {}};
    w.data.resize(w.kernel_count() * w.kernel_len());
    for (double& v : w.data) v = rng.normal(0.0, 1.0);
    return w;
}

}  // namespace

TEST_CASE("zero maps to +1") {
    DenseConvWeights w{1, 1, 1, 3, {-0.3, 0.0, 0.7}};
    const BinaryConvWeights b = sign_binarize(w);
    CHECK(b.sign[0] == -1);
    CHECK(b.sign[1] == 1);
    CHECK(b.sign[2] == 1);
}

TEST_CASE("alpha is the channel mean of absolute values") {
    DenseConvWeights w{2, 1, 1, 2, {0.2, 0.4, -0.6, 0.2}};
    const BinaryConvWeights b = sign_binarize(w);
    CHECK(b.alpha[0] == doctest::Approx(0.3).epsilon(1e-15));
    CHECK(b.alpha[1] == doctest::Approx(0.4).epsilon(1e-15));
}

TEST_CASE("negation flips every sign except exact zeros") {
    DenseConvWeights w = random_weights(2, 3, 3, 5);
    w.data[4] = 0.0;
    DenseConvWeights neg = w;
    for (double& v : neg.data) v = -v;
    const BinaryConvWeights bw = sign_binarize(w);
    const BinaryConvWeights bn = sign_binarize(neg);
    for (std::size_t p = 0; p < w.data.size(); ++p) {
        if (w.data[p] == 0.0)
            CHECK(bw.sign[p] == bn.sign[p]);  // both hit the +1 branch
        else
            CHECK(bw.sign[p] == -bn.sign[p]);
    }
}

TEST_CASE("idempotent on sign weights with unit alpha") {
    DenseConvWeights w = random_weights(3, 2, 3, 9);
    const BinaryConvWeights first = sign_binarize(w);
    DenseConvWeights as_dense = w;
    for (std::size_t p = 0; p < w.data.size(); ++p) as_dense.data[p] = double(first.sign[p]);
    const BinaryConvWeights second = sign_binarize(as_dense);
    CHECK(second.sign == first.sign);
    for (double a : second.alpha) CHECK(a == 1.0);
}

TEST_CASE("positive scaling keeps signs and scales alpha") {
    DenseConvWeights w = random_weights(2, 2, 3, 13);
    DenseConvWeights scaled = w;
    const double c = 3.5;
    for (double& v : scaled.data) v *= c;
    const BinaryConvWeights bw = sign_binarize(w);
    const BinaryConvWeights bs = sign_binarize(scaled);
    CHECK(bs.sign == bw.sign);
    for (std::size_t o = 0; o < bw.alpha.size(); ++o)
        CHECK(bs.alpha[o] == doctest::Approx(c * bw.alpha[o]).epsilon(1e-12));
}

TEST_CASE("all-zero channel yields zero alpha") {
    DenseConvWeights w{1, 1, 2, 2, {0.0, 0.0, 0.0, 0.0}};
    const BinaryConvWeights b = sign_binarize(w);
    CHECK(b.alpha[0] == 0.0);
    for (std::int8_t s : b.sign) CHECK(s == 1);
}
