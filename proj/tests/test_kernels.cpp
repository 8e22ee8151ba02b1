#include <doctest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "qbc/fixtures.hpp"
#include "qbc/forward.hpp"
#include "qbc/kernels.hpp"
#include "qbc/rng.hpp"

using namespace qbc;

namespace {

std::vector<float> random_floats(Rng& rng, size_t n, double lo = -4.0, double hi = 4.0) {
    std::vector<float> v(n);
    for (float& x : v) x = static_cast<float>(rng.uniform(lo, hi));
    return v;
}

bool bits_equal(const std::vector<double>& a, const std::vector<double>& b) {
    return a.size() == b.size() &&
           std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

bool bits_equal_f(const std::vector<float>& a, const std::vector<float>& b) {
    return a.size() == b.size() &&
           std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

} // namespace

TEST_CASE("round_half_away ties go away from zero") {
    CHECK(kern::round_half_away(0.5) == 1.0);
    CHECK(kern::round_half_away(-0.5) == -1.0);
    CHECK(kern::round_half_away(2.5) == 3.0);
    CHECK(kern::round_half_away(-2.5) == -3.0);
    CHECK(kern::round_half_away(38.25) == 38.0);
    CHECK(kern::round_half_away(38.5) == 39.0);
    CHECK(kern::round_half_away(0.0) == 0.0);
}

TEST_CASE("dot uses the documented four-lane combination order") {
    const auto& km = kern::scalar_ops();
    std::vector<float> a = {1, 2, 3, 4, 5, 6}, b = {2, 3, 4, 5, 6, 7};
    double lane[4] = {0, 0, 0, 0};
    for (size_t i = 0; i < a.size(); ++i)
        lane[i & 3] = std::fma(static_cast<double>(a[i]), static_cast<double>(b[i]), lane[i & 3]);
    CHECK(km.dot(a.data(), b.data(), a.size()) == (lane[0] + lane[1]) + (lane[2] + lane[3]));
}

TEST_CASE("scalar and avx2 backends are bit-exact") {
    const kern::Ops* simd = kern::avx2_ops();
    if (simd == nullptr) {
        MESSAGE("avx2 unavailable on this CPU; equivalence not exercised");
        return;
    }
    const auto& ref = kern::scalar_ops();
    Rng rng(99);

    for (size_t n : {size_t{1}, size_t{3}, size_t{4}, size_t{7}, size_t{8}, size_t{15},
                     size_t{32}, size_t{67}, size_t{256}}) {
        const auto a = random_floats(rng, n);
        const auto b = random_floats(rng, n);
        const auto acc0 = [&] {
            std::vector<double> acc(n);
            for (double& v : acc) v = rng.uniform(-2.0, 2.0);
            return acc;
        }();

        { // axpy
            auto r = acc0, s = acc0;
            ref.axpy(r.data(), a.data(), b[0], n);
            simd->axpy(s.data(), a.data(), b[0], n);
            CHECK(bits_equal(r, s));
        }
        { // mul_acc
            auto r = acc0, s = acc0;
            ref.mul_acc(r.data(), a.data(), b.data(), n);
            simd->mul_acc(s.data(), a.data(), b.data(), n);
            CHECK(bits_equal(r, s));
        }
        { // add_acc
            auto r = acc0, s = acc0;
            ref.add_acc(r.data(), a.data(), n);
            simd->add_acc(s.data(), a.data(), n);
            CHECK(bits_equal(r, s));
        }
        { // dot
            const double r = ref.dot(a.data(), b.data(), n);
            const double s = simd->dot(a.data(), b.data(), n);
            CHECK(std::memcmp(&r, &s, sizeof(double)) == 0);
        }
        { // moment_acc / diff_moment_acc
            auto r1 = acc0, r2 = acc0, s1 = acc0, s2 = acc0;
            ref.moment_acc(r1.data(), r2.data(), a.data(), n);
            simd->moment_acc(s1.data(), s2.data(), a.data(), n);
            CHECK(bits_equal(r1, s1));
            CHECK(bits_equal(r2, s2));
            auto r3 = acc0, r4 = acc0, s3 = acc0, s4 = acc0;
            ref.diff_moment_acc(r3.data(), r4.data(), a.data(), b.data(), n);
            simd->diff_moment_acc(s3.data(), s4.data(), a.data(), b.data(), n);
            CHECK(bits_equal(r3, s3));
            CHECK(bits_equal(r4, s4));
        }
        { // relu / relu6
            std::vector<float> r(n), s(n);
            ref.relu(r.data(), a.data(), n);
            simd->relu(s.data(), a.data(), n);
            CHECK(bits_equal_f(r, s));
            ref.relu6(r.data(), a.data(), n);
            simd->relu6(s.data(), a.data(), n);
            CHECK(bits_equal_f(r, s));
        }
        { // fake_quant, including values far outside the clip range
            std::vector<float> r(n), s(n);
            ref.fake_quant(r.data(), a.data(), n, 2.0 / 255, 128, 0, 255);
            simd->fake_quant(s.data(), a.data(), n, 2.0 / 255, 128, 0, 255);
            CHECK(bits_equal_f(r, s));
        }
        { // quantize_codes
            std::vector<int32_t> r(n), s(n);
            ref.quantize_codes(r.data(), a.data(), n, 1.0 / 127, -127, 127);
            simd->quantize_codes(s.data(), a.data(), n, 1.0 / 127, -127, 127);
            CHECK(std::memcmp(r.data(), s.data(), n * sizeof(int32_t)) == 0);
        }
    }
}

TEST_CASE("tie inputs round identically on both backends") {
    const kern::Ops* simd = kern::avx2_ops();
    if (simd == nullptr) return;
    // x/scale hits exact .5 boundaries: scale 0.5 makes x=0.25 -> 0.5.
    std::vector<float> x = {0.25f, -0.25f, 0.75f, -0.75f, 1.25f, 2.75f, -1.25f, 6.25f};
    std::vector<float> r(x.size()), s(x.size());
    kern::scalar_ops().fake_quant(r.data(), x.data(), x.size(), 0.5, 0, -7, 7);
    simd->fake_quant(s.data(), x.data(), x.size(), 0.5, 0, -7, 7);
    CHECK(bits_equal_f(r, s));
    CHECK(r[0] == 0.5f);  // 0.5 rounds away from zero to code 1
    CHECK(r[1] == -0.5f);
}

TEST_CASE("whole-network forward is bit-identical across backends") {
    if (kern::avx2_ops() == nullptr) return;
    const auto fx = fixtures::make_dwnet(7);
    Tensor batch = fixtures::make_images(7, 9, 4);

    REQUIRE(kern::select_backend(kern::Backend::Scalar));
    const ForwardResult a = forward(fx, batch, true);
    REQUIRE(kern::select_backend(kern::Backend::Avx2));
    const ForwardResult b = forward(fx, batch, true);
    kern::select_backend(kern::Backend::Auto);

    CHECK(bits_equal_f(a.logits.data, b.logits.data));
    for (size_t i = 0; i < a.trace.layers.size(); ++i) {
        CHECK(bits_equal_f(a.trace.layers[i].pre.data, b.trace.layers[i].pre.data));
        CHECK(bits_equal_f(a.trace.layers[i].post.data, b.trace.layers[i].post.data));
    }
}
