#include "qbc/kernels.hpp"

#include <algorithm>
#include <cmath>

// Scalar reference kernels. These define the numeric contract; the SIMD
// variants must reproduce them bit for bit. Hence the explicit std::fma and
// the four-lane structure of dot(): an AVX2 lane has somewhere to map onto.

namespace qbc::kern {
namespace {

void axpy_scalar(double* acc, const float* w, float x, size_t n) {
    const double xd = static_cast<double>(x);
    for (size_t i = 0; i < n; ++i)
        acc[i] = std::fma(xd, static_cast<double>(w[i]), acc[i]);
}

void mul_acc_scalar(double* acc, const float* a, const float* b, size_t n) {
    for (size_t i = 0; i < n; ++i)
        acc[i] = std::fma(static_cast<double>(a[i]), static_cast<double>(b[i]), acc[i]);
}

void add_acc_scalar(double* acc, const float* x, size_t n) {
    for (size_t i = 0; i < n; ++i) acc[i] += static_cast<double>(x[i]);
}

double dot_scalar(const float* a, const float* b, size_t n) {
    double lane[4] = {0.0, 0.0, 0.0, 0.0};
    for (size_t i = 0; i < n; ++i)
        lane[i & 3] = std::fma(static_cast<double>(a[i]), static_cast<double>(b[i]), lane[i & 3]);
    return (lane[0] + lane[1]) + (lane[2] + lane[3]);
}

void moment_acc_scalar(double* sum, double* sumsq, const float* x, size_t n) {
    for (size_t i = 0; i < n; ++i) {
        const double v = static_cast<double>(x[i]);
        sum[i] += v;
        sumsq[i] = std::fma(v, v, sumsq[i]);
    }
}

void diff_moment_acc_scalar(double* esum, double* esumsq, const float* xq,
                            const float* x, size_t n) {
    for (size_t i = 0; i < n; ++i) {
        const double e = static_cast<double>(xq[i]) - static_cast<double>(x[i]);
        esum[i] += e;
        esumsq[i] = std::fma(e, e, esumsq[i]);
    }
}

void relu_scalar(float* y, const float* x, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] = std::max(x[i], 0.0f);
}

void relu6_scalar(float* y, const float* x, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] = std::min(std::max(x[i], 0.0f), 6.0f);
}

void fake_quant_scalar(float* y, const float* x, size_t n, double scale,
                       int32_t zero_point, int32_t qmin, int32_t qmax) {
    const double lo = static_cast<double>(qmin);
    const double hi = static_cast<double>(qmax);
    const double zp = static_cast<double>(zero_point);
    for (size_t i = 0; i < n; ++i) {
        const double c = round_half_away(static_cast<double>(x[i]) / scale) + zp;
        const double q = std::min(std::max(c, lo), hi);
        y[i] = static_cast<float>((q - zp) * scale);
    }
}

void quantize_codes_scalar(int32_t* codes, const float* x, size_t n, double scale,
                           int32_t qmin, int32_t qmax) {
    const double lo = static_cast<double>(qmin);
    const double hi = static_cast<double>(qmax);
    for (size_t i = 0; i < n; ++i) {
        const double c = round_half_away(static_cast<double>(x[i]) / scale);
        codes[i] = static_cast<int32_t>(std::min(std::max(c, lo), hi));
    }
}

} // namespace

const Ops& scalar_ops() {
    static const Ops table = {
        axpy_scalar,       mul_acc_scalar, add_acc_scalar,
        dot_scalar,        moment_acc_scalar, diff_moment_acc_scalar,
        relu_scalar,       relu6_scalar,   fake_quant_scalar,
        quantize_codes_scalar, "scalar",
    };
    return table;
}

} // namespace qbc::kern
