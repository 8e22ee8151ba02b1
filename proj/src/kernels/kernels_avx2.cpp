#include "qbc/kernels.hpp"

// AVX2+FMA kernel variants. This translation unit is compiled with
// -mavx2 -mfma on x86-64 only; dispatch.cpp decides at runtime whether the
// CPU may run it. Bit-exactness with the scalar reference is part of the
// contract: same fma, same division, same rounding fixup, and dot() keeps
// the element->lane mapping i & 3 with the (l0+l1)+(l2+l3) combine.

#include <immintrin.h>

#include <algorithm>
#include <cmath>

namespace qbc::kern {
namespace {

inline __m256d cvt4(const float* p) { return _mm256_cvtps_pd(_mm_loadu_ps(p)); }

void axpy_avx2(double* acc, const float* w, float x, size_t n) {
    const __m256d xv = _mm256_set1_pd(static_cast<double>(x));
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d a = _mm256_loadu_pd(acc + i);
        _mm256_storeu_pd(acc + i, _mm256_fmadd_pd(xv, cvt4(w + i), a));
    }
    const double xd = static_cast<double>(x);
    for (; i < n; ++i) acc[i] = std::fma(xd, static_cast<double>(w[i]), acc[i]);
}

void mul_acc_avx2(double* acc, const float* a, const float* b, size_t n) {
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d av = cvt4(a + i);
        const __m256d bv = cvt4(b + i);
        _mm256_storeu_pd(acc + i, _mm256_fmadd_pd(av, bv, _mm256_loadu_pd(acc + i)));
    }
    for (; i < n; ++i)
        acc[i] = std::fma(static_cast<double>(a[i]), static_cast<double>(b[i]), acc[i]);
}

void add_acc_avx2(double* acc, const float* x, size_t n) {
    size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(acc + i, _mm256_add_pd(_mm256_loadu_pd(acc + i), cvt4(x + i)));
    for (; i < n; ++i) acc[i] += static_cast<double>(x[i]);
}

double dot_avx2(const float* a, const float* b, size_t n) {
    __m256d acc = _mm256_setzero_pd();
    size_t i = 0;
    for (; i + 4 <= n; i += 4) acc = _mm256_fmadd_pd(cvt4(a + i), cvt4(b + i), acc);
    alignas(32) double lane[4];
    _mm256_store_pd(lane, acc);
    for (; i < n; ++i)
        lane[i & 3] = std::fma(static_cast<double>(a[i]), static_cast<double>(b[i]), lane[i & 3]);
    return (lane[0] + lane[1]) + (lane[2] + lane[3]);
}

void moment_acc_avx2(double* sum, double* sumsq, const float* x, size_t n) {
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d v = cvt4(x + i);
        _mm256_storeu_pd(sum + i, _mm256_add_pd(_mm256_loadu_pd(sum + i), v));
        _mm256_storeu_pd(sumsq + i, _mm256_fmadd_pd(v, v, _mm256_loadu_pd(sumsq + i)));
    }
    for (; i < n; ++i) {
        const double v = static_cast<double>(x[i]);
        sum[i] += v;
        sumsq[i] = std::fma(v, v, sumsq[i]);
    }
}

void diff_moment_acc_avx2(double* esum, double* esumsq, const float* xq,
                          const float* x, size_t n) {
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d e = _mm256_sub_pd(cvt4(xq + i), cvt4(x + i));
        _mm256_storeu_pd(esum + i, _mm256_add_pd(_mm256_loadu_pd(esum + i), e));
        _mm256_storeu_pd(esumsq + i, _mm256_fmadd_pd(e, e, _mm256_loadu_pd(esumsq + i)));
    }
    for (; i < n; ++i) {
        const double e = static_cast<double>(xq[i]) - static_cast<double>(x[i]);
        esum[i] += e;
        esumsq[i] = std::fma(e, e, esumsq[i]);
    }
}

void relu_avx2(float* y, const float* x, size_t n) {
    const __m256 zero = _mm256_setzero_ps();
    size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(y + i, _mm256_max_ps(zero, _mm256_loadu_ps(x + i)));
    for (; i < n; ++i) y[i] = std::max(x[i], 0.0f);
}

void relu6_avx2(float* y, const float* x, size_t n) {
    const __m256 zero = _mm256_setzero_ps();
    const __m256 six = _mm256_set1_ps(6.0f);
    size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 t = _mm256_max_ps(zero, _mm256_loadu_ps(x + i));
        _mm256_storeu_ps(y + i, _mm256_min_ps(six, t));
    }
    for (; i < n; ++i) y[i] = std::min(std::max(x[i], 0.0f), 6.0f);
}

// round-half-away-from-zero on 4 doubles: trunc, then push |frac| >= 0.5 one
// step outward. frac = r - trunc(r) is exact (Sterbenz), so no double
// rounding; matches std::round on every input.
inline __m256d round_away_pd(__m256d r) {
    const __m256d sign_mask = _mm256_set1_pd(-0.0);
    const __m256d t = _mm256_round_pd(r, _MM_FROUND_TO_ZERO | _MM_FROUND_NO_EXC);
    const __m256d frac = _mm256_sub_pd(r, t);
    const __m256d afrac = _mm256_andnot_pd(sign_mask, frac);
    const __m256d ge_half = _mm256_cmp_pd(afrac, _mm256_set1_pd(0.5), _CMP_GE_OQ);
    const __m256d step = _mm256_or_pd(_mm256_set1_pd(1.0), _mm256_and_pd(sign_mask, r));
    return _mm256_add_pd(t, _mm256_and_pd(ge_half, step));
}

void fake_quant_avx2(float* y, const float* x, size_t n, double scale,
                     int32_t zero_point, int32_t qmin, int32_t qmax) {
    const __m256d sv = _mm256_set1_pd(scale);
    const __m256d zv = _mm256_set1_pd(static_cast<double>(zero_point));
    const __m256d lo = _mm256_set1_pd(static_cast<double>(qmin));
    const __m256d hi = _mm256_set1_pd(static_cast<double>(qmax));
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d r = _mm256_div_pd(cvt4(x + i), sv);
        __m256d c = _mm256_add_pd(round_away_pd(r), zv);
        c = _mm256_min_pd(hi, _mm256_max_pd(lo, c));
        const __m256d v = _mm256_mul_pd(_mm256_sub_pd(c, zv), sv);
        _mm_storeu_ps(y + i, _mm256_cvtpd_ps(v));
    }
    const double lod = static_cast<double>(qmin);
    const double hid = static_cast<double>(qmax);
    const double zpd = static_cast<double>(zero_point);
    for (; i < n; ++i) {
        const double c = round_half_away(static_cast<double>(x[i]) / scale) + zpd;
        const double q = std::min(std::max(c, lod), hid);
        y[i] = static_cast<float>((q - zpd) * scale);
    }
}

void quantize_codes_avx2(int32_t* codes, const float* x, size_t n, double scale,
                         int32_t qmin, int32_t qmax) {
    const __m256d sv = _mm256_set1_pd(scale);
    const __m256d lo = _mm256_set1_pd(static_cast<double>(qmin));
    const __m256d hi = _mm256_set1_pd(static_cast<double>(qmax));
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d r = _mm256_div_pd(cvt4(x + i), sv);
        const __m256d c = _mm256_min_pd(hi, _mm256_max_pd(lo, round_away_pd(r)));
        _mm_storeu_si128(reinterpret_cast<__m128i*>(codes + i), _mm256_cvttpd_epi32(c));
    }
    const double lod = static_cast<double>(qmin);
    const double hid = static_cast<double>(qmax);
    for (; i < n; ++i) {
        const double c = round_half_away(static_cast<double>(x[i]) / scale);
        codes[i] = static_cast<int32_t>(std::min(std::max(c, lod), hid));
    }
}

} // namespace

const Ops* avx2_ops_table() {
    static const Ops table = {
        axpy_avx2,       mul_acc_avx2, add_acc_avx2,
        dot_avx2,        moment_acc_avx2, diff_moment_acc_avx2,
        relu_avx2,       relu6_avx2,   fake_quant_avx2,
        quantize_codes_avx2, "avx2",
    };
    return &table;
}

} // namespace qbc::kern
