#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

namespace qbc::kern {

// Inner-loop kernels behind the tensor and quantization code. Every kernel
// has a scalar reference implementation and, on x86-64, an AVX2+FMA variant
// selected at runtime. The two backends are bit-exact by contract, which the
// kernel test suite enforces with memcmp. The contracts below are therefore
// pinned down to the operation level:
//
//  - accumulation happens in double precision via fused multiply-add,
//  - dot() splits the sum into four lanes (element i goes to lane i & 3) and
//    combines them as (l0 + l1) + (l2 + l3),
//  - rounding is round-half-away-from-zero, exact (no +0.5 double-rounding).

// acc[i] = fma(x, w[i], acc[i]) for i in [0, n)
using AxpyFn = void (*)(double* acc, const float* w, float x, size_t n);
// acc[i] = fma(a[i], b[i], acc[i])
using MulAccFn = void (*)(double* acc, const float* a, const float* b, size_t n);
// acc[i] += x[i]
using AddAccFn = void (*)(double* acc, const float* x, size_t n);
// four-lane blocked dot product, combined (l0+l1)+(l2+l3)
using DotFn = double (*)(const float* a, const float* b, size_t n);
// sum[i] += x[i]; sumsq[i] = fma(x[i], x[i], sumsq[i])
using MomentAccFn = void (*)(double* sum, double* sumsq, const float* x, size_t n);
// e = (double)xq[i] - (double)x[i]; esum[i] += e; esumsq[i] = fma(e, e, esumsq[i])
using DiffMomentAccFn = void (*)(double* esum, double* esumsq, const float* xq,
                                 const float* x, size_t n);
using ReluFn = void (*)(float* y, const float* x, size_t n);
// y[i] = float((clamp(round(x[i]/scale) + zp, qmin, qmax) - zp) * scale)
using FakeQuantFn = void (*)(float* y, const float* x, size_t n, double scale,
                             int32_t zero_point, int32_t qmin, int32_t qmax);
// codes[i] = int32(clamp(round(x[i]/scale), qmin, qmax)), symmetric grids
using QuantizeCodesFn = void (*)(int32_t* codes, const float* x, size_t n,
                                 double scale, int32_t qmin, int32_t qmax);

struct Ops {
    AxpyFn axpy;
    MulAccFn mul_acc;
    AddAccFn add_acc;
    DotFn dot;
    MomentAccFn moment_acc;
    DiffMomentAccFn diff_moment_acc;
    ReluFn relu;
    ReluFn relu6;
    FakeQuantFn fake_quant;
    QuantizeCodesFn quantize_codes;
    const char* name;
};

enum class Backend { Auto, Scalar, Avx2 };

// Active kernel table. Defaults to the best backend the CPU supports; the
// QBC_KERNEL_BACKEND environment variable ("scalar", "avx2", "auto")
// overrides the choice at process start.
const Ops& ops();

// Explicit backend access, used by the equivalence tests.
const Ops& scalar_ops();
const Ops* avx2_ops(); // nullptr when unsupported by CPU or build

bool select_backend(Backend b); // false if requested backend is unavailable
std::string active_backend_name();

// Exact round-half-away-from-zero (ties go away from zero). std::round has
// this semantic already; the alias documents the project-wide contract.
inline double round_half_away(double v) { return __builtin_round(v); }

} // namespace qbc::kern
