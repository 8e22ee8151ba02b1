#pragma once

#include <cstdint>
#include <vector>

#include "qbc/tensor.hpp"

namespace qbc {

// Uniform quantization grid for one tensor role. Weight grids are symmetric
// signed with code -2^(N-1) unused so the range stays exactly mirrored;
// activation grids are asymmetric unsigned with the zero point nudged onto
// the grid so real 0 is always representable.
//
// Bit widths above 24 are treated as "quantization disabled": the grid
// becomes a passthrough and values keep their float32 identity. That keeps
// integer codes inside int32 while still offering an exact no-op mode.
struct QuantGrid {
    int bits = 8;
    double scale = 1.0;
    int32_t zero_point = 0;
    bool symmetric = false;
    int32_t qmin = 0;
    int32_t qmax = 0;
    bool passthrough = false;

    double cmin() const { return (static_cast<double>(qmin) - zero_point) * scale; }
    double cmax() const { return (static_cast<double>(qmax) - zero_point) * scale; }

    bool operator==(const QuantGrid&) const = default;
};

inline constexpr int kMaxRealBits = 24;
inline constexpr int kBiasBits = 16;

// Per-layer min/max of post-activation values over the calibration batch.
struct CalibrationStats {
    std::vector<double> min_val; // one per layer
    std::vector<double> max_val;
    double input_min = 0.0;
    double input_max = 0.0;
};

// Symmetric grid over [-maxabs, maxabs] with 2^(bits-1)-1 positive codes.
// scale floor 1e-12 covers all-zero tensors.
QuantGrid make_weight_grid(double maxabs, int bits);

// Asymmetric grid covering [min, max] after forcing 0 into the range and
// nudging so that 0 sits exactly on a code.
QuantGrid make_activation_grid(double min_val, double max_val, int bits);

// Quantize-dequantize in real arithmetic. Identity for passthrough grids.
void fake_quant(float* dst, const float* src, size_t n, const QuantGrid& grid);
Tensor fake_quant(const Tensor& t, const QuantGrid& grid);
double fake_quant(double v, const QuantGrid& grid);

// Weight quantization onto a symmetric grid built from max|w|.
struct QuantizedTensor {
    QuantGrid grid;
    std::vector<int32_t> codes;
};
QuantizedTensor quantize_weights_symmetric(const Tensor& w, int bits);

// 16-bit symmetric bias grid. Scale is in_scale*w_scale unless some |code|
// would overflow the 16-bit range, in which case max|b|/(2^15-1) is used.
QuantizedTensor quantize_bias(const std::vector<double>& bias, const QuantGrid& w_grid,
                              const QuantGrid& in_grid);

std::vector<double> dequantize(const QuantizedTensor& qt);

} // namespace qbc
