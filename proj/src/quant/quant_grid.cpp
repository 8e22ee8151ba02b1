#include "qbc/quant_grid.hpp"

#include <algorithm>
#include <cmath>

#include "qbc/errors.hpp"
#include "qbc/kernels.hpp"

namespace qbc {

QuantGrid make_weight_grid(double maxabs, int bits) {
    QuantGrid g;
    g.bits = bits;
    g.symmetric = true;
    g.zero_point = 0;
    if (bits > kMaxRealBits) {
        g.passthrough = true;
        g.scale = 1.0;
        return g;
    }
    const int32_t qmax = (1 << (bits - 1)) - 1;
    g.qmax = qmax;
    g.qmin = -qmax; // the extra negative code stays unused
    g.scale = std::max(maxabs / static_cast<double>(qmax), 1e-12);
    return g;
}

QuantGrid make_activation_grid(double min_val, double max_val, int bits) {
    if (min_val > max_val) throw ValidationError("activation grid: min > max");
    QuantGrid g;
    g.bits = bits;
    g.symmetric = false;
    if (bits > kMaxRealBits) {
        g.passthrough = true;
        g.scale = 1.0;
        return g;
    }
    // The grid must represent 0 exactly: expand the range to include it,
    // then put the zero point on an integer code.
    min_val = std::min(min_val, 0.0);
    max_val = std::max(max_val, 0.0);
    const int32_t qmax = (1 << bits) - 1;
    g.qmin = 0;
    g.qmax = qmax;
    if (max_val - min_val < 1e-12) {
        g.scale = std::max(1e-6, std::abs(max_val) / static_cast<double>(qmax));
    } else {
        g.scale = (max_val - min_val) / static_cast<double>(qmax);
    }
    const double zp = kern::round_half_away(-min_val / g.scale);
    g.zero_point = static_cast<int32_t>(std::min(std::max(zp, 0.0), static_cast<double>(qmax)));
    return g;
}

void fake_quant(float* dst, const float* src, size_t n, const QuantGrid& grid) {
    if (grid.passthrough) {
        if (dst != src) std::copy(src, src + n, dst);
        return;
    }
    kern::ops().fake_quant(dst, src, n, grid.scale, grid.zero_point, grid.qmin, grid.qmax);
}

Tensor fake_quant(const Tensor& t, const QuantGrid& grid) {
    Tensor out(t.shape);
    fake_quant(out.data.data(), t.data.data(), t.data.size(), grid);
    return out;
}

double fake_quant(double v, const QuantGrid& grid) {
    if (grid.passthrough) return v;
    const double c = kern::round_half_away(v / grid.scale) + grid.zero_point;
    const double q = std::min(std::max(c, static_cast<double>(grid.qmin)),
                              static_cast<double>(grid.qmax));
    return (q - grid.zero_point) * grid.scale;
}

QuantizedTensor quantize_weights_symmetric(const Tensor& w, int bits) {
    if (w.empty()) throw ValidationError("quantize_weights: empty tensor");
    double maxabs = 0.0;
    for (float v : w.data) maxabs = std::max(maxabs, std::abs(static_cast<double>(v)));
    QuantizedTensor qt;
    qt.grid = make_weight_grid(maxabs, bits);
    if (qt.grid.passthrough) return qt;
    qt.codes.resize(w.data.size());
    kern::ops().quantize_codes(qt.codes.data(), w.data.data(), w.data.size(), qt.grid.scale,
                               qt.grid.qmin, qt.grid.qmax);
    return qt;
}

QuantizedTensor quantize_bias(const std::vector<double>& bias, const QuantGrid& w_grid,
                              const QuantGrid& in_grid) {
    QuantizedTensor qt;
    QuantGrid& g = qt.grid;
    g.bits = kBiasBits;
    g.symmetric = true;
    g.zero_point = 0;
    if (w_grid.passthrough || in_grid.passthrough) {
        g.passthrough = true;
        g.scale = 1.0;
        return qt;
    }
    const int32_t qmax = (1 << (kBiasBits - 1)) - 1;
    g.qmax = qmax;
    g.qmin = -qmax;
    double maxabs = 0.0;
    for (double v : bias) maxabs = std::max(maxabs, std::abs(v));
    g.scale = in_grid.scale * w_grid.scale;
    if (maxabs > g.scale * static_cast<double>(qmax)) g.scale = maxabs / static_cast<double>(qmax);
    g.scale = std::max(g.scale, 1e-12);
    qt.codes.resize(bias.size());
    for (size_t i = 0; i < bias.size(); ++i) {
        const double c = kern::round_half_away(bias[i] / g.scale);
        qt.codes[i] = static_cast<int32_t>(
            std::min(std::max(c, static_cast<double>(g.qmin)), static_cast<double>(g.qmax)));
    }
    return qt;
}

std::vector<double> dequantize(const QuantizedTensor& qt) {
    std::vector<double> out(qt.codes.size());
    for (size_t i = 0; i < qt.codes.size(); ++i)
        out[i] = static_cast<double>(qt.codes[i]) * qt.grid.scale;
    return out;
}

} // namespace qbc
