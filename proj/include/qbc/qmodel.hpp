#pragma once

#include <string>
#include <vector>

#include "qbc/forward.hpp"
#include "qbc/graph.hpp"
#include "qbc/quant_grid.hpp"

namespace qbc {

// Per-layer quantization state. Weight codes are kept alongside the
// dequantized weights stored in the graph so models round-trip bit-exactly;
// biases live as float working values (exactly code*scale after any
// quantization step) so corrections can be applied in full precision and
// snapped back to the 16-bit grid on demand.
struct LayerQuant {
    bool has_weights = false;
    QuantGrid w_grid;
    std::vector<int32_t> w_codes;
    bool has_bias = false;
    QuantGrid b_grid;
    QuantGrid a_grid; // output (post-activation) grid, fixed after calibration
};

struct QuantizedModel {
    Graph graph; // weights dequantized, biases = working float values
    QuantGrid input_grid;
    std::vector<LayerQuant> layers;
    int bits_w = 8;
    int bits_a = 8;

    QuantView view() const {
        QuantView v;
        v.input_grid = input_grid;
        v.act_grids.reserve(layers.size());
        for (const auto& lq : layers) v.act_grids.push_back(lq.a_grid);
        return v;
    }

    // Snap one layer's bias onto its 16-bit grid (no-op for passthrough).
    void requantize_bias(int layer);
};

// Folds attached batch-normalization parameters into weights and biases:
// W' = W * g/sqrt(var + eps), b' = (b - mean) * g/sqrt(var + eps) + beta.
// Layers without bn are untouched. Throws NumericError on negative variance.
Graph fold_batchnorm(const Graph& g);

struct DeadChannelInfo {
    int layer = 0;
    int channel = 0;
    double constant_value = 0.0; // mean post-activation output before zeroing
};

struct DeadChannelReport {
    std::vector<DeadChannelInfo> zeroed;
    int64_t predictions_changed = 0; // calib top-1 flips caused by zeroing
};

// Zeroes channels whose post-activation variance over the calibration batch
// falls below `threshold` (weights and bias set so the output is exactly 0)
// and flags them on the layer. Top-1 predictions on the calibration batch are
// re-checked afterwards; flips are reported, not reverted.
DeadChannelReport drop_dead_channels(Graph& g, const Tensor& calib,
                                     double threshold = 1e-10);

// Full pipeline of grid construction: runs a calibration forward pass,
// builds per-layer weight/bias/activation grids, and quantizes parameters.
// The graph must already be folded (no bn attached).
QuantizedModel quantize_model(const Graph& g, const Tensor& calib, int bits_w, int bits_a);

CalibrationStats collect_calibration_stats(const Graph& g, const Tensor& calib);

// Simulated quantized inference: dequantized weights, real accumulation,
// 16-bit biases, per-layer output fake quantization on the fixed grids.
ForwardResult forward_quant(const QuantizedModel& qm, const Tensor& batch,
                            bool capture = false, int upto = -1);

// True when only bias values differ (weights, codes and all grids equal).
bool same_except_biases(const QuantizedModel& a, const QuantizedModel& b);

} // namespace qbc
