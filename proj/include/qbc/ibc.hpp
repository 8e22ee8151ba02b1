#pragma once

#include <vector>

#include "qbc/qmodel.hpp"

namespace qbc {

enum class IbcMode { PostActivation, PreActivation };

struct IbcConfig {
    IbcMode mode = IbcMode::PostActivation;
    bool bias_requantize = true;
};

struct IbcReport {
    struct Row {
        int layer = 0;
        int channel = -1; // -1 for skipped layers
        double delta = 0.0;
        double residual = 0.0; // mean shift re-measured right after the update
        bool skipped = false;
        bool relu_dead = false;
    };
    std::vector<Row> rows;
};

// Layer-by-layer bias correction. Full-precision activations are evaluated
// once; the quantized net is re-evaluated per layer so every correction sees
// all earlier ones. For each biased layer the per-channel mean difference
// (full precision minus quantized, measured post- or pre-activation per
// `mode`) is added to the bias, which is then re-quantized onto its 16-bit
// grid when bias_requantize is set. Weights and grids are never touched.
//
// Channels where one net's activation is identically zero while the other's
// mean is positive get the raw mean difference and a relu_dead flag.
struct IbcResult {
    QuantizedModel model;
    IbcReport report;
};

IbcResult ibc_run(const Graph& fp_graph, const QuantizedModel& qmodel, const Tensor& batch,
                  const IbcConfig& cfg = {});

// Runs ibc_run once per batch size (prefixes of `pool`) and scores each
// corrected model by teacher-student cross-entropy on `eval_batch`.
struct IbcSweepRow {
    int64_t batch_size = 0;
    double cross_entropy = 0.0;
};

std::vector<IbcSweepRow> ibc_sweep(const Graph& fp_graph, const QuantizedModel& qmodel,
                                   const Tensor& pool, const std::vector<int64_t>& sizes,
                                   const Tensor& eval_batch, const IbcConfig& cfg = {});

// First `count` images of an NHWC batch starting at `start`.
Tensor slice_batch(const Tensor& batch, int64_t start, int64_t count);

} // namespace qbc
