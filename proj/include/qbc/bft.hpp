#pragma once

#include <cstdint>
#include <vector>

#include "qbc/qmodel.hpp"

namespace qbc {

struct LrStage {
    double lr = 1e-3;
    int mini_epochs = 16; // one mini-epoch = one full pass over the tuning set
};

struct BftConfig {
    std::vector<LrStage> schedule = {{1e-3, 16}, {1e-4, 16}, {1e-5, 16}, {1e-6, 16}};
    int minibatch = 32;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    uint64_t seed = 0;
};

struct BftHistory {
    struct Step {
        int64_t step = 0;
        double lr = 0.0;
        double loss = 0.0;
    };
    std::vector<Step> steps;
    // Full tuning-set loss before training and after each schedule stage.
    std::vector<double> boundary_losses;
    double final_loss = 0.0;           // after the last stage, full precision biases
    double final_loss_requantized = 0.0; // after snapping biases to 16-bit grids
};

struct BftResult {
    QuantizedModel model;
    BftHistory history;
};

// Bias-only quantization-aware fine tuning: the student runs simulated
// quantized inference, the teacher is the full-precision net, the loss is
// teacher-student distillation cross-entropy, and Adam updates the biases
// only (straight-through estimator through the quantizers). Teacher logits
// are computed once per tuning image. Biases stay full precision across the
// schedule and are re-quantized to their 16-bit grids at the end.
//
// No ground-truth labels are read anywhere on this path.
BftResult bft_run(const Graph& fp_graph, const QuantizedModel& qmodel, const Tensor& tuning_set,
                  const BftConfig& cfg = {});

} // namespace qbc
