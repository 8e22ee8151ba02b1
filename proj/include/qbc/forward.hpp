#pragma once

#include <vector>

#include "qbc/graph.hpp"
#include "qbc/quant_grid.hpp"
#include "qbc/tensor.hpp"

namespace qbc {

// Captured per-layer tensors of one forward pass.
//   pre:      linear output + bias (batch-norm applied if present), before
//             the activation function
//   post_raw: after the activation, before output quantization
//   post:     what the next layer consumes (== post_raw in full precision)
//
// pre_channel_mean holds the per-channel mean of the pre-activation values
// taken from the double accumulators, before narrowing to float32. The
// correction loop measures shifts against these so that repeated passes
// settle at double precision rather than at float32 granularity.
struct LayerTensors {
    Tensor pre;
    Tensor post_raw;
    Tensor post;
    std::vector<double> pre_channel_mean;
};

struct ActivationTrace {
    Tensor network_input; // after input quantization when simulating a QNN
    std::vector<LayerTensors> layers;

    bool empty() const { return layers.empty(); }
};

// Activation-grid view for simulated quantized inference: the input tensor
// and every layer output are snapped to their fixed grids.
struct QuantView {
    QuantGrid input_grid;
    std::vector<QuantGrid> act_grids; // one per layer
};

struct ForwardResult {
    Tensor logits; // output layer's tensor, flattened to [batch, units]
    ActivationTrace trace;
};

// Runs the network. `quant` null means full precision. With capture=false the
// trace is left empty. `upto` >= 0 stops after that layer (logits then come
// from it). Throws ValidationError on shape mismatch naming the layer.
ForwardResult run_network(const Graph& g, const Tensor& batch, bool capture,
                          const QuantView* quant = nullptr, int upto = -1);

inline ForwardResult forward(const Graph& g, const Tensor& batch, bool capture = false) {
    return run_network(g, batch, capture, nullptr);
}

// Evaluates a single layer from explicit input tensors; used by the
// correction loop to re-check a layer after its bias moved. `act_grid` null
// skips output quantization.
LayerTensors eval_layer(const Graph& g, int index, const std::vector<const Tensor*>& inputs,
                        const QuantGrid* act_grid);

Tensor flatten_to_logits(const Tensor& t);

} // namespace qbc
