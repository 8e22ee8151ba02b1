#pragma once

#include <vector>

#include "qbc/forward.hpp"
#include "qbc/graph.hpp"

namespace qbc {

// dLoss/dBias per layer; entries for layers without a bias stay empty.
struct BiasGrads {
    std::vector<std::vector<double>> per_layer;
};

// Reverse pass restricted to bias gradients: propagates logits_grad through
// the graph and sums dLoss/dPreactivation per output channel. The trace must
// come from a captured forward pass on the same graph and batch.
//
// With `quant`, gradients flow through the simulated quantizers with the
// clipped straight-through estimator: identity for post_raw values inside
// the grid's representable range, zero outside. ReLU/ReLU6 contribute their
// usual masks (strictly inside (0,6) for ReLU6).
BiasGrads backward_bias_grads(const Graph& g, const ActivationTrace& trace,
                              const std::vector<double>& logits_grad,
                              const QuantView* quant = nullptr);

} // namespace qbc
