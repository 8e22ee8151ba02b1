#pragma once

#include <cstdint>

#include "qbc/graph.hpp"
#include "qbc/tensor.hpp"

namespace qbc::fixtures {

// Seeded toy networks and synthetic datasets. Everything derives
// deterministically from the seed, so the repository ships no binary blobs;
// the gen-fixtures CLI command regenerates identical files anywhere.

// Depthwise-separable toy classifier: conv3x3 -> dw3x3 -> conv1x1 -> dw3x3
// -> conv1x1 -> global avg pool -> dense, ReLU6 throughout, 8x8x3 input,
// 10 classes. Weights are normalized on a probe batch so pre-activations
// span the ReLU6 range with a few channels pushed into saturation, and the
// logit layer is scaled for a confident teacher. Channel 0 of the first
// pointwise layer is constructed dead (all-zero weights and bias).
Graph make_dwnet(uint64_t seed);

// Same network with synthetic batch-norm parameters attached to the conv
// and dense layers, built so that folding them reproduces make_dwnet(seed)
// exactly.
Graph make_dwnet_bn(uint64_t seed);

// Class-structured images in [0,1]: a convex blend of one of ten seeded
// prototypes with fresh noise. `stream` separates calibration / tuning /
// holdout draws from one seed.
Tensor make_images(uint64_t seed, uint64_t stream, int64_t count);

struct FixtureSet {
    Graph model;
    Graph model_bn;
    Tensor calib;    // 64 images
    Tensor ibc_pool; // 64 images
    Tensor tune;     // 512 images
    Tensor holdout;  // 256 images
    std::vector<int64_t> holdout_labels; // teacher argmax
};

FixtureSet make_fixture_set(uint64_t seed);

} // namespace qbc::fixtures
