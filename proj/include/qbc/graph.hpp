#pragma once

#include <optional>
#include <string>
#include <vector>

#include "qbc/tensor.hpp"

namespace qbc {

enum class LayerKind { Conv2D, DepthwiseConv2D, Dense, AvgPool, Add, Concat };
enum class Activation { None, ReLU, ReLU6 };
enum class Padding { Valid, Same };

const char* to_string(LayerKind k);
const char* to_string(Activation a);
const char* to_string(Padding p);

// Batch-normalization parameters attached to a conv/dense layer, applied
// after the bias and before the activation until folded away.
struct BatchNorm {
    std::vector<float> gamma;
    std::vector<float> beta;
    std::vector<float> mean;
    std::vector<float> variance;
    double epsilon = 1e-5;
};

struct LayerSpec {
    std::string name;
    LayerKind kind = LayerKind::Conv2D;
    std::vector<int> inputs; // layer indices; -1 is the graph input
    Activation act = Activation::None;
    int stride = 1;
    Padding padding = Padding::Valid;

    Tensor weights;           // H,W,in,out; empty for AvgPool/Add/Concat
    std::vector<double> bias; // one per output channel; may be empty. Kept in
                              // double so iterative corrections accumulate at
                              // full precision; serialization narrows where
                              // the format says so.
    int64_t fan_in_k = 0;     // kernel elements per output-channel computation

    // AvgPool window; 0 means global (whole spatial extent).
    int pool_h = 0;
    int pool_w = 0;

    std::optional<BatchNorm> bn;
    std::vector<int> dead_channels; // zeroed by the dead-channel pass

    bool has_weights() const {
        return kind == LayerKind::Conv2D || kind == LayerKind::DepthwiseConv2D ||
               kind == LayerKind::Dense;
    }
    bool has_bias() const { return !bias.empty(); }
};

// Topologically ordered DAG; layer i may only consume outputs of layers < i
// or the graph input. The last layer produces the logits.
struct Graph {
    std::vector<int64_t> input_shape; // H, W, C
    std::vector<LayerSpec> layers;
    int output_layer = -1; // -1: last layer

    int output_index() const {
        return output_layer >= 0 ? output_layer : static_cast<int>(layers.size()) - 1;
    }
};

// Inferred output shape of every layer for batch size n. Throws
// ValidationError naming the offending layer on any inconsistency.
std::vector<std::vector<int64_t>> infer_shapes(const Graph& g, int64_t batch);

// Structural checks: ordering, shape propagation, bias lengths, fan_in_k.
// Empty result means the graph is valid; otherwise diagnostics in layer
// order, first entry is the first violated invariant.
std::vector<std::string> topo_validate(const Graph& g);

int64_t out_channels(const LayerSpec& layer);

} // namespace qbc
