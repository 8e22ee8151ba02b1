#include "qbc/graph.hpp"

#include <algorithm>
#include <cmath>

#include "qbc/errors.hpp"

namespace qbc {

const char* to_string(LayerKind k) {
    switch (k) {
    case LayerKind::Conv2D: return "conv2d";
    case LayerKind::DepthwiseConv2D: return "depthwise_conv2d";
    case LayerKind::Dense: return "dense";
    case LayerKind::AvgPool: return "avg_pool";
    case LayerKind::Add: return "add";
    case LayerKind::Concat: return "concat";
    }
    return "?";
}

const char* to_string(Activation a) {
    switch (a) {
    case Activation::None: return "none";
    case Activation::ReLU: return "relu";
    case Activation::ReLU6: return "relu6";
    }
    return "?";
}

const char* to_string(Padding p) { return p == Padding::Valid ? "valid" : "same"; }

int64_t out_channels(const LayerSpec& layer) {
    switch (layer.kind) {
    case LayerKind::Conv2D:
    case LayerKind::Dense: return layer.weights.shape.size() == 4 ? layer.weights.shape[3] : 0;
    case LayerKind::DepthwiseConv2D:
        return layer.weights.shape.size() == 4 ? layer.weights.shape[2] : 0;
    default: return 0;
    }
}

namespace {

int64_t conv_out_dim(int64_t in, int64_t k, int64_t stride, Padding pad) {
    if (pad == Padding::Same) return (in + stride - 1) / stride;
    return (in - k) / stride + 1;
}

[[noreturn]] void shape_fail(const LayerSpec& layer, int index, const std::string& what) {
    throw ValidationError("layer " + std::to_string(index) + " (" + layer.name + ", " +
                          to_string(layer.kind) + "): " + what);
}

} // namespace

std::vector<std::vector<int64_t>> infer_shapes(const Graph& g, int64_t batch) {
    if (g.input_shape.size() != 3)
        throw ValidationError("graph input shape must be rank 3 (H,W,C)");
    std::vector<std::vector<int64_t>> out(g.layers.size());
    const std::vector<int64_t> in0 = {batch, g.input_shape[0], g.input_shape[1],
                                      g.input_shape[2]};

    for (size_t i = 0; i < g.layers.size(); ++i) {
        const LayerSpec& layer = g.layers[i];
        std::vector<std::vector<int64_t>> ins;
        for (int ref : layer.inputs) {
            if (ref < -1 || ref >= static_cast<int>(i))
                shape_fail(layer, static_cast<int>(i), "input reference " + std::to_string(ref) +
                                                           " is not an earlier layer");
            ins.push_back(ref == -1 ? in0 : out[static_cast<size_t>(ref)]);
        }
        if (ins.empty()) shape_fail(layer, static_cast<int>(i), "no inputs");

        switch (layer.kind) {
        case LayerKind::Conv2D: {
            const auto& ws = layer.weights.shape;
            if (ws.size() != 4) shape_fail(layer, static_cast<int>(i), "weights must be rank 4");
            const auto& s = ins[0];
            if (s[3] != ws[2])
                shape_fail(layer, static_cast<int>(i),
                           "input channels " + std::to_string(s[3]) + " != kernel in-channels " +
                               std::to_string(ws[2]));
            const int64_t oh = conv_out_dim(s[1], ws[0], layer.stride, layer.padding);
            const int64_t ow = conv_out_dim(s[2], ws[1], layer.stride, layer.padding);
            if (oh < 1 || ow < 1)
                shape_fail(layer, static_cast<int>(i), "kernel larger than input");
            out[i] = {s[0], oh, ow, ws[3]};
            break;
        }
        case LayerKind::DepthwiseConv2D: {
            const auto& ws = layer.weights.shape;
            if (ws.size() != 4 || ws[3] != 1)
                shape_fail(layer, static_cast<int>(i),
                           "depthwise weights must be rank 4 with multiplier 1");
            const auto& s = ins[0];
            if (s[3] != ws[2])
                shape_fail(layer, static_cast<int>(i), "channel count mismatch");
            const int64_t oh = conv_out_dim(s[1], ws[0], layer.stride, layer.padding);
            const int64_t ow = conv_out_dim(s[2], ws[1], layer.stride, layer.padding);
            if (oh < 1 || ow < 1)
                shape_fail(layer, static_cast<int>(i), "kernel larger than input");
            out[i] = {s[0], oh, ow, s[3]};
            break;
        }
        case LayerKind::Dense: {
            const auto& ws = layer.weights.shape;
            if (ws.size() != 4 || ws[0] != 1 || ws[1] != 1)
                shape_fail(layer, static_cast<int>(i), "dense weights must be 1,1,in,out");
            const auto& s = ins[0];
            const int64_t flat = s[1] * s[2] * s[3];
            if (flat != ws[2])
                shape_fail(layer, static_cast<int>(i),
                           "flattened input " + std::to_string(flat) + " != weight rows " +
                               std::to_string(ws[2]));
            out[i] = {s[0], 1, 1, ws[3]};
            break;
        }
        case LayerKind::AvgPool: {
            const auto& s = ins[0];
            if (layer.padding != Padding::Valid)
                shape_fail(layer, static_cast<int>(i), "avg_pool supports valid padding only");
            const int64_t ph = layer.pool_h > 0 ? layer.pool_h : s[1];
            const int64_t pw = layer.pool_w > 0 ? layer.pool_w : s[2];
            const int64_t oh = conv_out_dim(s[1], ph, layer.stride, Padding::Valid);
            const int64_t ow = conv_out_dim(s[2], pw, layer.stride, Padding::Valid);
            if (oh < 1 || ow < 1)
                shape_fail(layer, static_cast<int>(i), "pool window larger than input");
            out[i] = {s[0], oh, ow, s[3]};
            break;
        }
        case LayerKind::Add: {
            for (size_t j = 1; j < ins.size(); ++j)
                if (ins[j] != ins[0])
                    shape_fail(layer, static_cast<int>(i), "add inputs must have equal shapes");
            out[i] = ins[0];
            break;
        }
        case LayerKind::Concat: {
            int64_t channels = 0;
            for (const auto& s : ins) {
                if (s[0] != ins[0][0] || s[1] != ins[0][1] || s[2] != ins[0][2])
                    shape_fail(layer, static_cast<int>(i),
                               "concat inputs must agree on batch and spatial dims");
                channels += s[3];
            }
            out[i] = {ins[0][0], ins[0][1], ins[0][2], channels};
            break;
        }
        }
    }
    return out;
}

std::vector<std::string> topo_validate(const Graph& g) {
    std::vector<std::string> diags;
    auto complain = [&](size_t i, const std::string& what) {
        diags.push_back("layer " + std::to_string(i) + " (" + g.layers[i].name + "): " + what);
    };

    if (g.layers.empty()) {
        diags.push_back("graph has no layers");
        return diags;
    }
    if (g.input_shape.size() != 3) diags.push_back("input shape must be rank 3 (H,W,C)");
    for (int64_t e : g.input_shape)
        if (e < 1) diags.push_back("input shape extents must be positive");
    if (g.output_layer >= static_cast<int>(g.layers.size()))
        diags.push_back("output layer index out of range");

    for (size_t i = 0; i < g.layers.size(); ++i) {
        const LayerSpec& layer = g.layers[i];
        for (int ref : layer.inputs)
            if (ref < -1 || ref >= static_cast<int>(i))
                complain(i, "references layer " + std::to_string(ref) +
                                " which is not earlier in the order");
        const size_t nin = layer.inputs.size();
        const bool multi = layer.kind == LayerKind::Add || layer.kind == LayerKind::Concat;
        if (multi && nin < 2) complain(i, "needs at least two inputs");
        if (!multi && nin != 1) complain(i, "needs exactly one input");
        if (layer.stride < 1) complain(i, "stride must be >= 1");

        if (layer.has_weights()) {
            if (layer.weights.shape.size() != 4) {
                complain(i, "weights must be rank 4");
                continue;
            }
            const int64_t co = out_channels(layer);
            if (layer.has_bias() && static_cast<int64_t>(layer.bias.size()) != co)
                complain(i, "bias length " + std::to_string(layer.bias.size()) +
                                " != output channels " + std::to_string(co));
            int64_t expect_k = 0;
            const auto& ws = layer.weights.shape;
            if (layer.kind == LayerKind::DepthwiseConv2D)
                expect_k = ws[0] * ws[1];
            else
                expect_k = ws[0] * ws[1] * ws[2];
            if (layer.fan_in_k != expect_k)
                complain(i, "fan_in_k " + std::to_string(layer.fan_in_k) + " != expected " +
                                std::to_string(expect_k));
            if (layer.bn) {
                const size_t c = static_cast<size_t>(co);
                if (layer.bn->gamma.size() != c || layer.bn->beta.size() != c ||
                    layer.bn->mean.size() != c || layer.bn->variance.size() != c)
                    complain(i, "batch-norm parameter lengths != output channels");
            }
        } else {
            if (layer.has_bias()) complain(i, "layer kind cannot carry a bias");
            if (!layer.weights.empty()) complain(i, "layer kind cannot carry weights");
        }
    }
    if (!diags.empty()) return diags;

    try {
        infer_shapes(g, 1);
    } catch (const ValidationError& e) {
        diags.push_back(e.what());
    }
    return diags;
}

} // namespace qbc
