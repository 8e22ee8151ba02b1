#include "qbc/qmodel.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "qbc/errors.hpp"
#include "qbc/kernels.hpp"

namespace qbc {
namespace {

std::vector<int64_t> argmax_rows(const Tensor& logits) {
    const int64_t n = logits.shape[0];
    const int64_t c = logits.numel() / n;
    std::vector<int64_t> out(static_cast<size_t>(n));
    for (int64_t b = 0; b < n; ++b) {
        const float* row = logits.data.data() + b * c;
        int64_t best = 0;
        for (int64_t i = 1; i < c; ++i)
            if (row[i] > row[best]) best = i;
        out[static_cast<size_t>(b)] = best;
    }
    return out;
}

// Per-output-channel mean and population variance of an NHWC tensor.
void channel_moments(const Tensor& t, std::vector<double>& mean, std::vector<double>& var) {
    const int64_t c = t.shape[3];
    const int64_t pixels = t.numel() / c;
    std::vector<double> sum(static_cast<size_t>(c), 0.0), sumsq(static_cast<size_t>(c), 0.0);
    const float* d = t.data.data();
    const auto& km = kern::ops();
    for (int64_t p = 0; p < pixels; ++p, d += c)
        km.moment_acc(sum.data(), sumsq.data(), d, static_cast<size_t>(c));
    mean.resize(static_cast<size_t>(c));
    var.resize(static_cast<size_t>(c));
    const double inv = 1.0 / static_cast<double>(pixels);
    for (int64_t i = 0; i < c; ++i) {
        const double m = sum[static_cast<size_t>(i)] * inv;
        mean[static_cast<size_t>(i)] = m;
        var[static_cast<size_t>(i)] = std::max(sumsq[static_cast<size_t>(i)] * inv - m * m, 0.0);
    }
}

void zero_output_channel(LayerSpec& layer, int64_t ch) {
    const auto& ws = layer.weights.shape;
    float* w = layer.weights.data.data();
    switch (layer.kind) {
    case LayerKind::Conv2D:
    case LayerKind::Dense: {
        const int64_t co = ws[3];
        const int64_t rows = layer.weights.numel() / co;
        for (int64_t r = 0; r < rows; ++r) w[r * co + ch] = 0.0f;
        break;
    }
    case LayerKind::DepthwiseConv2D: {
        const int64_t c = ws[2];
        const int64_t taps = ws[0] * ws[1];
        for (int64_t t = 0; t < taps; ++t) w[t * c + ch] = 0.0f;
        break;
    }
    default: break;
    }
    if (layer.has_bias()) layer.bias[static_cast<size_t>(ch)] = 0.0;
}

} // namespace

Graph fold_batchnorm(const Graph& g) {
    Graph out = g;
    for (size_t li = 0; li < out.layers.size(); ++li) {
        LayerSpec& layer = out.layers[li];
        if (!layer.bn) continue;
        if (!layer.has_weights())
            throw ValidationError("layer " + layer.name + ": batch norm on unweighted layer");
        const BatchNorm& bn = *layer.bn;
        const int64_t co = out_channels(layer);
        std::vector<double> factor(static_cast<size_t>(co));
        for (int64_t c = 0; c < co; ++c) {
            const double var = bn.variance[static_cast<size_t>(c)];
            if (var < 0.0)
                throw NumericError("layer " + layer.name + ": negative batch-norm variance");
            factor[static_cast<size_t>(c)] =
                bn.gamma[static_cast<size_t>(c)] / std::sqrt(var + bn.epsilon);
        }

        float* w = layer.weights.data.data();
        const auto& ws = layer.weights.shape;
        if (layer.kind == LayerKind::DepthwiseConv2D) {
            const int64_t c = ws[2];
            const int64_t taps = ws[0] * ws[1];
            for (int64_t t = 0; t < taps; ++t)
                for (int64_t ch = 0; ch < c; ++ch)
                    w[t * c + ch] = static_cast<float>(static_cast<double>(w[t * c + ch]) *
                                                       factor[static_cast<size_t>(ch)]);
        } else {
            const int64_t rows = layer.weights.numel() / co;
            for (int64_t r = 0; r < rows; ++r)
                for (int64_t ch = 0; ch < co; ++ch)
                    w[r * co + ch] = static_cast<float>(static_cast<double>(w[r * co + ch]) *
                                                        factor[static_cast<size_t>(ch)]);
        }

        if (layer.bias.empty()) layer.bias.assign(static_cast<size_t>(co), 0.0);
        for (int64_t c = 0; c < co; ++c) {
            const double b = layer.bias[static_cast<size_t>(c)];
            layer.bias[static_cast<size_t>(c)] =
                (b - bn.mean[static_cast<size_t>(c)]) * factor[static_cast<size_t>(c)] +
                bn.beta[static_cast<size_t>(c)];
        }
        layer.bn.reset();
    }
    return out;
}

DeadChannelReport drop_dead_channels(Graph& g, const Tensor& calib, double threshold) {
    DeadChannelReport report;
    ForwardResult before = forward(g, calib, /*capture=*/true);
    const std::vector<int64_t> top1_before = argmax_rows(before.logits);

    std::vector<double> mean, var;
    for (size_t li = 0; li < g.layers.size(); ++li) {
        LayerSpec& layer = g.layers[li];
        if (!layer.has_weights()) continue;
        channel_moments(before.trace.layers[li].post, mean, var);
        for (size_t ch = 0; ch < var.size(); ++ch) {
            if (var[ch] >= threshold) continue;
            zero_output_channel(layer, static_cast<int64_t>(ch));
            layer.dead_channels.push_back(static_cast<int>(ch));
            report.zeroed.push_back(
                {static_cast<int>(li), static_cast<int>(ch), mean[ch]});
        }
    }

    if (!report.zeroed.empty()) {
        ForwardResult after = forward(g, calib, /*capture=*/false);
        const std::vector<int64_t> top1_after = argmax_rows(after.logits);
        for (size_t i = 0; i < top1_before.size(); ++i)
            if (top1_before[i] != top1_after[i]) ++report.predictions_changed;
    }
    return report;
}

CalibrationStats collect_calibration_stats(const Graph& g, const Tensor& calib) {
    CalibrationStats stats;
    ForwardResult res = forward(g, calib, /*capture=*/true);
    stats.min_val.resize(g.layers.size());
    stats.max_val.resize(g.layers.size());
    for (size_t i = 0; i < g.layers.size(); ++i) {
        const auto& post = res.trace.layers[i].post.data;
        double mn = post[0], mx = post[0];
        for (float v : post) {
            mn = std::min(mn, static_cast<double>(v));
            mx = std::max(mx, static_cast<double>(v));
        }
        stats.min_val[i] = mn;
        stats.max_val[i] = mx;
    }
    double mn = calib.data[0], mx = calib.data[0];
    for (float v : calib.data) {
        mn = std::min(mn, static_cast<double>(v));
        mx = std::max(mx, static_cast<double>(v));
    }
    stats.input_min = mn;
    stats.input_max = mx;
    return stats;
}

QuantizedModel quantize_model(const Graph& g, const Tensor& calib, int bits_w, int bits_a) {
    for (const LayerSpec& layer : g.layers)
        if (layer.bn)
            throw ValidationError("quantize_model: graph still carries batch norm (layer " +
                                  layer.name + "); fold it first");
    {
        auto diags = topo_validate(g);
        if (!diags.empty()) throw ValidationError("quantize_model: " + diags.front());
    }

    const CalibrationStats stats = collect_calibration_stats(g, calib);

    QuantizedModel qm;
    qm.graph = g;
    qm.bits_w = bits_w;
    qm.bits_a = bits_a;
    qm.input_grid = make_activation_grid(stats.input_min, stats.input_max, bits_a);
    qm.layers.resize(g.layers.size());

    for (size_t i = 0; i < g.layers.size(); ++i) {
        LayerSpec& layer = qm.graph.layers[i];
        LayerQuant& lq = qm.layers[i];
        lq.a_grid = make_activation_grid(stats.min_val[i], stats.max_val[i], bits_a);
        if (!layer.has_weights()) continue;

        lq.has_weights = true;
        QuantizedTensor qw = quantize_weights_symmetric(layer.weights, bits_w);
        lq.w_grid = qw.grid;
        if (!qw.grid.passthrough) {
            lq.w_codes = std::move(qw.codes);
            for (size_t k = 0; k < layer.weights.data.size(); ++k)
                layer.weights.data[k] = static_cast<float>(
                    static_cast<double>(lq.w_codes[k]) * lq.w_grid.scale);
        }

        if (layer.has_bias()) {
            lq.has_bias = true;
            const int in_ref = layer.inputs[0];
            const QuantGrid& in_grid =
                in_ref == -1 ? qm.input_grid : qm.layers[static_cast<size_t>(in_ref)].a_grid;
            QuantizedTensor qb = quantize_bias(layer.bias, lq.w_grid, in_grid);
            lq.b_grid = qb.grid;
            if (!qb.grid.passthrough) layer.bias = dequantize(qb);
        }
    }
    return qm;
}

void QuantizedModel::requantize_bias(int layer) {
    LayerQuant& lq = layers[static_cast<size_t>(layer)];
    if (!lq.has_bias || lq.b_grid.passthrough) return;
    std::vector<double>& bias = graph.layers[static_cast<size_t>(layer)].bias;
    for (double& b : bias) {
        const double c = std::min(
            std::max(kern::round_half_away(b / lq.b_grid.scale),
                     static_cast<double>(lq.b_grid.qmin)),
            static_cast<double>(lq.b_grid.qmax));
        b = c * lq.b_grid.scale;
    }
}

ForwardResult forward_quant(const QuantizedModel& qm, const Tensor& batch, bool capture,
                            int upto) {
    const QuantView v = qm.view();
    return run_network(qm.graph, batch, capture, &v, upto);
}

bool same_except_biases(const QuantizedModel& a, const QuantizedModel& b) {
    if (a.graph.layers.size() != b.graph.layers.size()) return false;
    if (!(a.input_grid == b.input_grid) || a.bits_w != b.bits_w || a.bits_a != b.bits_a)
        return false;
    for (size_t i = 0; i < a.layers.size(); ++i) {
        const LayerQuant& la = a.layers[i];
        const LayerQuant& lb = b.layers[i];
        if (la.has_weights != lb.has_weights || la.has_bias != lb.has_bias) return false;
        if (!(la.w_grid == lb.w_grid) || !(la.b_grid == lb.b_grid) ||
            !(la.a_grid == lb.a_grid))
            return false;
        if (la.w_codes != lb.w_codes) return false;
        const Tensor& wa = a.graph.layers[i].weights;
        const Tensor& wb = b.graph.layers[i].weights;
        if (wa.shape != wb.shape) return false;
        if (!wa.data.empty() &&
            std::memcmp(wa.data.data(), wb.data.data(), wa.data.size() * sizeof(float)) != 0)
            return false;
    }
    return true;
}

} // namespace qbc
