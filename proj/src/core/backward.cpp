#include "qbc/backward.hpp"

#include <algorithm>
#include <cmath>

#include "qbc/errors.hpp"

namespace qbc {
namespace {

struct PadInfo {
    int64_t top = 0;
    int64_t left = 0;
};

PadInfo same_padding(int64_t h, int64_t w, int64_t kh, int64_t kw, int64_t stride,
                     int64_t oh, int64_t ow) {
    PadInfo p;
    p.top = std::max<int64_t>((oh - 1) * stride + kh - h, 0) / 2;
    p.left = std::max<int64_t>((ow - 1) * stride + kw - w, 0) / 2;
    return p;
}

} // namespace

BiasGrads backward_bias_grads(const Graph& g, const ActivationTrace& trace,
                              const std::vector<double>& logits_grad, const QuantView* quant) {
    const size_t nlayers = g.layers.size();
    if (trace.layers.size() != nlayers)
        throw ValidationError("backward: trace does not cover every layer");
    for (size_t i = 0; i < nlayers; ++i)
        if (trace.layers[i].pre.empty())
            throw ValidationError("backward: missing trace entry for layer " +
                                  std::to_string(i) + " (" + g.layers[i].name + ")");

    const int out_idx = g.output_index();
    const Tensor& out_t = trace.layers[static_cast<size_t>(out_idx)].post;
    if (static_cast<int64_t>(logits_grad.size()) != out_t.numel())
        throw ValidationError("backward: logits gradient size mismatch");

    // Upstream gradients w.r.t. each layer's post tensor.
    std::vector<std::vector<double>> dpost(nlayers);
    for (size_t i = 0; i < nlayers; ++i)
        dpost[i].assign(static_cast<size_t>(trace.layers[i].post.numel()), 0.0);
    dpost[static_cast<size_t>(out_idx)] = logits_grad;

    BiasGrads grads;
    grads.per_layer.resize(nlayers);

    std::vector<double> dpre;
    for (int l = out_idx; l >= 0; --l) {
        const LayerSpec& layer = g.layers[static_cast<size_t>(l)];
        const LayerTensors& lt = trace.layers[static_cast<size_t>(l)];
        std::vector<double>& g_out = dpost[static_cast<size_t>(l)];

        if (quant != nullptr) {
            const QuantGrid& ag = quant->act_grids[static_cast<size_t>(l)];
            if (!ag.passthrough) {
                const double lo = ag.cmin();
                const double hi = ag.cmax();
                const float* raw = lt.post_raw.data.data();
                for (size_t i = 0; i < g_out.size(); ++i)
                    if (raw[i] < lo || raw[i] > hi) g_out[i] = 0.0;
            }
        }

        dpre.assign(g_out.begin(), g_out.end());
        if (layer.act == Activation::ReLU) {
            const float* pre = lt.pre.data.data();
            for (size_t i = 0; i < dpre.size(); ++i)
                if (!(pre[i] > 0.0f)) dpre[i] = 0.0;
        } else if (layer.act == Activation::ReLU6) {
            const float* pre = lt.pre.data.data();
            for (size_t i = 0; i < dpre.size(); ++i)
                if (!(pre[i] > 0.0f && pre[i] < 6.0f)) dpre[i] = 0.0;
        }

        const Tensor& pre_t = lt.pre;
        const int64_t co = pre_t.shape[3];
        if (layer.has_bias()) {
            std::vector<double>& bg = grads.per_layer[static_cast<size_t>(l)];
            bg.assign(static_cast<size_t>(co), 0.0);
            const int64_t pixels = pre_t.numel() / co;
            const double* d = dpre.data();
            for (int64_t p = 0; p < pixels; ++p, d += co)
                for (int64_t c = 0; c < co; ++c) bg[static_cast<size_t>(c)] += d[c];
        }

        // Propagate into producers. Gradients w.r.t. the graph input are not
        // needed by any caller and are dropped.
        auto sink = [&](int ref) -> std::vector<double>* {
            return ref == -1 ? nullptr : &dpost[static_cast<size_t>(ref)];
        };
        auto in_shape = [&](int ref) -> const Tensor& {
            return ref == -1 ? trace.network_input : trace.layers[static_cast<size_t>(ref)].post;
        };

        switch (layer.kind) {
        case LayerKind::Conv2D: {
            std::vector<double>* dx = sink(layer.inputs[0]);
            if (dx == nullptr) break;
            const Tensor& in = in_shape(layer.inputs[0]);
            const auto& ws = layer.weights.shape;
            const int64_t kh = ws[0], kw = ws[1], cin = ws[2];
            const int64_t n = in.shape[0], h = in.shape[1], w = in.shape[2];
            const int64_t oh = pre_t.shape[1], ow = pre_t.shape[2];
            const PadInfo pad = layer.padding == Padding::Same
                                    ? same_padding(h, w, kh, kw, layer.stride, oh, ow)
                                    : PadInfo{};
            const float* wdata = layer.weights.data.data();
            for (int64_t b = 0; b < n; ++b)
                for (int64_t oy = 0; oy < oh; ++oy)
                    for (int64_t ox = 0; ox < ow; ++ox) {
                        const double* dyrow = dpre.data() + ((b * oh + oy) * ow + ox) * co;
                        for (int64_t ky = 0; ky < kh; ++ky) {
                            const int64_t iy = oy * layer.stride + ky - pad.top;
                            if (iy < 0 || iy >= h) continue;
                            for (int64_t kx = 0; kx < kw; ++kx) {
                                const int64_t ix = ox * layer.stride + kx - pad.left;
                                if (ix < 0 || ix >= w) continue;
                                double* dxrow = dx->data() + ((b * h + iy) * w + ix) * cin;
                                const float* wrow = wdata + ((ky * kw + kx) * cin) * co;
                                for (int64_t ci = 0; ci < cin; ++ci) {
                                    double s = 0.0;
                                    const float* wc = wrow + ci * co;
                                    for (int64_t c = 0; c < co; ++c)
                                        s += dyrow[c] * static_cast<double>(wc[c]);
                                    dxrow[ci] += s;
                                }
                            }
                        }
                    }
            break;
        }
        case LayerKind::DepthwiseConv2D: {
            std::vector<double>* dx = sink(layer.inputs[0]);
            if (dx == nullptr) break;
            const Tensor& in = in_shape(layer.inputs[0]);
            const auto& ws = layer.weights.shape;
            const int64_t kh = ws[0], kw = ws[1], c = ws[2];
            const int64_t n = in.shape[0], h = in.shape[1], w = in.shape[2];
            const int64_t oh = pre_t.shape[1], ow = pre_t.shape[2];
            const PadInfo pad = layer.padding == Padding::Same
                                    ? same_padding(h, w, kh, kw, layer.stride, oh, ow)
                                    : PadInfo{};
            const float* wdata = layer.weights.data.data();
            for (int64_t b = 0; b < n; ++b)
                for (int64_t oy = 0; oy < oh; ++oy)
                    for (int64_t ox = 0; ox < ow; ++ox) {
                        const double* dyrow = dpre.data() + ((b * oh + oy) * ow + ox) * c;
                        for (int64_t ky = 0; ky < kh; ++ky) {
                            const int64_t iy = oy * layer.stride + ky - pad.top;
                            if (iy < 0 || iy >= h) continue;
                            for (int64_t kx = 0; kx < kw; ++kx) {
                                const int64_t ix = ox * layer.stride + kx - pad.left;
                                if (ix < 0 || ix >= w) continue;
                                double* dxrow = dx->data() + ((b * h + iy) * w + ix) * c;
                                const float* wrow = wdata + (ky * kw + kx) * c;
                                for (int64_t ch = 0; ch < c; ++ch)
                                    dxrow[ch] += dyrow[ch] * static_cast<double>(wrow[ch]);
                            }
                        }
                    }
            break;
        }
        case LayerKind::Dense: {
            std::vector<double>* dx = sink(layer.inputs[0]);
            if (dx == nullptr) break;
            const Tensor& in = in_shape(layer.inputs[0]);
            const int64_t n = in.shape[0];
            const int64_t d = in.numel() / n;
            const int64_t u = co;
            const float* wdata = layer.weights.data.data();
            for (int64_t b = 0; b < n; ++b) {
                const double* dyrow = dpre.data() + b * u;
                double* dxrow = dx->data() + b * d;
                for (int64_t k = 0; k < d; ++k) {
                    double s = 0.0;
                    const float* wrow = wdata + k * u;
                    for (int64_t c = 0; c < u; ++c) s += dyrow[c] * static_cast<double>(wrow[c]);
                    dxrow[k] += s;
                }
            }
            break;
        }
        case LayerKind::AvgPool: {
            std::vector<double>* dx = sink(layer.inputs[0]);
            if (dx == nullptr) break;
            const Tensor& in = in_shape(layer.inputs[0]);
            const int64_t n = in.shape[0], h = in.shape[1], w = in.shape[2], c = in.shape[3];
            const int64_t ph = layer.pool_h > 0 ? layer.pool_h : h;
            const int64_t pw = layer.pool_w > 0 ? layer.pool_w : w;
            const int64_t oh = pre_t.shape[1], ow = pre_t.shape[2];
            const double inv_count = 1.0 / static_cast<double>(ph * pw);
            for (int64_t b = 0; b < n; ++b)
                for (int64_t oy = 0; oy < oh; ++oy)
                    for (int64_t ox = 0; ox < ow; ++ox) {
                        const double* dyrow = dpre.data() + ((b * oh + oy) * ow + ox) * c;
                        for (int64_t ky = 0; ky < ph; ++ky)
                            for (int64_t kx = 0; kx < pw; ++kx) {
                                double* dxrow =
                                    dx->data() + ((b * h + oy * layer.stride + ky) * w +
                                                  ox * layer.stride + kx) *
                                                     c;
                                for (int64_t ch = 0; ch < c; ++ch)
                                    dxrow[ch] += dyrow[ch] * inv_count;
                            }
                    }
            break;
        }
        case LayerKind::Add: {
            for (int ref : layer.inputs) {
                std::vector<double>* dx = sink(ref);
                if (dx == nullptr) continue;
                for (size_t i = 0; i < dpre.size(); ++i) (*dx)[i] += dpre[i];
            }
            break;
        }
        case LayerKind::Concat: {
            const int64_t n = pre_t.shape[0], h = pre_t.shape[1], w = pre_t.shape[2];
            int64_t offset = 0;
            for (int ref : layer.inputs) {
                const Tensor& in = in_shape(ref);
                const int64_t ci = in.shape[3];
                std::vector<double>* dx = sink(ref);
                if (dx != nullptr) {
                    for (int64_t b = 0; b < n; ++b)
                        for (int64_t y = 0; y < h; ++y)
                            for (int64_t x = 0; x < w; ++x) {
                                const double* dyrow =
                                    dpre.data() + (((b * h + y) * w + x) * co) + offset;
                                double* dxrow = dx->data() + ((b * h + y) * w + x) * ci;
                                for (int64_t ch = 0; ch < ci; ++ch) dxrow[ch] += dyrow[ch];
                            }
                }
                offset += ci;
            }
            break;
        }
        }
    }
    return grads;
}

} // namespace qbc
