#include "qbc/forward.hpp"

#include <algorithm>
#include <cmath>

#include "qbc/errors.hpp"
#include "qbc/kernels.hpp"

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

void narrow_row(float* dst, const double* acc, int64_t n) {
    for (int64_t i = 0; i < n; ++i) dst[i] = static_cast<float>(acc[i]);
}

void apply_batchnorm(Tensor& pre, const BatchNorm& bn) {
    const int64_t c = pre.shape[3];
    const int64_t pixels = pre.numel() / c;
    std::vector<double> mul(static_cast<size_t>(c)), add(static_cast<size_t>(c));
    for (int64_t i = 0; i < c; ++i) {
        const double var = bn.variance[static_cast<size_t>(i)];
        if (var < 0.0) throw NumericError("batch norm: negative variance");
        const double f = bn.gamma[static_cast<size_t>(i)] / std::sqrt(var + bn.epsilon);
        mul[static_cast<size_t>(i)] = f;
        add[static_cast<size_t>(i)] =
            bn.beta[static_cast<size_t>(i)] - bn.mean[static_cast<size_t>(i)] * f;
    }
    float* d = pre.data.data();
    for (int64_t p = 0; p < pixels; ++p, d += c)
        for (int64_t i = 0; i < c; ++i)
            d[i] = static_cast<float>(static_cast<double>(d[i]) * mul[static_cast<size_t>(i)] +
                                      add[static_cast<size_t>(i)]);
}

struct LinearOut {
    Tensor pre;
    std::vector<double> channel_mean; // exact double means, before narrowing
};

LinearOut compute_linear(const Graph& g, int index, const std::vector<const Tensor*>& ins) {
    const LayerSpec& layer = g.layers[static_cast<size_t>(index)];
    const auto& km = kern::ops();

    switch (layer.kind) {
    case LayerKind::Conv2D: {
        const Tensor& in = *ins[0];
        const auto& ws = layer.weights.shape;
        const int64_t kh = ws[0], kw = ws[1], cin = ws[2], co = ws[3];
        const int64_t n = in.shape[0], h = in.shape[1], w = in.shape[2];
        const int64_t oh = layer.padding == Padding::Same
                               ? (h + layer.stride - 1) / layer.stride
                               : (h - kh) / layer.stride + 1;
        const int64_t ow = layer.padding == Padding::Same
                               ? (w + layer.stride - 1) / layer.stride
                               : (w - kw) / layer.stride + 1;
        const PadInfo pad = layer.padding == Padding::Same
                                ? same_padding(h, w, kh, kw, layer.stride, oh, ow)
                                : PadInfo{};
        LinearOut out;
        out.pre = Tensor({n, oh, ow, co});
        out.channel_mean.assign(static_cast<size_t>(co), 0.0);
        std::vector<double> bias0(static_cast<size_t>(co), 0.0);
        for (size_t i = 0; i < layer.bias.size(); ++i) bias0[i] = layer.bias[i];
        std::vector<double> acc(static_cast<size_t>(co));
        const float* wdata = layer.weights.data.data();
        for (int64_t b = 0; b < n; ++b)
            for (int64_t oy = 0; oy < oh; ++oy)
                for (int64_t ox = 0; ox < ow; ++ox) {
                    std::copy(bias0.begin(), bias0.end(), acc.begin());
                    for (int64_t ky = 0; ky < kh; ++ky) {
                        const int64_t iy = oy * layer.stride + ky - pad.top;
                        if (iy < 0 || iy >= h) continue;
                        for (int64_t kx = 0; kx < kw; ++kx) {
                            const int64_t ix = ox * layer.stride + kx - pad.left;
                            if (ix < 0 || ix >= w) continue;
                            const float* xrow = in.row(b, iy, ix);
                            const float* wrow = wdata + ((ky * kw + kx) * cin) * co;
                            for (int64_t ci = 0; ci < cin; ++ci)
                                km.axpy(acc.data(), wrow + ci * co, xrow[ci],
                                        static_cast<size_t>(co));
                        }
                    }
                    for (int64_t i = 0; i < co; ++i)
                        out.channel_mean[static_cast<size_t>(i)] += acc[static_cast<size_t>(i)];
                    narrow_row(out.pre.row(b, oy, ox), acc.data(), co);
                }
        for (double& v : out.channel_mean) v /= static_cast<double>(n * oh * ow);
        return out;
    }
    case LayerKind::DepthwiseConv2D: {
        const Tensor& in = *ins[0];
        const auto& ws = layer.weights.shape;
        const int64_t kh = ws[0], kw = ws[1], c = ws[2];
        const int64_t n = in.shape[0], h = in.shape[1], w = in.shape[2];
        const int64_t oh = layer.padding == Padding::Same
                               ? (h + layer.stride - 1) / layer.stride
                               : (h - kh) / layer.stride + 1;
        const int64_t ow = layer.padding == Padding::Same
                               ? (w + layer.stride - 1) / layer.stride
                               : (w - kw) / layer.stride + 1;
        const PadInfo pad = layer.padding == Padding::Same
                                ? same_padding(h, w, kh, kw, layer.stride, oh, ow)
                                : PadInfo{};
        LinearOut out;
        out.pre = Tensor({n, oh, ow, c});
        out.channel_mean.assign(static_cast<size_t>(c), 0.0);
        std::vector<double> bias0(static_cast<size_t>(c), 0.0);
        for (size_t i = 0; i < layer.bias.size(); ++i) bias0[i] = layer.bias[i];
        std::vector<double> acc(static_cast<size_t>(c));
        const float* wdata = layer.weights.data.data();
        for (int64_t b = 0; b < n; ++b)
            for (int64_t oy = 0; oy < oh; ++oy)
                for (int64_t ox = 0; ox < ow; ++ox) {
                    std::copy(bias0.begin(), bias0.end(), acc.begin());
                    for (int64_t ky = 0; ky < kh; ++ky) {
                        const int64_t iy = oy * layer.stride + ky - pad.top;
                        if (iy < 0 || iy >= h) continue;
                        for (int64_t kx = 0; kx < kw; ++kx) {
                            const int64_t ix = ox * layer.stride + kx - pad.left;
                            if (ix < 0 || ix >= w) continue;
                            km.mul_acc(acc.data(), in.row(b, iy, ix),
                                       wdata + (ky * kw + kx) * c, static_cast<size_t>(c));
                        }
                    }
                    for (int64_t i = 0; i < c; ++i)
                        out.channel_mean[static_cast<size_t>(i)] += acc[static_cast<size_t>(i)];
                    narrow_row(out.pre.row(b, oy, ox), acc.data(), c);
                }
        for (double& v : out.channel_mean) v /= static_cast<double>(n * oh * ow);
        return out;
    }
    case LayerKind::Dense: {
        const Tensor& in = *ins[0];
        const int64_t n = in.shape[0];
        const int64_t d = in.numel() / n;
        const int64_t u = layer.weights.shape[3];
        LinearOut out;
        out.pre = Tensor({n, 1, 1, u});
        out.channel_mean.assign(static_cast<size_t>(u), 0.0);
        std::vector<double> bias0(static_cast<size_t>(u), 0.0);
        for (size_t i = 0; i < layer.bias.size(); ++i) bias0[i] = layer.bias[i];
        std::vector<double> acc(static_cast<size_t>(u));
        const float* wdata = layer.weights.data.data();
        for (int64_t b = 0; b < n; ++b) {
            std::copy(bias0.begin(), bias0.end(), acc.begin());
            const float* xb = in.data.data() + b * d;
            for (int64_t k = 0; k < d; ++k)
                km.axpy(acc.data(), wdata + k * u, xb[k], static_cast<size_t>(u));
            for (int64_t i = 0; i < u; ++i)
                out.channel_mean[static_cast<size_t>(i)] += acc[static_cast<size_t>(i)];
            narrow_row(out.pre.row(b, 0, 0), acc.data(), u);
        }
        for (double& v : out.channel_mean) v /= static_cast<double>(n);
        return out;
    }
    case LayerKind::AvgPool: {
        const Tensor& in = *ins[0];
        const int64_t n = in.shape[0], h = in.shape[1], w = in.shape[2], c = in.shape[3];
        const int64_t ph = layer.pool_h > 0 ? layer.pool_h : h;
        const int64_t pw = layer.pool_w > 0 ? layer.pool_w : w;
        const int64_t oh = (h - ph) / layer.stride + 1;
        const int64_t ow = (w - pw) / layer.stride + 1;
        LinearOut out;
        out.pre = Tensor({n, oh, ow, c});
        out.channel_mean.assign(static_cast<size_t>(c), 0.0);
        const double inv_count = 1.0 / static_cast<double>(ph * pw);
        std::vector<double> acc(static_cast<size_t>(c));
        for (int64_t b = 0; b < n; ++b)
            for (int64_t oy = 0; oy < oh; ++oy)
                for (int64_t ox = 0; ox < ow; ++ox) {
                    std::fill(acc.begin(), acc.end(), 0.0);
                    for (int64_t ky = 0; ky < ph; ++ky)
                        for (int64_t kx = 0; kx < pw; ++kx)
                            km.add_acc(acc.data(),
                                       in.row(b, oy * layer.stride + ky, ox * layer.stride + kx),
                                       static_cast<size_t>(c));
                    float* dst = out.pre.row(b, oy, ox);
                    for (int64_t i = 0; i < c; ++i) {
                        const double v = acc[static_cast<size_t>(i)] * inv_count;
                        out.channel_mean[static_cast<size_t>(i)] += v;
                        dst[i] = static_cast<float>(v);
                    }
                }
        for (double& v : out.channel_mean) v /= static_cast<double>(n * oh * ow);
        return out;
    }
    case LayerKind::Add: {
        LinearOut out;
        out.pre = Tensor(ins[0]->shape);
        const int64_t c = out.pre.shape[3];
        out.channel_mean.assign(static_cast<size_t>(c), 0.0);
        const int64_t total = out.pre.numel();
        for (int64_t i = 0; i < total; ++i) {
            double s = 0.0;
            for (const Tensor* t : ins) s += static_cast<double>(t->data[static_cast<size_t>(i)]);
            out.channel_mean[static_cast<size_t>(i % c)] += s;
            out.pre.data[static_cast<size_t>(i)] = static_cast<float>(s);
        }
        for (double& v : out.channel_mean) v /= static_cast<double>(total / c);
        return out;
    }
    case LayerKind::Concat: {
        const int64_t n = ins[0]->shape[0], h = ins[0]->shape[1], w = ins[0]->shape[2];
        int64_t c = 0;
        for (const Tensor* t : ins) c += t->shape[3];
        LinearOut out;
        out.pre = Tensor({n, h, w, c});
        out.channel_mean.assign(static_cast<size_t>(c), 0.0);
        for (int64_t b = 0; b < n; ++b)
            for (int64_t y = 0; y < h; ++y)
                for (int64_t x = 0; x < w; ++x) {
                    float* dst = out.pre.row(b, y, x);
                    int64_t off = 0;
                    for (const Tensor* t : ins) {
                        const float* src = t->row(b, y, x);
                        for (int64_t i = 0; i < t->shape[3]; ++i)
                            out.channel_mean[static_cast<size_t>(off + i)] += src[i];
                        std::copy(src, src + t->shape[3], dst);
                        dst += t->shape[3];
                        off += t->shape[3];
                    }
                }
        for (double& v : out.channel_mean) v /= static_cast<double>(n * h * w);
        return out;
    }
    }
    throw ValidationError("unknown layer kind");
}

} // namespace

LayerTensors eval_layer(const Graph& g, int index, const std::vector<const Tensor*>& inputs,
                        const QuantGrid* act_grid) {
    const LayerSpec& layer = g.layers[static_cast<size_t>(index)];
    LayerTensors lt;
    LinearOut lin = compute_linear(g, index, inputs);
    lt.pre = std::move(lin.pre);
    lt.pre_channel_mean = std::move(lin.channel_mean);
    if (layer.bn) {
        if (act_grid != nullptr)
            throw ValidationError("layer " + layer.name +
                                  ": quantized execution requires folded batch norm");
        apply_batchnorm(lt.pre, *layer.bn);
        // the exact pre-norm means no longer describe the tensor
        const int64_t c = lt.pre.shape[3];
        const int64_t pixels = lt.pre.numel() / c;
        std::fill(lt.pre_channel_mean.begin(), lt.pre_channel_mean.end(), 0.0);
        const float* d = lt.pre.data.data();
        for (int64_t p = 0; p < pixels; ++p, d += c)
            for (int64_t i = 0; i < c; ++i)
                lt.pre_channel_mean[static_cast<size_t>(i)] += d[i];
        for (double& v : lt.pre_channel_mean) v /= static_cast<double>(pixels);
    }

    const auto& km = kern::ops();
    lt.post_raw = Tensor(lt.pre.shape);
    switch (layer.act) {
    case Activation::None: lt.post_raw.data = lt.pre.data; break;
    case Activation::ReLU:
        km.relu(lt.post_raw.data.data(), lt.pre.data.data(), lt.pre.data.size());
        break;
    case Activation::ReLU6:
        km.relu6(lt.post_raw.data.data(), lt.pre.data.data(), lt.pre.data.size());
        break;
    }
    if (act_grid != nullptr && !act_grid->passthrough) {
        lt.post = fake_quant(lt.post_raw, *act_grid);
    } else {
        lt.post = lt.post_raw;
    }
    return lt;
}

ForwardResult run_network(const Graph& g, const Tensor& batch, bool capture,
                          const QuantView* quant, int upto) {
    if (batch.shape.size() != 4 || batch.shape[1] != g.input_shape[0] ||
        batch.shape[2] != g.input_shape[1] || batch.shape[3] != g.input_shape[2])
        throw ValidationError("batch shape " + batch.shape_str() +
                              " does not match graph input (H,W,C) expectation");
    if (quant != nullptr && quant->act_grids.size() != g.layers.size())
        throw ValidationError("quant view has wrong number of activation grids");

    const int last = upto >= 0 ? upto : g.output_index();
    if (last < 0 || last >= static_cast<int>(g.layers.size()))
        throw ValidationError("output layer index out of range");

    ForwardResult res;
    Tensor qinput;
    const Tensor* net_in = &batch;
    if (quant != nullptr && !quant->input_grid.passthrough) {
        qinput = fake_quant(batch, quant->input_grid);
        net_in = &qinput;
    }
    if (capture) res.trace.network_input = *net_in;

    std::vector<Tensor> posts(g.layers.size());
    if (capture) res.trace.layers.resize(g.layers.size());

    for (int i = 0; i <= last; ++i) {
        const LayerSpec& layer = g.layers[static_cast<size_t>(i)];
        std::vector<const Tensor*> ins;
        ins.reserve(layer.inputs.size());
        for (int ref : layer.inputs)
            ins.push_back(ref == -1 ? net_in : &posts[static_cast<size_t>(ref)]);
        const QuantGrid* ag =
            quant != nullptr ? &quant->act_grids[static_cast<size_t>(i)] : nullptr;
        LayerTensors lt = eval_layer(g, i, ins, ag);
        posts[static_cast<size_t>(i)] = lt.post;
        if (capture) res.trace.layers[static_cast<size_t>(i)] = std::move(lt);
    }
    res.logits = flatten_to_logits(posts[static_cast<size_t>(last)]);
    return res;
}

Tensor flatten_to_logits(const Tensor& t) {
    Tensor out;
    out.shape = {t.shape[0], t.numel() / t.shape[0]};
    out.data = t.data;
    return out;
}

} // namespace qbc
