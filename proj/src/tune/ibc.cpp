#include "qbc/ibc.hpp"

#include <cmath>

#include "qbc/errors.hpp"
#include "qbc/loss.hpp"

namespace qbc {
namespace {

std::vector<double> channel_means(const Tensor& t) {
    const int64_t c = t.shape[3];
    const int64_t pixels = t.numel() / c;
    std::vector<double> sum(static_cast<size_t>(c), 0.0);
    const float* d = t.data.data();
    for (int64_t p = 0; p < pixels; ++p, d += c)
        for (int64_t ch = 0; ch < c; ++ch) sum[static_cast<size_t>(ch)] += d[ch];
    for (double& v : sum) v /= static_cast<double>(pixels);
    return sum;
}

std::vector<bool> channel_all_zero(const Tensor& t) {
    const int64_t c = t.shape[3];
    const int64_t pixels = t.numel() / c;
    std::vector<bool> zero(static_cast<size_t>(c), true);
    const float* d = t.data.data();
    for (int64_t p = 0; p < pixels; ++p, d += c)
        for (int64_t ch = 0; ch < c; ++ch)
            if (d[ch] != 0.0f) zero[static_cast<size_t>(ch)] = false;
    return zero;
}

} // namespace

IbcResult ibc_run(const Graph& fp_graph, const QuantizedModel& qmodel, const Tensor& batch,
                  const IbcConfig& cfg) {
    if (batch.numel() == 0) throw ValidationError("ibc: empty batch");
    if (fp_graph.layers.size() != qmodel.graph.layers.size())
        throw ValidationError("ibc: model topologies differ");

    IbcResult res;
    res.model = qmodel;
    QuantizedModel& qm = res.model;

    const ForwardResult fp = forward(fp_graph, batch, /*capture=*/true);
    const bool post_mode = cfg.mode == IbcMode::PostActivation;

    for (size_t l = 0; l < qm.graph.layers.size(); ++l) {
        LayerSpec& layer = qm.graph.layers[l];
        if (!layer.has_bias()) {
            IbcReport::Row row;
            row.layer = static_cast<int>(l);
            row.skipped = true;
            res.report.rows.push_back(row);
            continue;
        }

        ForwardResult qres;
        try {
            qres = forward_quant(qm, batch, /*capture=*/true, static_cast<int>(l));
        } catch (const std::exception& e) {
            throw NumericError("ibc: evaluation failed at layer " + std::to_string(l) + " (" +
                               layer.name + "): " + e.what());
        }

        const LayerTensors& fp_lt = fp.trace.layers[l];
        const LayerTensors& q_lt = qres.trace.layers[l];
        // Post mode measures what the next layer actually consumes; pre mode
        // reads the exact accumulator means so repeated passes settle at
        // double precision.
        const std::vector<double> fp_mean =
            post_mode ? channel_means(fp_lt.post) : fp_lt.pre_channel_mean;
        const std::vector<double> q_mean =
            post_mode ? channel_means(q_lt.post) : q_lt.pre_channel_mean;

        std::vector<bool> fp_zero, q_zero;
        if (post_mode) {
            fp_zero = channel_all_zero(fp_lt.post);
            q_zero = channel_all_zero(q_lt.post);
        }

        for (size_t ch = 0; ch < layer.bias.size(); ++ch) {
            const double delta = fp_mean[ch] - q_mean[ch];
            if (!std::isfinite(delta))
                throw NumericError("ibc: non-finite shift at layer " + std::to_string(l) +
                                   " channel " + std::to_string(ch));
            layer.bias[ch] += delta;

            IbcReport::Row row;
            row.layer = static_cast<int>(l);
            row.channel = static_cast<int>(ch);
            row.delta = delta;
            if (post_mode)
                row.relu_dead = (q_zero[ch] && fp_mean[ch] > 0.0) ||
                                (fp_zero[ch] && q_mean[ch] > 0.0);
            res.report.rows.push_back(row);
        }
        if (cfg.bias_requantize) qm.requantize_bias(static_cast<int>(l));

        // Re-measure the layer with the corrected bias; its inputs are
        // unchanged, so the cached prefix activations can be reused.
        std::vector<const Tensor*> ins;
        for (int ref : layer.inputs)
            ins.push_back(ref == -1 ? &qres.trace.network_input
                                    : &qres.trace.layers[static_cast<size_t>(ref)].post);
        const LayerTensors redo = eval_layer(qm.graph, static_cast<int>(l), ins,
                                             &qm.layers[l].a_grid);
        const std::vector<double> new_mean =
            post_mode ? channel_means(redo.post) : redo.pre_channel_mean;
        size_t row_base = res.report.rows.size() - layer.bias.size();
        for (size_t ch = 0; ch < layer.bias.size(); ++ch)
            res.report.rows[row_base + ch].residual = fp_mean[ch] - new_mean[ch];
    }
    return res;
}

std::vector<IbcSweepRow> ibc_sweep(const Graph& fp_graph, const QuantizedModel& qmodel,
                                   const Tensor& pool, const std::vector<int64_t>& sizes,
                                   const Tensor& eval_batch, const IbcConfig& cfg) {
    const Tensor teacher = forward(fp_graph, eval_batch, false).logits;
    std::vector<IbcSweepRow> rows;
    for (int64_t s : sizes) {
        if (s < 1 || s > pool.shape[0])
            throw ValidationError("ibc sweep: batch size " + std::to_string(s) +
                                  " outside pool of " + std::to_string(pool.shape[0]));
        const Tensor sub = slice_batch(pool, 0, s);
        IbcResult r = ibc_run(fp_graph, qmodel, sub, cfg);
        const Tensor student = forward_quant(r.model, eval_batch, false).logits;
        rows.push_back({s, distillation_loss_value(teacher, student)});
    }
    return rows;
}

Tensor slice_batch(const Tensor& batch, int64_t start, int64_t count) {
    const int64_t per = batch.numel() / batch.shape[0];
    Tensor out;
    out.shape = batch.shape;
    out.shape[0] = count;
    out.data.assign(batch.data.begin() + start * per,
                    batch.data.begin() + (start + count) * per);
    return out;
}

} // namespace qbc
