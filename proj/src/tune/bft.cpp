#include "qbc/bft.hpp"

#include <cmath>
#include <numeric>

#include "qbc/backward.hpp"
#include "qbc/errors.hpp"
#include "qbc/ibc.hpp"
#include "qbc/loss.hpp"
#include "qbc/rng.hpp"

namespace qbc {
namespace {

struct AdamState {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    int64_t t = 0;
};

Tensor gather_rows(const Tensor& batch, const std::vector<int64_t>& idx, size_t lo, size_t hi) {
    const int64_t per = batch.numel() / batch.shape[0];
    Tensor out;
    out.shape = batch.shape;
    out.shape[0] = static_cast<int64_t>(hi - lo);
    out.data.reserve(static_cast<size_t>(out.shape[0] * per));
    for (size_t i = lo; i < hi; ++i) {
        const float* src = batch.data.data() + idx[i] * per;
        out.data.insert(out.data.end(), src, src + per);
    }
    return out;
}

} // namespace

BftResult bft_run(const Graph& fp_graph, const QuantizedModel& qmodel, const Tensor& tuning_set,
                  const BftConfig& cfg) {
    BftResult res;
    res.model = qmodel;
    if (cfg.schedule.empty()) return res; // nothing to do, model unchanged

    const int64_t n = tuning_set.shape[0];
    if (cfg.minibatch < 1 || cfg.minibatch > n)
        throw ValidationError("bft: minibatch size must be in [1, tuning-set size]");
    for (const LrStage& s : cfg.schedule)
        if (s.mini_epochs < 1) throw ValidationError("bft: mini_epochs must be >= 1");

    QuantizedModel& qm = res.model;
    const QuantView view = qm.view();

    // Frozen teacher: logits cached once for the whole tuning set.
    const Tensor teacher_all = forward(fp_graph, tuning_set, false).logits;
    const int64_t classes = teacher_all.shape[1];

    // Full-precision working biases + Adam moments, indexed by layer.
    const size_t nlayers = qm.graph.layers.size();
    std::vector<std::vector<double>> biases(nlayers);
    AdamState adam;
    adam.m.resize(nlayers);
    adam.v.resize(nlayers);
    for (size_t l = 0; l < nlayers; ++l) {
        if (!qm.graph.layers[l].has_bias()) continue;
        const auto& b = qm.graph.layers[l].bias;
        biases[l].assign(b.begin(), b.end());
        adam.m[l].assign(b.size(), 0.0);
        adam.v[l].assign(b.size(), 0.0);
    }

    auto inject = [&]() {
        for (size_t l = 0; l < nlayers; ++l) {
            if (biases[l].empty()) continue;
            auto& b = qm.graph.layers[l].bias;
            for (size_t i = 0; i < b.size(); ++i) b[i] = biases[l][i];
        }
    };

    auto full_loss = [&]() {
        inject();
        const Tensor student = forward_quant(qm, tuning_set, false).logits;
        return distillation_loss_value(teacher_all, student);
    };

    res.history.boundary_losses.push_back(full_loss());

    std::vector<int64_t> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);

    int64_t global_epoch = 0;
    int64_t step = 0;
    for (const LrStage& stage : cfg.schedule) {
        for (int ep = 0; ep < stage.mini_epochs; ++ep, ++global_epoch) {
            Rng rng = Rng::substream(cfg.seed, 0x8f7u, static_cast<uint64_t>(global_epoch));
            std::iota(order.begin(), order.end(), 0);
            rng.shuffle(order.data(), order.size());

            for (size_t lo = 0; lo < static_cast<size_t>(n); lo += static_cast<size_t>(cfg.minibatch)) {
                const size_t hi = std::min(lo + static_cast<size_t>(cfg.minibatch),
                                           static_cast<size_t>(n));
                const Tensor mb = gather_rows(tuning_set, order, lo, hi);
                Tensor teacher_mb;
                teacher_mb.shape = {static_cast<int64_t>(hi - lo), classes};
                teacher_mb.data.reserve((hi - lo) * static_cast<size_t>(classes));
                for (size_t i = lo; i < hi; ++i) {
                    const float* src = teacher_all.data.data() + order[i] * classes;
                    teacher_mb.data.insert(teacher_mb.data.end(), src, src + classes);
                }

                inject();
                const ForwardResult fwd = forward_quant(qm, mb, /*capture=*/true);
                const DistillationLoss dl = distillation_loss(teacher_mb, fwd.logits);
                if (!std::isfinite(dl.loss))
                    throw NumericError("bft: non-finite loss at step " + std::to_string(step) +
                                       " (lr " + std::to_string(stage.lr) + ")");

                const BiasGrads grads =
                    backward_bias_grads(qm.graph, fwd.trace, dl.grad, &view);

                ++adam.t;
                const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(adam.t));
                const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(adam.t));
                for (size_t l = 0; l < nlayers; ++l) {
                    if (biases[l].empty() || grads.per_layer[l].empty()) continue;
                    auto& m = adam.m[l];
                    auto& v = adam.v[l];
                    const auto& g = grads.per_layer[l];
                    for (size_t i = 0; i < biases[l].size(); ++i) {
                        m[i] = cfg.adam_beta1 * m[i] + (1.0 - cfg.adam_beta1) * g[i];
                        v[i] = cfg.adam_beta2 * v[i] + (1.0 - cfg.adam_beta2) * g[i] * g[i];
                        const double mhat = m[i] / bc1;
                        const double vhat = v[i] / bc2;
                        biases[l][i] -= stage.lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
                    }
                }
                res.history.steps.push_back({step, stage.lr, dl.loss});
                ++step;
            }
        }
        res.history.boundary_losses.push_back(full_loss());
    }

    res.history.final_loss = res.history.boundary_losses.back();
    inject();
    for (size_t l = 0; l < nlayers; ++l)
        if (qm.graph.layers[l].has_bias()) qm.requantize_bias(static_cast<int>(l));
    {
        const Tensor student = forward_quant(qm, tuning_set, false).logits;
        res.history.final_loss_requantized = distillation_loss_value(teacher_all, student);
    }
    return res;
}

} // namespace qbc
