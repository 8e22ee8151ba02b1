#include "qbc/stats.hpp"

#include <cmath>

#include "qbc/errors.hpp"
#include "qbc/kernels.hpp"

namespace qbc {

std::vector<ChannelStats> compute_channel_stats(const ActivationTrace& fp_trace,
                                                const ActivationTrace& q_trace,
                                                StatsWhere where) {
    if (fp_trace.layers.size() != q_trace.layers.size())
        throw ValidationError("channel stats: traces cover different layer counts");

    const auto& km = kern::ops();
    std::vector<ChannelStats> out;
    for (size_t li = 0; li < fp_trace.layers.size(); ++li) {
        const Tensor& x = where == StatsWhere::Post ? fp_trace.layers[li].post
                                                    : fp_trace.layers[li].pre;
        const Tensor& xq = where == StatsWhere::Post ? q_trace.layers[li].post
                                                     : q_trace.layers[li].pre;
        if (!x.same_shape(xq))
            throw ValidationError("channel stats: shape mismatch at layer " +
                                  std::to_string(li));
        const int64_t c = x.shape[3];
        const int64_t pixels = x.numel() / c;
        std::vector<double> xsum(static_cast<size_t>(c), 0.0);
        std::vector<double> xsumsq(static_cast<size_t>(c), 0.0);
        std::vector<double> esum(static_cast<size_t>(c), 0.0);
        std::vector<double> esumsq(static_cast<size_t>(c), 0.0);
        const float* xd = x.data.data();
        const float* qd = xq.data.data();
        for (int64_t p = 0; p < pixels; ++p, xd += c, qd += c) {
            km.moment_acc(xsum.data(), xsumsq.data(), xd, static_cast<size_t>(c));
            km.diff_moment_acc(esum.data(), esumsq.data(), qd, xd, static_cast<size_t>(c));
        }
        const double inv = 1.0 / static_cast<double>(pixels);
        for (int64_t ch = 0; ch < c; ++ch) {
            ChannelStats s;
            s.layer = static_cast<int>(li);
            s.channel = static_cast<int>(ch);
            s.n_samples = pixels;
            s.mas = esum[static_cast<size_t>(ch)] * inv;
            s.signal_energy = xsumsq[static_cast<size_t>(ch)] * inv;
            s.error_energy = esumsq[static_cast<size_t>(ch)] * inv;
            if (s.signal_energy > 0.0) {
                s.rqnsr = std::sqrt(s.error_energy / s.signal_energy);
                s.mssr = s.mas / std::sqrt(s.signal_energy);
            } else {
                s.degenerate = true;
            }
            out.push_back(s);
        }
    }
    return out;
}

std::vector<LayerStats> aggregate_layers(const std::vector<ChannelStats>& stats) {
    std::vector<LayerStats> out;
    size_t i = 0;
    while (i < stats.size()) {
        const int layer = stats[i].layer;
        LayerStats ls;
        ls.layer = layer;
        double mas2 = 0.0, mssr2 = 0.0, rqnsr2 = 0.0;
        int n = 0;
        for (; i < stats.size() && stats[i].layer == layer; ++i, ++n) {
            mas2 += stats[i].mas * stats[i].mas;
            mssr2 += stats[i].mssr * stats[i].mssr;
            rqnsr2 += stats[i].rqnsr * stats[i].rqnsr;
        }
        ls.channels = n;
        ls.rms_mas = std::sqrt(mas2 / n);
        ls.rms_mssr = std::sqrt(mssr2 / n);
        ls.rms_rqnsr = std::sqrt(rqnsr2 / n);
        ls.mssr_to_rqnsr = ls.rms_rqnsr > 0.0 ? ls.rms_mssr / ls.rms_rqnsr : 0.0;
        out.push_back(ls);
    }
    return out;
}

MseDecomposition mse_decomposition(const std::vector<double>& e) {
    if (e.empty()) throw ValidationError("mse_decomposition: empty input");
    MseDecomposition d;
    double sum = 0.0, sumsq = 0.0;
    for (double v : e) {
        sum += v;
        sumsq += v * v;
    }
    const double n = static_cast<double>(e.size());
    const double mean = sum / n;
    d.mean_sq = mean * mean;
    d.mse = sumsq / n;
    double devsq = 0.0;
    for (double v : e) devsq += (v - mean) * (v - mean);
    d.variance = devsq / n;
    return d;
}

} // namespace qbc
