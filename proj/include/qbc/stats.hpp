#pragma once

#include <vector>

#include "qbc/forward.hpp"

namespace qbc {

enum class StatsWhere { Pre, Post };

// Per-(layer, channel) error statistics between a full-precision trace and a
// quantized trace of the same batch:
//   mas           mean of e = x_q - x over all pixels and images
//   signal_energy mean of x^2
//   error_energy  mean of e^2
//   rqnsr         sqrt(error_energy / signal_energy)
//   mssr          mas / sqrt(signal_energy)
// Channels with zero signal energy report both ratios as 0 and are flagged
// degenerate instead of being dropped, so reports stay aligned with the
// model's channel indices.
struct ChannelStats {
    int layer = 0;
    int channel = 0;
    int64_t n_samples = 0;
    double mas = 0.0;
    double signal_energy = 0.0;
    double error_energy = 0.0;
    double rqnsr = 0.0;
    double mssr = 0.0;
    bool degenerate = false;
};

// RMS aggregation over the channels of one layer, plus the share of the
// total error that the mean component explains.
struct LayerStats {
    int layer = 0;
    int channels = 0;
    double rms_mas = 0.0;
    double rms_mssr = 0.0;
    double rms_rqnsr = 0.0;
    double mssr_to_rqnsr = 0.0; // rms_mssr / rms_rqnsr, 0 when rqnsr is 0
};

std::vector<ChannelStats> compute_channel_stats(const ActivationTrace& fp_trace,
                                                const ActivationTrace& q_trace,
                                                StatsWhere where = StatsWhere::Post);

std::vector<LayerStats> aggregate_layers(const std::vector<ChannelStats>& stats);

struct MseDecomposition {
    double mean_sq = 0.0;
    double variance = 0.0; // population (divisor n)
    double mse = 0.0;
};

// mean^2 + variance = mse; variance is computed independently (two-pass) so
// the identity is a check, not a tautology.
MseDecomposition mse_decomposition(const std::vector<double>& e);

} // namespace qbc
