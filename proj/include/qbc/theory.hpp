#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qbc/rng.hpp"

namespace qbc {

// Distribution spec for Monte Carlo draws.
struct SamplerSpec {
    enum class Kind { Uniform, Normal, HalfNormal };
    Kind kind = Kind::Uniform;
    double a = 0.0; // Uniform: lo, Normal: mean
    double b = 1.0; // Uniform: hi, Normal/HalfNormal: stddev

    double draw(Rng& rng) const;
    // Largest |value| the sampler can produce; < 0 when unbounded.
    double bound() const;
    std::string str() const;
    static SamplerSpec parse(const std::string& text);
};

// The statistical model under test quantizes weights on a uniform symmetric
// grid whose rounding-error support has width C = 2*max|W|/2^(N-1), i.e. the
// grid step equals C. Note this support is twice as wide as that of a
// hardware N-bit symmetric grid (step max|W|/(2^(N-1)-1)); the simulator
// follows the model so the C*sqrt(k/12) prediction is the quantity checked.
struct MonteCarloConfig {
    std::vector<int64_t> k_values = {9, 27, 128, 512};
    int64_t trials = 10000;
    int bits = 8;
    SamplerSpec weight_sampler = {SamplerSpec::Kind::Uniform, 0.0, 1.0};
    SamplerSpec input_sampler = {SamplerSpec::Kind::Uniform, 0.0, 1.0}; // post-ReLU surrogate
    int64_t input_samples = 64; // input vectors per trial for the data term
    uint64_t seed = 1;
    // Grid from the sampler's range bound (the model's "constant grid"), or
    // from each trial's max|w|. Unbounded samplers always use the trial max.
    enum class GridFrom { SamplerBound, TrialMax } grid_from = GridFrom::SamplerBound;
};

struct RoundingSumRow {
    int64_t k = 0;
    double empirical_mean = 0.0;
    double empirical_std = 0.0;
    double predicted_std = 0.0;    // sqrt(k/12 * mean(step^2)) over trials
    double max_err_to_step = 0.0;  // max |delta| / step seen; <= 0.5 by construction
};

// Draws k weights per trial, quantizes them on the model grid, and compares
// the spread of the rounding-error sum against the closed-form prediction.
std::vector<RoundingSumRow> rounding_error_sum_stats(const MonteCarloConfig& cfg);

struct MssrRow {
    int64_t k = 0;
    double mean = 0.0;
    double stddev = 0.0;
    int64_t redraws = 0; // trials redrawn because the output energy was zero
};

struct MssrScalingResult {
    std::vector<MssrRow> rows;
    double slope = 0.0;     // least-squares slope of log std vs log k
    double intercept = 0.0;
};

// Builds a single-output-channel layer per trial and measures the mean-shift
// to signal ratio E(x_in) * sum(delta_w) / rms(x_out), with the data term
// computed from actual draws rather than the 1/k matched-filter shortcut.
MssrScalingResult mssr_scaling_sim(const MonteCarloConfig& cfg);

// Least-squares fit y = slope*x + intercept.
void fit_line(const std::vector<double>& x, const std::vector<double>& y, double& slope,
              double& intercept);

} // namespace qbc
