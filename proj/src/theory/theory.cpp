#include "qbc/theory.hpp"

#include <algorithm>
#include <cmath>

#include "qbc/errors.hpp"
#include "qbc/kernels.hpp"

namespace qbc {

double SamplerSpec::draw(Rng& rng) const {
    switch (kind) {
    case Kind::Uniform: return rng.uniform(a, b);
    case Kind::Normal: return rng.normal(a, b);
    case Kind::HalfNormal: return std::abs(rng.normal(0.0, b));
    }
    return 0.0;
}

double SamplerSpec::bound() const {
    if (kind == Kind::Uniform) return std::max(std::abs(a), std::abs(b));
    return -1.0;
}

std::string SamplerSpec::str() const {
    const char* name = kind == Kind::Uniform ? "uniform"
                       : kind == Kind::Normal ? "normal"
                                              : "halfnormal";
    if (kind == Kind::HalfNormal) return std::string(name) + ":" + std::to_string(b);
    return std::string(name) + ":" + std::to_string(a) + "," + std::to_string(b);
}

SamplerSpec SamplerSpec::parse(const std::string& text) {
    SamplerSpec s;
    const size_t colon = text.find(':');
    const std::string name = text.substr(0, colon);
    std::vector<double> args;
    if (colon != std::string::npos) {
        std::string rest = text.substr(colon + 1);
        size_t pos = 0;
        while (pos < rest.size()) {
            size_t comma = rest.find(',', pos);
            if (comma == std::string::npos) comma = rest.size();
            args.push_back(std::stod(rest.substr(pos, comma - pos)));
            pos = comma + 1;
        }
    }
    if (name == "uniform") {
        s.kind = Kind::Uniform;
        if (args.size() != 2) throw ValidationError("sampler: uniform needs lo,hi");
        s.a = args[0];
        s.b = args[1];
        if (!(s.a <= s.b)) throw ValidationError("sampler: uniform needs lo <= hi");
    } else if (name == "normal") {
        s.kind = Kind::Normal;
        if (args.size() != 2) throw ValidationError("sampler: normal needs mean,stddev");
        s.a = args[0];
        s.b = args[1];
    } else if (name == "halfnormal") {
        s.kind = Kind::HalfNormal;
        if (args.size() != 1) throw ValidationError("sampler: halfnormal needs stddev");
        s.b = args[0];
    } else {
        throw ValidationError("sampler: unknown kind '" + name + "'");
    }
    return s;
}

namespace {

double grid_step(const MonteCarloConfig& cfg, const std::vector<double>& w) {
    double bound = -1.0;
    if (cfg.grid_from == MonteCarloConfig::GridFrom::SamplerBound)
        bound = cfg.weight_sampler.bound();
    if (bound < 0.0) {
        bound = 0.0;
        for (double v : w) bound = std::max(bound, std::abs(v));
    }
    if (bound <= 0.0)
        throw NumericError("theory: degenerate weight sampler (max|w| = 0)");
    // Step = full support width of the per-element rounding error.
    return 2.0 * bound / static_cast<double>(1 << (cfg.bits - 1));
}

} // namespace

std::vector<RoundingSumRow> rounding_error_sum_stats(const MonteCarloConfig& cfg) {
    if (cfg.trials < 1) throw ValidationError("theory: trials must be >= 1");
    std::vector<RoundingSumRow> rows;
    std::vector<double> w;
    for (size_t ki = 0; ki < cfg.k_values.size(); ++ki) {
        const int64_t k = cfg.k_values[ki];
        if (k < 1) throw ValidationError("theory: k must be >= 1");
        w.resize(static_cast<size_t>(k));

        double sum = 0.0, sumsq = 0.0, step_sq = 0.0, max_ratio = 0.0;
        for (int64_t trial = 0; trial < cfg.trials; ++trial) {
            Rng rng = Rng::substream(cfg.seed, 0xA1u, static_cast<uint64_t>(ki),
                                     static_cast<uint64_t>(trial));
            for (double& v : w) v = cfg.weight_sampler.draw(rng);
            const double step = grid_step(cfg, w);
            double dsum = 0.0;
            for (double v : w) {
                const double q = kern::round_half_away(v / step) * step;
                const double d = q - v;
                dsum += d;
                max_ratio = std::max(max_ratio, std::abs(d) / step);
            }
            sum += dsum;
            sumsq += dsum * dsum;
            step_sq += step * step;
        }
        const double inv = 1.0 / static_cast<double>(cfg.trials);
        RoundingSumRow row;
        row.k = k;
        row.empirical_mean = sum * inv;
        row.empirical_std =
            std::sqrt(std::max(sumsq * inv - row.empirical_mean * row.empirical_mean, 0.0));
        row.predicted_std =
            std::sqrt(static_cast<double>(k) / 12.0 * step_sq * inv);
        row.max_err_to_step = max_ratio;
        rows.push_back(row);
    }
    return rows;
}

MssrScalingResult mssr_scaling_sim(const MonteCarloConfig& cfg) {
    if (cfg.trials < 1) throw ValidationError("theory: trials must be >= 1");
    if (cfg.input_samples < 1) throw ValidationError("theory: input_samples must be >= 1");

    MssrScalingResult res;
    std::vector<double> w;
    std::vector<double> x;
    for (size_t ki = 0; ki < cfg.k_values.size(); ++ki) {
        const int64_t k = cfg.k_values[ki];
        w.resize(static_cast<size_t>(k));
        x.resize(static_cast<size_t>(k));

        double sum = 0.0, sumsq = 0.0;
        int64_t redraws = 0;
        for (int64_t trial = 0; trial < cfg.trials; ++trial) {
            Rng rng = Rng::substream(cfg.seed, 0xB2u, static_cast<uint64_t>(ki),
                                     static_cast<uint64_t>(trial));
            double mssr = 0.0;
            for (int attempt = 0;; ++attempt) {
                if (attempt > 100)
                    throw NumericError("theory: output energy stayed zero after 100 redraws");
                for (double& v : w) v = cfg.weight_sampler.draw(rng);
                const double step = grid_step(cfg, w);
                double dsum = 0.0;
                for (double v : w) dsum += kern::round_half_away(v / step) * step - v;

                double xin_sum = 0.0;
                double out_sq = 0.0;
                for (int64_t s = 0; s < cfg.input_samples; ++s) {
                    double dot = 0.0;
                    for (int64_t i = 0; i < k; ++i) {
                        const double xv = cfg.input_sampler.draw(rng);
                        x[static_cast<size_t>(i)] = xv;
                        xin_sum += xv;
                    }
                    for (int64_t i = 0; i < k; ++i)
                        dot += x[static_cast<size_t>(i)] * w[static_cast<size_t>(i)];
                    out_sq += dot * dot;
                }
                const double rms_out =
                    std::sqrt(out_sq / static_cast<double>(cfg.input_samples));
                if (rms_out == 0.0) {
                    ++redraws;
                    continue;
                }
                const double mean_xin =
                    xin_sum / static_cast<double>(cfg.input_samples * k);
                mssr = mean_xin * dsum / rms_out;
                break;
            }
            sum += mssr;
            sumsq += mssr * mssr;
        }
        const double inv = 1.0 / static_cast<double>(cfg.trials);
        MssrRow row;
        row.k = k;
        row.mean = sum * inv;
        row.stddev = std::sqrt(std::max(sumsq * inv - row.mean * row.mean, 0.0));
        row.redraws = redraws;
        res.rows.push_back(row);
    }

    std::vector<double> lx, ly;
    for (const MssrRow& r : res.rows) {
        lx.push_back(std::log(static_cast<double>(r.k)));
        ly.push_back(std::log(r.stddev));
    }
    fit_line(lx, ly, res.slope, res.intercept);
    return res;
}

void fit_line(const std::vector<double>& x, const std::vector<double>& y, double& slope,
              double& intercept) {
    if (x.size() != y.size() || x.size() < 2)
        throw ValidationError("fit_line: need at least two points");
    const double n = static_cast<double>(x.size());
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
        sx += x[i];
        sy += y[i];
        sxx += x[i] * x[i];
        sxy += x[i] * y[i];
    }
    slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    intercept = (sy - slope * sx) / n;
}

} // namespace qbc
