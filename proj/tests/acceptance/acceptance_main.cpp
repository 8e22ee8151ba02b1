// Acceptance suite: runs every gate criterion end to end and prints one
// PASS/FAIL line per criterion. Exit code 0 only if all pass.
//
// Numeric thresholds and time limits are pinned here, not configurable.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>
#include <unistd.h>

#include <json.hpp>

#include "qbc/backward.hpp"
#include "qbc/bft.hpp"
#include "qbc/fixtures.hpp"
#include "qbc/ibc.hpp"
#include "qbc/io.hpp"
#include "qbc/loss.hpp"
#include "qbc/qmodel.hpp"
#include "qbc/quant_grid.hpp"
#include "qbc/rng.hpp"
#include "qbc/stats.hpp"
#include "qbc/theory.hpp"

#include "../support/builders.hpp"
#include "../support/reference.hpp"

using namespace qbc;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;
    void fail(const std::string& why) {
        pass = false;
        if (!detail.empty()) detail += "; ";
        detail += why;
    }
    void note(const std::string& info) {
        if (!detail.empty()) detail += "; ";
        detail += info;
    }
};

int g_failures = 0;
double g_total_seconds = 0;

void run_criterion(int id, const char* name, double time_limit_s,
                   const std::function<void(Outcome&)>& fn) {
    Outcome out;
    const auto t0 = std::chrono::steady_clock::now();
    try {
        fn(out);
    } catch (const std::exception& e) {
        out.fail(std::string("exception: ") + e.what());
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    g_total_seconds += secs;
    if (time_limit_s > 0 && secs > time_limit_s)
        out.fail("exceeded time limit of " + std::to_string(time_limit_s) + " s");
    if (!out.pass) ++g_failures;
    std::printf("criterion %2d %s  (%6.2f s)  %s%s%s\n", id, out.pass ? "PASS" : "FAIL", secs,
                name, out.detail.empty() ? "" : " -- ", out.detail.c_str());
    std::fflush(stdout);
}

// Shared fixture pipeline, filled in by criterion 7 and reused by 8-10.
struct Pipeline {
    fixtures::FixtureSet fx;
    Graph folded;
    QuantizedModel qmodel;
    Tensor ibc_batch;
    Tensor teacher_holdout;
    double ce_baseline = 0;
    IbcResult ibc_post;
    double ce_ibc_post = 0;
    BftResult bft;
    double ce_bft = 0;
    bool ready = false;
};
Pipeline g_pipe;

double holdout_ce(const Pipeline& p, const QuantizedModel& qm) {
    const Tensor student = forward_quant(qm, p.fx.holdout, false).logits;
    return distillation_loss_value(p.teacher_holdout, student);
}

// ---- criterion bodies -------------------------------------------------------

void c1_mse_identity(Outcome& out) {
    Rng rng(1001);
    for (int i = 0; i < 1000; ++i) {
        std::vector<double> e(1 + rng.below(300));
        const int mode = static_cast<int>(rng.below(4));
        for (double& v : e) {
            switch (mode) {
            case 0: v = rng.normal(rng.uniform(-1, 1), rng.uniform(0.01, 2.0)); break;
            case 1: v = rng.uniform(-3, 3); break;
            case 2: v = 0.7; break;       // constant vector
            default: v = 0.0; break;      // zero vector
            }
        }
        const MseDecomposition d = mse_decomposition(e);
        const double lhs = d.mean_sq + d.variance;
        const double tol = 1e-9 * std::max(d.mse, 1e-300);
        if (std::abs(lhs - d.mse) > tol) {
            out.fail("identity violated at vector " + std::to_string(i));
            return;
        }
    }
}

void c2_grid_contracts(Outcome& out) {
    Rng rng(1002);
    int64_t values = 0;
    while (values < 100000) {
        const int bits = 2 + static_cast<int>(rng.below(15));
        QuantGrid grid;
        if (rng.below(2) == 0) {
            grid = make_weight_grid(rng.uniform(1e-3, 8.0), bits);
        } else {
            const double lo = rng.uniform(-4.0, 1.0);
            grid = make_activation_grid(lo, lo + rng.uniform(1e-3, 8.0), bits);
            if (fake_quant(0.0, grid) != 0.0) {
                out.fail("zero not exact on an activation grid");
                return;
            }
        }
        double prev_x = grid.cmin(), prev_y = fake_quant(prev_x, grid);
        for (int i = 0; i < 500; ++i, ++values) {
            const double x = rng.uniform(grid.cmin(), grid.cmax());
            const double y = fake_quant(x, grid);
            if (std::abs(y - x) > grid.scale / 2 * (1 + 1e-12)) {
                out.fail("round-trip error above scale/2");
                return;
            }
            if (fake_quant(y, grid) != y) {
                out.fail("fake quant not idempotent");
                return;
            }
            if ((x >= prev_x && y < prev_y) || (x <= prev_x && y > prev_y)) {
                out.fail("fake quant not monotone");
                return;
            }
            prev_x = x;
            prev_y = y;
        }
    }
    out.note("100000 values across random grids");
}

void c3_gradient_oracle(Outcome& out) {
    const double h = 1e-4;
    double worst = 0;
    for (uint64_t seed = 0; seed < 20; ++seed) {
        Tensor batch;
        Graph g = testsup::random_toy_graph(seed, batch);
        const ForwardResult res = forward(g, batch, true);
        const int64_t n = res.logits.shape[0], classes = res.logits.shape[1];

        Rng trng = Rng::substream(seed, 0xACCu);
        Tensor teacher({n, classes});
        for (float& v : teacher.data) v = static_cast<float>(trng.uniform(-1.0, 1.0));
        const std::vector<double> teacher_d(teacher.data.begin(), teacher.data.end());

        const DistillationLoss dl = distillation_loss(teacher, res.logits);
        const BiasGrads grads = backward_bias_grads(g, res.trace, dl.grad);

        std::vector<std::vector<double>> biases(g.layers.size());
        for (size_t li = 0; li < g.layers.size(); ++li)
            if (g.layers[li].has_bias())
                biases[li].assign(g.layers[li].bias.begin(), g.layers[li].bias.end());

        for (size_t li = 0; li < g.layers.size(); ++li)
            for (size_t ch = 0; ch < biases[li].size(); ++ch) {
                auto up = biases, dn = biases;
                up[li][ch] += h;
                dn[li][ch] -= h;
                const double fd = (refnet::distill_ce(teacher_d, refnet::logits(g, batch, up),
                                                      n, classes) -
                                   refnet::distill_ce(teacher_d, refnet::logits(g, batch, dn),
                                                      n, classes)) /
                                  (2 * h);
                const double bp = grads.per_layer[li][ch];
                const double rel =
                    std::abs(fd - bp) / std::max({std::abs(fd), std::abs(bp), 1e-6});
                worst = std::max(worst, rel);
            }
    }
    // distillation gradient against double finite differences
    Rng rng(1003);
    for (int rep = 0; rep < 5; ++rep) {
        Tensor teacher({3, 5}), student({3, 5});
        for (float& v : teacher.data) v = static_cast<float>(rng.uniform(-2, 2));
        for (float& v : student.data) v = static_cast<float>(rng.uniform(-2, 2));
        const DistillationLoss dl = distillation_loss(teacher, student);
        for (size_t i = 0; i < student.data.size(); ++i) {
            Tensor up = student, dn = student;
            up.data[i] += 1e-5f;
            dn.data[i] -= 1e-5f;
            // divide by the step float storage actually applied
            const double h_eff = static_cast<double>(up.data[i]) - dn.data[i];
            const double fd = (distillation_loss_value(teacher, up) -
                               distillation_loss_value(teacher, dn)) /
                              h_eff;
            const double rel = std::abs(fd - dl.grad[i]) /
                               std::max({std::abs(fd), std::abs(dl.grad[i]), 1e-8});
            if (rel >= 1e-4) {
                out.fail("distillation gradient relative error " + io::format_g9(rel));
                return;
            }
        }
    }
    out.note("max bias-grad relative error " + io::format_g9(worst));
    if (worst >= 1e-4) out.fail("above 1e-4");
}

void c4_one_layer_optimality(Outcome& out) {
    Rng rng(1004);
    Graph g = testsup::one_dense(8, 6, rng, Activation::None);
    const Tensor batch = testsup::random_tensor(rng, {32, 1, 1, 8}, -2, 2);
    const QuantizedModel qm = quantize_model(g, batch, 8, 8);

    IbcConfig cfg;
    cfg.mode = IbcMode::PreActivation;
    const IbcResult res = ibc_run(g, qm, batch, cfg);
    const double s = res.model.layers[0].b_grid.scale;

    const auto fp = forward(g, batch, true);
    const auto q = forward_quant(res.model, batch, true);
    const auto stats = compute_channel_stats(fp.trace, q.trace, StatsWhere::Pre);
    double worst = 0;
    for (const ChannelStats& cs : stats) worst = std::max(worst, std::abs(cs.mas));
    out.note("residual mean error " + io::format_g9(worst) + " vs bound " +
             io::format_g9(s / 2 + 1e-9));
    if (worst > s / 2 + 1e-9) out.fail("residual above bias-grid scale/2");

    auto pre_mse = [&](const QuantizedModel& m) {
        const auto qq = forward_quant(m, batch, true);
        const Tensor& a = fp.trace.layers[0].pre;
        const Tensor& b = qq.trace.layers[0].pre;
        double acc = 0;
        for (int64_t i = 0; i < a.numel(); ++i) {
            const double e = static_cast<double>(b.data[static_cast<size_t>(i)]) -
                             a.data[static_cast<size_t>(i)];
            acc += e * e;
        }
        return acc / static_cast<double>(a.numel());
    };
    const double base = pre_mse(res.model);
    for (size_t ch = 0; ch < res.model.graph.layers[0].bias.size(); ++ch)
        for (double sign : {-1.0, 1.0}) {
            QuantizedModel p = res.model;
            p.graph.layers[0].bias[ch] =
                static_cast<float>(p.graph.layers[0].bias[ch] + sign * 10.0 * s);
            if (pre_mse(p) < base) {
                out.fail("perturbing channel " + std::to_string(ch) + " lowered the MSE");
                return;
            }
        }
}

void c5_rounding_sum_stats(Outcome& out) {
    MonteCarloConfig cfg;
    cfg.k_values = {9, 27, 128, 512};
    cfg.trials = 10000;
    cfg.bits = 8;
    cfg.seed = 1;
    const auto rows = rounding_error_sum_stats(cfg);
    for (const auto& r : rows) {
        const double mean_band =
            4.0 * r.empirical_std / std::sqrt(static_cast<double>(cfg.trials));
        if (std::abs(r.empirical_mean) > mean_band)
            out.fail("k=" + std::to_string(r.k) + ": |mean| outside 4*std/sqrt(trials)");
        const double gap = std::abs(r.empirical_std - r.predicted_std) / r.predicted_std;
        if (gap > 0.10)
            out.fail("k=" + std::to_string(r.k) + ": std off by " + io::format_g9(gap));
        if (r.max_err_to_step > 0.5 + 1e-15)
            out.fail("k=" + std::to_string(r.k) + ": element error beyond half step");
    }
}

void c6_mssr_scaling(Outcome& out) {
    MonteCarloConfig cfg;
    cfg.k_values = {9, 27, 128, 512};
    cfg.trials = 10000;
    cfg.bits = 8;
    cfg.seed = 1;
    const auto res = mssr_scaling_sim(cfg);
    out.note("slope " + io::format_g9(res.slope));
    if (!(res.slope > -0.65 && res.slope < -0.35)) out.fail("slope outside [-0.65, -0.35]");
}

void c7_ibc_end_to_end(Outcome& out) {
    Pipeline& p = g_pipe;
    p.fx = fixtures::make_fixture_set(42);
    p.folded = fold_batchnorm(p.fx.model); // no-op for the plain model
    drop_dead_channels(p.folded, p.fx.calib);
    p.qmodel = quantize_model(p.folded, p.fx.calib, /*bits_w=*/6, /*bits_a=*/8);
    p.ibc_batch = slice_batch(p.fx.ibc_pool, 0, 16);
    p.teacher_holdout = forward(p.folded, p.fx.holdout, false).logits;
    p.ce_baseline = holdout_ce(p, p.qmodel);

    IbcConfig cfg; // post-activation, requantized biases
    p.ibc_post = ibc_run(p.folded, p.qmodel, p.ibc_batch, cfg);
    p.ce_ibc_post = holdout_ce(p, p.ibc_post.model);
    p.ready = true;

    out.note("holdout cross-entropy " + io::format_g9(p.ce_baseline) + " -> " +
             io::format_g9(p.ce_ibc_post));
    if (!(p.ce_ibc_post <= 0.6 * p.ce_baseline))
        out.fail("cross-entropy reduction below 40%");

    const auto fp = forward(p.folded, p.ibc_batch, true);
    const auto q_before = forward_quant(p.qmodel, p.ibc_batch, true);
    const auto q_after = forward_quant(p.ibc_post.model, p.ibc_batch, true);
    const auto before = aggregate_layers(compute_channel_stats(fp.trace, q_before.trace));
    const auto after = aggregate_layers(compute_channel_stats(fp.trace, q_after.trace));
    double worst_keep = 0;
    for (size_t li = 0; li < before.size(); ++li) {
        if (before[li].rms_mas <= 0) continue;
        worst_keep = std::max(worst_keep, after[li].rms_mas / before[li].rms_mas);
    }
    out.note("worst per-layer residual MAS fraction " + io::format_g9(worst_keep));
    if (worst_keep > 0.20) out.fail("some layer kept more than 20% of its mean shift");
}

void c8_bft_end_to_end(Outcome& out) {
    Pipeline& p = g_pipe;
    if (!p.ready) {
        out.fail("pipeline unavailable (criterion 7 failed earlier)");
        return;
    }
    BftConfig cfg;
    cfg.schedule = {{1e-3, 4}, {1e-4, 4}, {1e-5, 4}, {1e-6, 4}};
    cfg.minibatch = 32;
    cfg.seed = 7;
    p.bft = bft_run(p.folded, p.qmodel, p.fx.tune, cfg);
    p.ce_bft = holdout_ce(p, p.bft.model);

    out.note("holdout cross-entropy " + io::format_g9(p.ce_bft));
    if (!(p.ce_bft <= 1.2 * p.ce_ibc_post))
        out.fail("worse than 1.2x the post-IBC cross-entropy");
    if (!(p.ce_bft <= 0.6 * p.ce_baseline)) out.fail("above 60% of the uncorrected baseline");
    for (size_t i = 1; i < p.bft.history.boundary_losses.size(); ++i)
        if (p.bft.history.boundary_losses[i] >
            p.bft.history.boundary_losses[i - 1] + 1e-12)
            out.fail("tuning loss increased at schedule boundary " + std::to_string(i));
}

void c9_pre_vs_post(Outcome& out) {
    Pipeline& p = g_pipe;
    if (!p.ready) {
        out.fail("pipeline unavailable (criterion 7 failed earlier)");
        return;
    }
    IbcConfig cfg;
    cfg.mode = IbcMode::PreActivation;
    const IbcResult pre = ibc_run(p.folded, p.qmodel, p.ibc_batch, cfg);
    const double ce_pre = holdout_ce(p, pre.model);
    out.note("pre " + io::format_g9(ce_pre) + " vs post " + io::format_g9(p.ce_ibc_post));
    if (!(ce_pre <= p.ce_ibc_post)) out.fail("pre-activation mode did not win");
}

void c10_bias_only(Outcome& out) {
    Pipeline& p = g_pipe;
    if (!p.ready) {
        out.fail("pipeline unavailable (criterion 7 failed earlier)");
        return;
    }
    if (!same_except_biases(p.qmodel, p.ibc_post.model))
        out.fail("IBC touched weights or grids");
    if (!same_except_biases(p.qmodel, p.bft.model)) out.fail("BFT touched weights or grids");
}

bool files_equal_modulo_duration(const fs::path& a, const fs::path& b) {
    const std::string sa = io::read_file(a.string());
    const std::string sb = io::read_file(b.string());
    if (a.filename() != "run_manifest.json") return sa == sb;
    auto ja = nlohmann::json::parse(sa);
    auto jb = nlohmann::json::parse(sb);
    ja.erase("duration_seconds");
    jb.erase("duration_seconds");
    return ja == jb;
}

void c11_cli_determinism(Outcome& out) {
    const char* cli = QBC_CLI_PATH;
    const fs::path root =
        fs::temp_directory_path() / ("qbc_acc_" + std::to_string(::getpid()));
    fs::remove_all(root);
    fs::create_directories(root);

    // Both sides run the identical command lines (relative paths) from their
    // own working directory, so every byte of the outputs must match; only
    // the manifest's wall-clock field is masked.
    auto sh = [&](const std::string& side, const std::string& cmd) {
        const std::string full = "cd " + (root / side).string() + " && " + std::string(cli) +
                                 " " + cmd + " >/dev/null 2>&1";
        const int rc = std::system(full.c_str());
        if (!WIFEXITED(rc) || WEXITSTATUS(rc) != 0)
            throw std::runtime_error("command failed: " + full);
    };

    for (const char* side : {"A", "B"}) {
        fs::create_directories(root / side);
        sh(side, "gen-fixtures --out fx --seed 42");
        sh(side, "quantize --model fx/model.json --calib fx/calib.qbt --bits-w 6 --bits-a 8 "
                 "--seed 1 --out q");
        sh(side, "analyze --model fx/model.json --qmodel q/qmodel.json --batch fx/ibc.qbt "
                 "--out an");
        sh(side, "ibc --model fx/model.json --qmodel q/qmodel.json --batch fx/ibc.qbt "
                 "--take 16 --mode post --out ibc");
        sh(side, "bft --model fx/model.json --qmodel q/qmodel.json --data fx/tune.qbt "
                 "--schedule 1e-3x1 --minibatch 32 --seed 7 --out bft");
        sh(side, "eval --model fx/model.json --qmodel ibc/qmodel.json --data fx/holdout.qbt "
                 "--labels fx/holdout_labels.txt --out ev");
        sh(side, "theory --k 9,27 --trials 500 --seed 3 --out th");
    }

    size_t compared = 0;
    for (auto it = fs::recursive_directory_iterator(root / "A");
         it != fs::recursive_directory_iterator(); ++it) {
        if (!it->is_regular_file()) continue;
        const fs::path rel = fs::relative(it->path(), root / "A");
        const fs::path other = root / "B" / rel;
        if (!fs::exists(other)) {
            out.fail("missing in rerun: " + rel.string());
            continue;
        }
        if (!files_equal_modulo_duration(it->path(), other))
            out.fail("differs across reruns: " + rel.string());
        ++compared;
    }
    out.note(std::to_string(compared) + " files compared (manifest wall-clock field masked)");
    if (compared < 20) out.fail("suspiciously few output files");
    fs::remove_all(root);
}

} // namespace

int main() {
    std::printf("acceptance suite\n");
    run_criterion(1, "error-vector mean^2 + variance = mse identity", 0, c1_mse_identity);
    run_criterion(2, "quantization grid contracts (round-trip, zero, idempotent, monotone)",
                  10, c2_grid_contracts);
    run_criterion(3, "bias and distillation gradients vs central finite differences", 30,
                  c3_gradient_oracle);
    run_criterion(4, "single-linear-layer correction optimality", 0, c4_one_layer_optimality);
    run_criterion(5, "rounding-error sum statistics vs closed form", 60, c5_rounding_sum_stats);
    run_criterion(6, "mean-shift ratio spread scaling in kernel size", 120, c6_mssr_scaling);
    run_criterion(7, "end-to-end iterative bias correction on the toy net", 120,
                  c7_ibc_end_to_end);
    run_criterion(8, "end-to-end bias fine tuning on the toy net", 300, c8_bft_end_to_end);
    run_criterion(9, "pre-activation correction beats post-activation on holdout", 0,
                  c9_pre_vs_post);
    run_criterion(10, "corrections change bias values only", 0, c10_bias_only);
    run_criterion(11, "CLI outputs are byte-stable across reruns", 0, c11_cli_determinism);
    run_criterion(12, "whole suite fits the time budget", 0, [](Outcome& out) {
        out.note(io::format_g9(g_total_seconds) + " s so far");
        if (g_total_seconds > 600) out.fail("over 10 minutes");
    });

    std::printf("%s (%d failed)\n", g_failures == 0 ? "ALL CRITERIA PASSED" : "FAILURES",
                g_failures);
    return g_failures == 0 ? 0 : 1;
}
