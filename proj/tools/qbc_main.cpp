// qbc: post-training quantization simulator and bias-correction toolkit.
//
// Subcommands: gen-fixtures, quantize, analyze, ibc, bft, eval, theory.
// Exit codes: 0 success, 2 I/O failure, 3 validation failure, 4 numeric
// failure.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "qbc/bft.hpp"
#include "qbc/errors.hpp"
#include "qbc/fixtures.hpp"
#include "qbc/ibc.hpp"
#include "qbc/io.hpp"
#include "qbc/kernels.hpp"
#include "qbc/loss.hpp"
#include "qbc/qmodel.hpp"
#include "qbc/stats.hpp"
#include "qbc/theory.hpp"
#include "qbc/version.hpp"

namespace {

using qbc::Graph;
using qbc::QuantizedModel;
using qbc::Tensor;
namespace io = qbc::io;

namespace fs = std::filesystem;

std::string join_path(const std::string& dir, const std::string& name) {
    return (fs::path(dir) / name).string();
}

std::vector<std::string> layer_names(const Graph& g) {
    std::vector<std::string> names;
    names.reserve(g.layers.size());
    for (const auto& l : g.layers) names.push_back(l.name);
    return names;
}

void require_files(const std::vector<std::string>& paths) {
    for (const auto& p : paths)
        if (!io::file_exists(p)) throw qbc::IoError("input file not found: " + p);
}

std::vector<qbc::LrStage> parse_schedule(const std::string& text) {
    std::vector<qbc::LrStage> stages;
    size_t pos = 0;
    while (pos < text.size()) {
        size_t comma = text.find(',', pos);
        if (comma == std::string::npos) comma = text.size();
        const std::string item = text.substr(pos, comma - pos);
        const size_t x = item.find('x');
        if (x == std::string::npos)
            throw qbc::ValidationError("schedule entry '" + item + "' is not <lr>x<epochs>");
        try {
            qbc::LrStage s;
            s.lr = std::stod(item.substr(0, x));
            s.mini_epochs = std::stoi(item.substr(x + 1));
            stages.push_back(s);
        } catch (const std::exception&) {
            throw qbc::ValidationError("cannot parse schedule entry '" + item + "'");
        }
        pos = comma + 1;
    }
    return stages;
}

std::vector<int64_t> parse_int_list(const std::string& text) {
    std::vector<int64_t> out;
    size_t pos = 0;
    while (pos < text.size()) {
        size_t comma = text.find(',', pos);
        if (comma == std::string::npos) comma = text.size();
        out.push_back(std::stoll(text.substr(pos, comma - pos)));
        pos = comma + 1;
    }
    return out;
}

struct Timer {
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
};

// ---- gen-fixtures ---------------------------------------------------------

int cmd_gen_fixtures(const std::string& out_dir, uint64_t seed) {
    Timer timer;
    io::ensure_dir(out_dir);
    const qbc::fixtures::FixtureSet f = qbc::fixtures::make_fixture_set(seed);
    io::save_model(f.model, join_path(out_dir, "model.json"), "params.bin");
    io::save_model(f.model_bn, join_path(out_dir, "model_bn.json"), "params_bn.bin");
    io::save_tensor(f.calib, join_path(out_dir, "calib.qbt"));
    io::save_tensor(f.ibc_pool, join_path(out_dir, "ibc.qbt"));
    io::save_tensor(f.tune, join_path(out_dir, "tune.qbt"));
    io::save_tensor(f.holdout, join_path(out_dir, "holdout.qbt"));
    io::save_labels(f.holdout_labels, join_path(out_dir, "holdout_labels.txt"));

    io::RunInfo info;
    info.command = "gen-fixtures";
    info.config = {{"out", out_dir}};
    info.seed = seed;
    info.duration_seconds = timer.seconds();
    io::write_run_manifest(out_dir, info);
    std::printf("gen-fixtures: wrote model + 4 datasets to %s\n", out_dir.c_str());
    return 0;
}

// ---- quantize -------------------------------------------------------------

int cmd_quantize(const std::string& model_path, const std::string& calib_path, int bits_w,
                 int bits_a, uint64_t seed, const std::string& out_dir) {
    Timer timer;
    require_files({model_path, calib_path});
    io::ensure_dir(out_dir);

    Graph g = io::load_model(model_path);
    const Tensor calib = io::load_tensor(calib_path);

    g = qbc::fold_batchnorm(g);
    const qbc::DeadChannelReport dead = qbc::drop_dead_channels(g, calib);
    const QuantizedModel qm = qbc::quantize_model(g, calib, bits_w, bits_a);
    io::save_qmodel(qm, join_path(out_dir, "qmodel.json"));

    std::printf("quantize: %zu layers, bits_w=%d bits_a=%d, %zu dead channels zeroed\n",
                qm.graph.layers.size(), bits_w, bits_a, dead.zeroed.size());
    if (dead.predictions_changed > 0)
        std::printf("quantize: warning: dead-channel zeroing flipped %lld calibration "
                    "predictions\n",
                    static_cast<long long>(dead.predictions_changed));

    io::RunInfo info;
    info.command = "quantize";
    info.config = {{"model", model_path},
                   {"calib", calib_path},
                   {"bits_w", std::to_string(bits_w)},
                   {"bits_a", std::to_string(bits_a)},
                   {"out", out_dir}};
    info.input_files = {model_path, calib_path};
    info.seed = seed;
    info.duration_seconds = timer.seconds();
    io::write_run_manifest(out_dir, info);
    return 0;
}

// ---- analyze --------------------------------------------------------------

int cmd_analyze(const std::string& model_path, const std::string& qmodel_path,
                const std::string& batch_path, const std::string& where,
                const std::string& out_dir) {
    Timer timer;
    require_files({model_path, qmodel_path, batch_path});
    io::ensure_dir(out_dir);

    const Graph g = io::load_model(model_path);
    const QuantizedModel qm = io::load_qmodel(qmodel_path);
    const Tensor batch = io::load_tensor(batch_path);

    const qbc::ForwardResult fp = qbc::forward(g, batch, true);
    const qbc::ForwardResult q = qbc::forward_quant(qm, batch, true);
    const auto w = where == "pre" ? qbc::StatsWhere::Pre : qbc::StatsWhere::Post;
    const auto stats = qbc::compute_channel_stats(fp.trace, q.trace, w);
    const auto layers = qbc::aggregate_layers(stats);

    const auto names = layer_names(g);
    io::write_channel_stats_csv(join_path(out_dir, "channel_stats.csv"), stats, names);
    io::write_layer_stats_csv(join_path(out_dir, "layer_stats.csv"), layers, names);
    io::write_stats_summary_json(join_path(out_dir, "summary.json"), layers, names);

    for (const auto& l : layers)
        std::printf("analyze: layer %2d %-12s rms_mas=%-12s rms_mssr=%-12s rms_rqnsr=%-12s "
                    "mssr/rqnsr=%s\n",
                    l.layer, names[static_cast<size_t>(l.layer)].c_str(),
                    io::format_g9(l.rms_mas).c_str(), io::format_g9(l.rms_mssr).c_str(),
                    io::format_g9(l.rms_rqnsr).c_str(), io::format_g9(l.mssr_to_rqnsr).c_str());

    io::RunInfo info;
    info.command = "analyze";
    info.config = {{"model", model_path},
                   {"qmodel", qmodel_path},
                   {"batch", batch_path},
                   {"where", where},
                   {"out", out_dir}};
    info.input_files = {model_path, qmodel_path, batch_path};
    info.duration_seconds = timer.seconds();
    io::write_run_manifest(out_dir, info);
    return 0;
}

// ---- ibc ------------------------------------------------------------------

int cmd_ibc(const std::string& model_path, const std::string& qmodel_path,
            const std::string& batch_path, const std::string& mode, bool no_requant,
            int64_t take, const std::string& sweep, const std::string& eval_batch_path,
            const std::string& out_dir) {
    Timer timer;
    require_files({model_path, qmodel_path, batch_path});
    io::ensure_dir(out_dir);

    const Graph g = io::load_model(model_path);
    const QuantizedModel qm = io::load_qmodel(qmodel_path);
    Tensor batch = io::load_tensor(batch_path);
    if (take > 0) {
        if (take > batch.shape[0])
            throw qbc::ValidationError("--take exceeds batch size of " + batch_path);
        batch = qbc::slice_batch(batch, 0, take);
    }

    qbc::IbcConfig cfg;
    cfg.mode = mode == "pre" ? qbc::IbcMode::PreActivation : qbc::IbcMode::PostActivation;
    cfg.bias_requantize = !no_requant;

    const qbc::IbcResult res = qbc::ibc_run(g, qm, batch, cfg);
    io::save_qmodel(res.model, join_path(out_dir, "qmodel.json"));
    io::write_ibc_report_csv(join_path(out_dir, "ibc_report.csv"), res.report, layer_names(g));
    std::printf("ibc: corrected %zu layers (%s mode, batch of %lld)\n", g.layers.size(),
                mode.c_str(), static_cast<long long>(batch.shape[0]));

    std::vector<std::string> inputs = {model_path, qmodel_path, batch_path};
    if (!sweep.empty()) {
        require_files({eval_batch_path});
        const Tensor eval_batch = io::load_tensor(eval_batch_path);
        const Tensor pool = io::load_tensor(batch_path);
        const auto rows = qbc::ibc_sweep(g, qm, pool, parse_int_list(sweep), eval_batch, cfg);
        io::write_ibc_sweep_csv(join_path(out_dir, "ibc_sweep.csv"), rows);
        for (const auto& r : rows)
            std::printf("ibc sweep: batch %4lld -> cross-entropy %s\n",
                        static_cast<long long>(r.batch_size),
                        io::format_g9(r.cross_entropy).c_str());
        inputs.push_back(eval_batch_path);
    }

    io::RunInfo info;
    info.command = "ibc";
    info.config = {{"model", model_path}, {"qmodel", qmodel_path}, {"batch", batch_path},
                   {"mode", mode},        {"requantize", no_requant ? "0" : "1"},
                   {"take", std::to_string(take)}, {"sweep", sweep}, {"out", out_dir}};
    info.input_files = inputs;
    info.duration_seconds = timer.seconds();
    io::write_run_manifest(out_dir, info);
    return 0;
}

// ---- bft ------------------------------------------------------------------

int cmd_bft(const std::string& model_path, const std::string& qmodel_path,
            const std::string& data_path, const std::string& schedule, int minibatch,
            uint64_t seed, const std::string& out_dir) {
    Timer timer;
    require_files({model_path, qmodel_path, data_path});
    io::ensure_dir(out_dir);

    const Graph g = io::load_model(model_path);
    const QuantizedModel qm = io::load_qmodel(qmodel_path);
    const Tensor data = io::load_tensor(data_path);

    qbc::BftConfig cfg;
    cfg.schedule = parse_schedule(schedule);
    cfg.minibatch = minibatch;
    cfg.seed = seed;

    const qbc::BftResult res = qbc::bft_run(g, qm, data, cfg);
    io::save_qmodel(res.model, join_path(out_dir, "qmodel.json"));
    io::write_bft_history_csv(join_path(out_dir, "bft_history.csv"), res.history);
    {
        nlohmann::json j;
        j["boundary_losses"] = res.history.boundary_losses;
        j["final_loss"] = res.history.final_loss;
        j["final_loss_requantized"] = res.history.final_loss_requantized;
        io::atomic_write(join_path(out_dir, "bft_summary.json"), j.dump(2) + "\n");
    }
    for (size_t i = 0; i < res.history.boundary_losses.size(); ++i)
        std::printf("bft: %s loss %s\n",
                    i == 0 ? "initial " : ("stage " + std::to_string(i)).c_str(),
                    io::format_g9(res.history.boundary_losses[i]).c_str());
    if (!res.history.boundary_losses.empty())
        std::printf("bft: final (16-bit biases) loss %s\n",
                    io::format_g9(res.history.final_loss_requantized).c_str());

    io::RunInfo info;
    info.command = "bft";
    info.config = {{"model", model_path}, {"qmodel", qmodel_path},
                   {"data", data_path},   {"schedule", schedule},
                   {"minibatch", std::to_string(minibatch)}, {"out", out_dir}};
    info.input_files = {model_path, qmodel_path, data_path};
    info.seed = seed;
    info.duration_seconds = timer.seconds();
    io::write_run_manifest(out_dir, info);
    return 0;
}

// ---- eval -----------------------------------------------------------------

int cmd_eval(const std::string& model_path, const std::string& qmodel_path,
             const std::string& data_path, const std::string& labels_path,
             const std::string& out_dir) {
    Timer timer;
    require_files({model_path, data_path});
    if (!qmodel_path.empty()) require_files({qmodel_path});
    if (!labels_path.empty()) require_files({labels_path});

    const Graph g = io::load_model(model_path);
    const Tensor data = io::load_tensor(data_path);
    const Tensor teacher = qbc::forward(g, data, false).logits;
    Tensor student = teacher;
    if (!qmodel_path.empty()) {
        const QuantizedModel qm = io::load_qmodel(qmodel_path);
        student = qbc::forward_quant(qm, data, false).logits;
    }

    const double ce = qbc::distillation_loss_value(teacher, student);
    const double entropy = qbc::softmax_entropy(teacher);
    std::printf("eval: cross_entropy=%s teacher_entropy=%s\n", io::format_g9(ce).c_str(),
                io::format_g9(entropy).c_str());

    double top1_fp = -1.0, top1_student = -1.0;
    if (!labels_path.empty()) {
        const auto labels = io::load_labels(labels_path);
        top1_fp = qbc::top1_accuracy(teacher, labels);
        top1_student = qbc::top1_accuracy(student, labels);
        std::printf("eval: top1_fp=%s top1_student=%s\n", io::format_g9(top1_fp).c_str(),
                    io::format_g9(top1_student).c_str());
    }

    if (!out_dir.empty()) {
        io::ensure_dir(out_dir);
        nlohmann::json j;
        j["cross_entropy"] = ce;
        j["teacher_entropy"] = entropy;
        if (top1_fp >= 0.0) {
            j["top1_fp"] = top1_fp;
            j["top1_student"] = top1_student;
        }
        io::atomic_write(join_path(out_dir, "eval.json"), j.dump(2) + "\n");

        io::RunInfo info;
        info.command = "eval";
        info.config = {{"model", model_path}, {"qmodel", qmodel_path},
                       {"data", data_path},   {"labels", labels_path},
                       {"out", out_dir}};
        info.input_files = {model_path, data_path};
        if (!qmodel_path.empty()) info.input_files.push_back(qmodel_path);
        if (!labels_path.empty()) info.input_files.push_back(labels_path);
        info.duration_seconds = timer.seconds();
        io::write_run_manifest(out_dir, info);
    }
    return 0;
}

// ---- theory ---------------------------------------------------------------

int cmd_theory(const std::string& k_list, int64_t trials, int bits, uint64_t seed,
               const std::string& weights, const std::string& inputs, int64_t input_samples,
               const std::string& grid_from, const std::string& out_dir) {
    Timer timer;
    qbc::MonteCarloConfig cfg;
    cfg.k_values = parse_int_list(k_list);
    cfg.trials = trials;
    cfg.bits = bits;
    cfg.seed = seed;
    cfg.weight_sampler = qbc::SamplerSpec::parse(weights);
    cfg.input_sampler = qbc::SamplerSpec::parse(inputs);
    cfg.input_samples = input_samples;
    cfg.grid_from = grid_from == "trial" ? qbc::MonteCarloConfig::GridFrom::TrialMax
                                         : qbc::MonteCarloConfig::GridFrom::SamplerBound;

    const auto sums = qbc::rounding_error_sum_stats(cfg);
    const auto mssr = qbc::mssr_scaling_sim(cfg);

    for (size_t i = 0; i < sums.size(); ++i)
        std::printf("theory: k=%-4lld mean=%-13s std=%-12s predicted=%-12s mssr_std=%s\n",
                    static_cast<long long>(sums[i].k),
                    io::format_g9(sums[i].empirical_mean).c_str(),
                    io::format_g9(sums[i].empirical_std).c_str(),
                    io::format_g9(sums[i].predicted_std).c_str(),
                    io::format_g9(mssr.rows[i].stddev).c_str());
    std::printf("theory: log-log slope of std(MSSR) vs k = %s\n",
                io::format_g9(mssr.slope).c_str());

    if (!out_dir.empty()) {
        io::ensure_dir(out_dir);
        io::write_theory_csv(join_path(out_dir, "theory.csv"), sums, mssr.rows);
        nlohmann::json j;
        j["mssr_slope"] = mssr.slope;
        j["mssr_intercept"] = mssr.intercept;
        j["weight_sampler"] = cfg.weight_sampler.str();
        j["input_sampler"] = cfg.input_sampler.str();
        io::atomic_write(join_path(out_dir, "theory_summary.json"), j.dump(2) + "\n");

        io::RunInfo info;
        info.command = "theory";
        info.config = {{"k", k_list},
                       {"trials", std::to_string(trials)},
                       {"bits", std::to_string(bits)},
                       {"weights", weights},
                       {"inputs", inputs},
                       {"input_samples", std::to_string(input_samples)},
                       {"grid_from", grid_from},
                       {"out", out_dir}};
        info.seed = seed;
        info.duration_seconds = timer.seconds();
        io::write_run_manifest(out_dir, info);
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"post-training quantization simulator and bias-correction toolkit"};
    app.set_version_flag("--version", qbc::kVersion);
    app.require_subcommand(1);

    // gen-fixtures
    std::string gf_out = "fixtures";
    uint64_t gf_seed = 42;
    auto* gf = app.add_subcommand("gen-fixtures", "generate seeded toy models and datasets");
    gf->add_option("--out", gf_out, "output directory");
    gf->add_option("--seed", gf_seed, "generator seed");

    // quantize
    std::string q_model, q_calib, q_out = "quantized";
    int q_bits_w = 8, q_bits_a = 8;
    uint64_t q_seed = 0;
    auto* q = app.add_subcommand("quantize", "fold, drop dead channels, build grids");
    q->add_option("--model", q_model, "full-precision model manifest")->required();
    q->add_option("--calib", q_calib, "calibration batch file")->required();
    q->add_option("--bits-w", q_bits_w, "weight bits (>24 disables)");
    q->add_option("--bits-a", q_bits_a, "activation bits (>24 disables)");
    q->add_option("--seed", q_seed, "recorded in the run manifest");
    q->add_option("--out", q_out, "output directory");

    // analyze
    std::string an_model, an_qmodel, an_batch, an_where = "post", an_out = "analysis";
    auto* an = app.add_subcommand("analyze", "per-channel shift and error report");
    an->add_option("--model", an_model)->required();
    an->add_option("--qmodel", an_qmodel)->required();
    an->add_option("--batch", an_batch)->required();
    an->add_option("--where", an_where)->check(CLI::IsMember({"post", "pre"}));
    an->add_option("--out", an_out);

    // ibc
    std::string ibc_model, ibc_qmodel, ibc_batch, ibc_mode = "post", ibc_out = "ibc_out";
    std::string ibc_sweep, ibc_eval_batch;
    bool ibc_no_requant = false;
    int64_t ibc_take = 0;
    auto* ib = app.add_subcommand("ibc", "iterative bias correction");
    ib->add_option("--model", ibc_model)->required();
    ib->add_option("--qmodel", ibc_qmodel)->required();
    ib->add_option("--batch", ibc_batch, "correction batch file")->required();
    ib->add_option("--mode", ibc_mode)->check(CLI::IsMember({"post", "pre"}));
    ib->add_flag("--no-requant", ibc_no_requant, "keep corrected biases full precision");
    ib->add_option("--take", ibc_take, "use only the first N images of the batch");
    ib->add_option("--sweep", ibc_sweep, "comma list of batch sizes to sweep");
    ib->add_option("--eval-batch", ibc_eval_batch, "held-out batch for the sweep metric");
    ib->add_option("--out", ibc_out);

    // bft
    std::string bft_model, bft_qmodel, bft_data, bft_out = "bft_out";
    std::string bft_schedule = "1e-3x16,1e-4x16,1e-5x16,1e-6x16";
    int bft_minibatch = 32;
    uint64_t bft_seed = 0;
    auto* bf = app.add_subcommand("bft", "bias fine tuning (distillation + STE)");
    bf->add_option("--model", bft_model)->required();
    bf->add_option("--qmodel", bft_qmodel)->required();
    bf->add_option("--data", bft_data, "label-free tuning set")->required();
    bf->add_option("--schedule", bft_schedule, "lr stages, e.g. 1e-3x16,1e-4x16");
    bf->add_option("--minibatch", bft_minibatch);
    bf->add_option("--seed", bft_seed);
    bf->add_option("--out", bft_out);

    // eval
    std::string ev_model, ev_qmodel, ev_data, ev_labels, ev_out;
    auto* ev = app.add_subcommand("eval", "teacher-student cross-entropy and top-1");
    ev->add_option("--model", ev_model)->required();
    ev->add_option("--qmodel", ev_qmodel);
    ev->add_option("--data", ev_data)->required();
    ev->add_option("--labels", ev_labels);
    ev->add_option("--out", ev_out);

    // theory
    std::string th_k = "9,27,128,512", th_weights = "uniform:0,1", th_inputs = "uniform:0,1";
    std::string th_grid = "bound", th_out;
    int64_t th_trials = 10000, th_input_samples = 64;
    int th_bits = 8;
    uint64_t th_seed = 1;
    auto* th = app.add_subcommand("theory", "Monte Carlo rounding-error statistics");
    th->add_option("--k", th_k, "kernel-element counts");
    th->add_option("--trials", th_trials);
    th->add_option("--bits", th_bits);
    th->add_option("--seed", th_seed);
    th->add_option("--weights", th_weights, "weight sampler, e.g. uniform:-1,1");
    th->add_option("--inputs", th_inputs, "input sampler (non-negative)");
    th->add_option("--input-samples", th_input_samples, "input vectors per trial");
    th->add_option("--grid-from", th_grid)->check(CLI::IsMember({"bound", "trial"}));
    th->add_option("--out", th_out);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 3;
    }

    try {
        if (gf->parsed()) return cmd_gen_fixtures(gf_out, gf_seed);
        if (q->parsed())
            return cmd_quantize(q_model, q_calib, q_bits_w, q_bits_a, q_seed, q_out);
        if (an->parsed()) return cmd_analyze(an_model, an_qmodel, an_batch, an_where, an_out);
        if (ib->parsed())
            return cmd_ibc(ibc_model, ibc_qmodel, ibc_batch, ibc_mode, ibc_no_requant,
                           ibc_take, ibc_sweep, ibc_eval_batch, ibc_out);
        if (bf->parsed())
            return cmd_bft(bft_model, bft_qmodel, bft_data, bft_schedule, bft_minibatch,
                           bft_seed, bft_out);
        if (ev->parsed()) return cmd_eval(ev_model, ev_qmodel, ev_data, ev_labels, ev_out);
        if (th->parsed())
            return cmd_theory(th_k, th_trials, th_bits, th_seed, th_weights, th_inputs,
                              th_input_samples, th_grid, th_out);
    } catch (const qbc::IoError& e) {
        std::fprintf(stderr, "error (io): %s\n", e.what());
        return 2;
    } catch (const qbc::ValidationError& e) {
        std::fprintf(stderr, "error (validation): %s\n", e.what());
        return 3;
    } catch (const qbc::NumericError& e) {
        std::fprintf(stderr, "error (numeric): %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
