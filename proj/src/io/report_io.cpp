#include <cstdio>
#include <filesystem>

#include <json.hpp>

#include "qbc/io.hpp"
#include "qbc/version.hpp"

namespace qbc::io {

using nlohmann::json;

std::string format_g9(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

void write_run_manifest(const std::string& out_dir, const RunInfo& info) {
    json j;
    j["command"] = info.command;
    json cfg = json::object();
    for (const auto& [k, v] : info.config) cfg[k] = v;
    j["config"] = cfg;
    json inputs = json::object();
    for (const std::string& path : info.input_files) inputs[path] = sha256_file(path);
    j["inputs"] = inputs;
    j["seed"] = info.seed;
    j["tool_version"] = kVersion;
    j["duration_seconds"] = info.duration_seconds;
    atomic_write((std::filesystem::path(out_dir) / "run_manifest.json").string(),
                 j.dump(2) + "\n");
}

void write_channel_stats_csv(const std::string& path, const std::vector<ChannelStats>& stats,
                             const std::vector<std::string>& layer_names) {
    std::string out = "layer,layer_name,channel,n_samples,mas,signal_energy,error_energy,"
                      "rqnsr,mssr,degenerate\n";
    for (const ChannelStats& s : stats) {
        out += std::to_string(s.layer) + ',' + layer_names[static_cast<size_t>(s.layer)] + ',' +
               std::to_string(s.channel) + ',' + std::to_string(s.n_samples) + ',' +
               format_g9(s.mas) + ',' + format_g9(s.signal_energy) + ',' +
               format_g9(s.error_energy) + ',' + format_g9(s.rqnsr) + ',' + format_g9(s.mssr) +
               ',' + (s.degenerate ? "1" : "0") + '\n';
    }
    atomic_write(path, out);
}

void write_layer_stats_csv(const std::string& path, const std::vector<LayerStats>& layers,
                           const std::vector<std::string>& layer_names) {
    std::string out = "layer,layer_name,channels,rms_mas,rms_mssr,rms_rqnsr,mssr_to_rqnsr\n";
    for (const LayerStats& l : layers) {
        out += std::to_string(l.layer) + ',' + layer_names[static_cast<size_t>(l.layer)] + ',' +
               std::to_string(l.channels) + ',' + format_g9(l.rms_mas) + ',' +
               format_g9(l.rms_mssr) + ',' + format_g9(l.rms_rqnsr) + ',' +
               format_g9(l.mssr_to_rqnsr) + '\n';
    }
    atomic_write(path, out);
}

void write_stats_summary_json(const std::string& path, const std::vector<LayerStats>& layers,
                              const std::vector<std::string>& layer_names) {
    json rows = json::array();
    for (const LayerStats& l : layers) {
        rows.push_back(json{{"layer", l.layer},
                            {"layer_name", layer_names[static_cast<size_t>(l.layer)]},
                            {"channels", l.channels},
                            {"rms_mas", l.rms_mas},
                            {"rms_mssr", l.rms_mssr},
                            {"rms_rqnsr", l.rms_rqnsr},
                            {"mssr_to_rqnsr", l.mssr_to_rqnsr}});
    }
    atomic_write(path, json{{"layers", rows}}.dump(2) + "\n");
}

void write_ibc_report_csv(const std::string& path, const IbcReport& report,
                          const std::vector<std::string>& layer_names) {
    std::string out = "layer,layer_name,channel,delta,residual,status\n";
    for (const IbcReport::Row& r : report.rows) {
        const char* status = r.skipped ? "skipped" : (r.relu_dead ? "relu_dead" : "corrected");
        out += std::to_string(r.layer) + ',' + layer_names[static_cast<size_t>(r.layer)] + ',' +
               std::to_string(r.channel) + ',' + format_g9(r.delta) + ',' +
               format_g9(r.residual) + ',' + status + '\n';
    }
    atomic_write(path, out);
}

void write_ibc_sweep_csv(const std::string& path, const std::vector<IbcSweepRow>& rows) {
    std::string out = "batch_size,cross_entropy\n";
    for (const IbcSweepRow& r : rows)
        out += std::to_string(r.batch_size) + ',' + format_g9(r.cross_entropy) + '\n';
    atomic_write(path, out);
}

void write_bft_history_csv(const std::string& path, const BftHistory& history) {
    std::string out = "step,lr,loss\n";
    for (const auto& s : history.steps)
        out += std::to_string(s.step) + ',' + format_g9(s.lr) + ',' + format_g9(s.loss) + '\n';
    atomic_write(path, out);
}

void write_theory_csv(const std::string& path, const std::vector<RoundingSumRow>& sums,
                      const std::vector<MssrRow>& mssr) {
    std::string out = "k,empirical_mean,empirical_std,predicted_std,mssr_std\n";
    for (size_t i = 0; i < sums.size(); ++i) {
        const double mssr_std = i < mssr.size() ? mssr[i].stddev : 0.0;
        out += std::to_string(sums[i].k) + ',' + format_g9(sums[i].empirical_mean) + ',' +
               format_g9(sums[i].empirical_std) + ',' + format_g9(sums[i].predicted_std) + ',' +
               format_g9(mssr_std) + '\n';
    }
    atomic_write(path, out);
}

} // namespace qbc::io
