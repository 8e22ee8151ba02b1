#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "qbc/bft.hpp"
#include "qbc/graph.hpp"
#include "qbc/ibc.hpp"
#include "qbc/qmodel.hpp"
#include "qbc/stats.hpp"
#include "qbc/tensor.hpp"
#include "qbc/theory.hpp"

namespace qbc::io {

// Model format: JSON manifest describing layers and element offsets into a
// raw little-endian binary blob that sits next to it. Full-precision blobs
// are float32 only; quantized blobs mix int32 code segments and float32
// value segments, both 4-byte little-endian, with offsets in elements.
void save_model(const Graph& g, const std::string& manifest_path,
                const std::string& blob_name = "params.bin");
Graph load_model(const std::string& manifest_path);

void save_qmodel(const QuantizedModel& qm, const std::string& manifest_path,
                 const std::string& blob_name = "qparams.bin");
QuantizedModel load_qmodel(const std::string& manifest_path);

// Tensor container: magic, dtype, rank, extents, float32 payload.
void save_tensor(const Tensor& t, const std::string& path);
Tensor load_tensor(const std::string& path);

// One integer label per line.
void save_labels(const std::vector<int64_t>& labels, const std::string& path);
std::vector<int64_t> load_labels(const std::string& path);

// All output files go through a temp-file + rename so partial writes never
// land under their final name.
void atomic_write(const std::string& path, const std::string& contents);

std::string sha256_hex(const void* data, size_t len);
std::string sha256_file(const std::string& path);

// Locale-independent numeric formatting, 9 significant digits.
std::string format_g9(double v);

struct RunInfo {
    std::string command;
    std::vector<std::pair<std::string, std::string>> config; // resolved flag values
    std::vector<std::string> input_files;                    // digested into the manifest
    uint64_t seed = 0;
    double duration_seconds = 0.0;
};
void write_run_manifest(const std::string& out_dir, const RunInfo& info);

void write_channel_stats_csv(const std::string& path, const std::vector<ChannelStats>& stats,
                             const std::vector<std::string>& layer_names);
void write_layer_stats_csv(const std::string& path, const std::vector<LayerStats>& layers,
                           const std::vector<std::string>& layer_names);
void write_stats_summary_json(const std::string& path, const std::vector<LayerStats>& layers,
                              const std::vector<std::string>& layer_names);
void write_ibc_report_csv(const std::string& path, const IbcReport& report,
                          const std::vector<std::string>& layer_names);
void write_ibc_sweep_csv(const std::string& path, const std::vector<IbcSweepRow>& rows);
void write_bft_history_csv(const std::string& path, const BftHistory& history);
void write_theory_csv(const std::string& path, const std::vector<RoundingSumRow>& sums,
                      const std::vector<MssrRow>& mssr);

// Minimal CSV reader used by the report round-trip checks.
std::vector<std::vector<std::string>> read_csv(const std::string& path);

std::string read_file(const std::string& path);
bool file_exists(const std::string& path);
void ensure_dir(const std::string& path);

} // namespace qbc::io
