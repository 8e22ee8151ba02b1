#include <cstring>
#include <filesystem>

#include <json.hpp>

#include "qbc/errors.hpp"
#include "qbc/io.hpp"

namespace qbc::io {
namespace {

using nlohmann::json;

constexpr int kModelVersion = 1;

LayerKind kind_from(const std::string& s) {
    if (s == "conv2d") return LayerKind::Conv2D;
    if (s == "depthwise_conv2d") return LayerKind::DepthwiseConv2D;
    if (s == "dense") return LayerKind::Dense;
    if (s == "avg_pool") return LayerKind::AvgPool;
    if (s == "add") return LayerKind::Add;
    if (s == "concat") return LayerKind::Concat;
    throw ValidationError("unknown layer kind '" + s + "'");
}

Activation act_from(const std::string& s) {
    if (s == "none") return Activation::None;
    if (s == "relu") return Activation::ReLU;
    if (s == "relu6") return Activation::ReLU6;
    throw ValidationError("unknown activation '" + s + "'");
}

Padding pad_from(const std::string& s) {
    if (s == "valid") return Padding::Valid;
    if (s == "same") return Padding::Same;
    throw ValidationError("unknown padding '" + s + "'");
}

json grid_to_json(const QuantGrid& g) {
    return json{{"bits", g.bits},          {"scale", g.scale},
                {"zero_point", g.zero_point}, {"symmetric", g.symmetric},
                {"qmin", g.qmin},          {"qmax", g.qmax},
                {"passthrough", g.passthrough}};
}

QuantGrid grid_from_json(const json& j) {
    QuantGrid g;
    g.bits = j.at("bits").get<int>();
    g.scale = j.at("scale").get<double>();
    g.zero_point = j.at("zero_point").get<int32_t>();
    g.symmetric = j.at("symmetric").get<bool>();
    g.qmin = j.at("qmin").get<int32_t>();
    g.qmax = j.at("qmax").get<int32_t>();
    g.passthrough = j.at("passthrough").get<bool>();
    return g;
}

// Structural (weightless) part of a layer.
json layer_structure(const LayerSpec& layer) {
    json jl;
    jl["name"] = layer.name;
    jl["kind"] = to_string(layer.kind);
    jl["inputs"] = layer.inputs;
    jl["activation"] = to_string(layer.act);
    jl["stride"] = layer.stride;
    jl["padding"] = to_string(layer.padding);
    jl["fan_in_k"] = layer.fan_in_k;
    if (layer.kind == LayerKind::AvgPool) jl["pool"] = {layer.pool_h, layer.pool_w};
    if (!layer.dead_channels.empty()) jl["dead_channels"] = layer.dead_channels;
    if (layer.has_weights()) {
        jl["weights_shape"] = layer.weights.shape;
        jl["bias_size"] = layer.bias.size();
    }
    return jl;
}

void parse_structure(const json& jl, LayerSpec& layer) {
    layer.name = jl.at("name").get<std::string>();
    layer.kind = kind_from(jl.at("kind").get<std::string>());
    layer.inputs = jl.at("inputs").get<std::vector<int>>();
    layer.act = act_from(jl.at("activation").get<std::string>());
    layer.stride = jl.at("stride").get<int>();
    layer.padding = pad_from(jl.at("padding").get<std::string>());
    layer.fan_in_k = jl.at("fan_in_k").get<int64_t>();
    if (jl.contains("pool")) {
        layer.pool_h = jl.at("pool").at(0).get<int>();
        layer.pool_w = jl.at("pool").at(1).get<int>();
    }
    if (jl.contains("dead_channels"))
        layer.dead_channels = jl.at("dead_channels").get<std::vector<int>>();
}

std::string blob_path_for(const std::string& manifest_path, const std::string& blob_name) {
    return (std::filesystem::path(manifest_path).parent_path() / blob_name).string();
}

void append_f32(std::string& blob, const float* data, size_t n) {
    blob.append(reinterpret_cast<const char*>(data), n * sizeof(float));
}

void append_i32(std::string& blob, const int32_t* data, size_t n) {
    blob.append(reinterpret_cast<const char*>(data), n * sizeof(int32_t));
}

// Full-precision model blobs are float32 throughout; quantized-model blobs
// store bias values as float64 so corrected biases survive a round trip
// exactly. Offsets count 4-byte units in both.
void append_f32_narrowed(std::string& blob, const std::vector<double>& vals) {
    for (double v : vals) {
        const float f = static_cast<float>(v);
        blob.append(reinterpret_cast<const char*>(&f), sizeof(float));
    }
}

void append_f64(std::string& blob, const std::vector<double>& vals) {
    blob.append(reinterpret_cast<const char*>(vals.data()), vals.size() * sizeof(double));
}

json parse_manifest(const std::string& manifest_path, const char* expect_format) {
    json j;
    try {
        j = json::parse(read_file(manifest_path));
    } catch (const json::parse_error& e) {
        throw IoError("bad manifest " + manifest_path + ": " + e.what());
    }
    if (!j.contains("format") || j.at("format").get<std::string>() != expect_format)
        throw ValidationError(manifest_path + ": not a " + std::string(expect_format) +
                              " manifest");
    if (j.at("version").get<int>() != kModelVersion)
        throw ValidationError(manifest_path + ": unsupported version");
    return j;
}

std::string load_blob(const json& j, const std::string& manifest_path) {
    const std::string blob_path = blob_path_for(manifest_path, j.at("blob").get<std::string>());
    std::string blob = read_file(blob_path);
    const size_t expect = j.at("blob_bytes").get<size_t>();
    if (blob.size() != expect)
        throw IoError(blob_path + ": blob is " + std::to_string(blob.size()) +
                      " bytes, manifest says " + std::to_string(expect));
    return blob;
}

void copy_f32(std::vector<float>& dst, const std::string& blob, int64_t offset, size_t n,
              const std::string& who) {
    const size_t byte0 = static_cast<size_t>(offset) * 4;
    if (byte0 + n * 4 > blob.size()) throw IoError(who + ": blob segment out of range");
    dst.resize(n);
    std::memcpy(dst.data(), blob.data() + byte0, n * 4);
}

void copy_i32(std::vector<int32_t>& dst, const std::string& blob, int64_t offset, size_t n,
              const std::string& who) {
    const size_t byte0 = static_cast<size_t>(offset) * 4;
    if (byte0 + n * 4 > blob.size()) throw IoError(who + ": blob segment out of range");
    dst.resize(n);
    std::memcpy(dst.data(), blob.data() + byte0, n * 4);
}

void copy_f32_widened(std::vector<double>& dst, const std::string& blob, int64_t offset,
                      size_t n, const std::string& who) {
    std::vector<float> tmp;
    copy_f32(tmp, blob, offset, n, who);
    dst.assign(tmp.begin(), tmp.end());
}

void copy_f64(std::vector<double>& dst, const std::string& blob, int64_t offset, size_t n,
              const std::string& who) {
    const size_t byte0 = static_cast<size_t>(offset) * 4;
    if (byte0 + n * 8 > blob.size()) throw IoError(who + ": blob segment out of range");
    dst.resize(n);
    std::memcpy(dst.data(), blob.data() + byte0, n * 8);
}

} // namespace

void save_model(const Graph& g, const std::string& manifest_path, const std::string& blob_name) {
    json j;
    j["format"] = "qbc-model";
    j["version"] = kModelVersion;
    j["input_shape"] = g.input_shape;
    j["output_layer"] = g.output_layer;
    j["blob"] = blob_name;

    std::string blob;
    json layers = json::array();
    for (const LayerSpec& layer : g.layers) {
        json jl = layer_structure(layer);
        if (layer.has_weights()) {
            jl["weights_offset"] = blob.size() / 4;
            append_f32(blob, layer.weights.data.data(), layer.weights.data.size());
            jl["bias_offset"] = layer.has_bias() ? static_cast<int64_t>(blob.size() / 4) : -1;
            if (layer.has_bias()) append_f32_narrowed(blob, layer.bias);
            if (layer.bn) {
                jl["bn_offset"] = blob.size() / 4;
                jl["bn_epsilon"] = layer.bn->epsilon;
                append_f32(blob, layer.bn->gamma.data(), layer.bn->gamma.size());
                append_f32(blob, layer.bn->beta.data(), layer.bn->beta.size());
                append_f32(blob, layer.bn->mean.data(), layer.bn->mean.size());
                append_f32(blob, layer.bn->variance.data(), layer.bn->variance.size());
            }
        }
        layers.push_back(jl);
    }
    j["layers"] = layers;
    j["blob_bytes"] = blob.size();

    atomic_write(blob_path_for(manifest_path, blob_name), blob);
    atomic_write(manifest_path, j.dump(2) + "\n");
}

Graph load_model(const std::string& manifest_path) {
    const json j = parse_manifest(manifest_path, "qbc-model");
    const std::string blob = load_blob(j, manifest_path);

    Graph g;
    g.input_shape = j.at("input_shape").get<std::vector<int64_t>>();
    g.output_layer = j.at("output_layer").get<int>();
    for (const json& jl : j.at("layers")) {
        LayerSpec layer;
        parse_structure(jl, layer);
        if (layer.has_weights()) {
            const auto shape = jl.at("weights_shape").get<std::vector<int64_t>>();
            const size_t n = static_cast<size_t>(Tensor::numel_of(shape));
            layer.weights.shape = shape;
            copy_f32(layer.weights.data, blob, jl.at("weights_offset").get<int64_t>(), n,
                     layer.name);
            const int64_t bias_offset = jl.at("bias_offset").get<int64_t>();
            if (bias_offset >= 0)
                copy_f32_widened(layer.bias, blob, bias_offset,
                                 jl.at("bias_size").get<size_t>(), layer.name);
            if (jl.contains("bn_offset")) {
                BatchNorm bn;
                bn.epsilon = jl.at("bn_epsilon").get<double>();
                const int64_t off = jl.at("bn_offset").get<int64_t>();
                const size_t c = static_cast<size_t>(out_channels(layer));
                copy_f32(bn.gamma, blob, off, c, layer.name);
                copy_f32(bn.beta, blob, off + static_cast<int64_t>(c), c, layer.name);
                copy_f32(bn.mean, blob, off + 2 * static_cast<int64_t>(c), c, layer.name);
                copy_f32(bn.variance, blob, off + 3 * static_cast<int64_t>(c), c, layer.name);
                layer.bn = std::move(bn);
            }
        }
        g.layers.push_back(std::move(layer));
    }

    const auto diags = topo_validate(g);
    if (!diags.empty()) throw ValidationError(manifest_path + ": " + diags.front());
    return g;
}

void save_qmodel(const QuantizedModel& qm, const std::string& manifest_path,
                 const std::string& blob_name) {
    json j;
    j["format"] = "qbc-qmodel";
    j["version"] = kModelVersion;
    j["input_shape"] = qm.graph.input_shape;
    j["output_layer"] = qm.graph.output_layer;
    j["bits_w"] = qm.bits_w;
    j["bits_a"] = qm.bits_a;
    j["input_grid"] = grid_to_json(qm.input_grid);
    j["blob"] = blob_name;

    std::string blob;
    json layers = json::array();
    for (size_t i = 0; i < qm.graph.layers.size(); ++i) {
        const LayerSpec& layer = qm.graph.layers[i];
        const LayerQuant& lq = qm.layers[i];
        json jl = layer_structure(layer);
        jl["a_grid"] = grid_to_json(lq.a_grid);
        if (layer.has_weights()) {
            jl["w_grid"] = grid_to_json(lq.w_grid);
            if (lq.w_grid.passthrough) {
                jl["weights_offset"] = blob.size() / 4;
                append_f32(blob, layer.weights.data.data(), layer.weights.data.size());
            } else {
                jl["w_codes_offset"] = blob.size() / 4;
                append_i32(blob, lq.w_codes.data(), lq.w_codes.size());
            }
            if (layer.has_bias()) {
                jl["b_grid"] = grid_to_json(lq.b_grid);
                jl["bias_offset"] = blob.size() / 4;
                append_f64(blob, layer.bias);
            } else {
                jl["bias_offset"] = -1;
            }
        }
        layers.push_back(jl);
    }
    j["layers"] = layers;
    j["blob_bytes"] = blob.size();

    atomic_write(blob_path_for(manifest_path, blob_name), blob);
    atomic_write(manifest_path, j.dump(2) + "\n");
}

QuantizedModel load_qmodel(const std::string& manifest_path) {
    const json j = parse_manifest(manifest_path, "qbc-qmodel");
    const std::string blob = load_blob(j, manifest_path);

    QuantizedModel qm;
    qm.graph.input_shape = j.at("input_shape").get<std::vector<int64_t>>();
    qm.graph.output_layer = j.at("output_layer").get<int>();
    qm.bits_w = j.at("bits_w").get<int>();
    qm.bits_a = j.at("bits_a").get<int>();
    qm.input_grid = grid_from_json(j.at("input_grid"));

    for (const json& jl : j.at("layers")) {
        LayerSpec layer;
        LayerQuant lq;
        parse_structure(jl, layer);
        lq.a_grid = grid_from_json(jl.at("a_grid"));
        if (layer.has_weights()) {
            lq.has_weights = true;
            lq.w_grid = grid_from_json(jl.at("w_grid"));
            const auto shape = jl.at("weights_shape").get<std::vector<int64_t>>();
            const size_t n = static_cast<size_t>(Tensor::numel_of(shape));
            layer.weights.shape = shape;
            if (lq.w_grid.passthrough) {
                copy_f32(layer.weights.data, blob, jl.at("weights_offset").get<int64_t>(), n,
                         layer.name);
            } else {
                copy_i32(lq.w_codes, blob, jl.at("w_codes_offset").get<int64_t>(), n,
                         layer.name);
                layer.weights.data.resize(n);
                for (size_t k = 0; k < n; ++k)
                    layer.weights.data[k] = static_cast<float>(
                        static_cast<double>(lq.w_codes[k]) * lq.w_grid.scale);
            }
            const int64_t bias_offset = jl.at("bias_offset").get<int64_t>();
            if (bias_offset >= 0) {
                lq.has_bias = true;
                lq.b_grid = grid_from_json(jl.at("b_grid"));
                copy_f64(layer.bias, blob, bias_offset, jl.at("bias_size").get<size_t>(),
                         layer.name);
            }
        }
        qm.graph.layers.push_back(std::move(layer));
        qm.layers.push_back(std::move(lq));
    }

    const auto diags = topo_validate(qm.graph);
    if (!diags.empty()) throw ValidationError(manifest_path + ": " + diags.front());
    return qm;
}

} // namespace qbc::io
