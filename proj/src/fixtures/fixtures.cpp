#include "qbc/fixtures.hpp"

#include <cmath>

#include "qbc/forward.hpp"
#include "qbc/loss.hpp"
#include "qbc/rng.hpp"

namespace qbc::fixtures {
namespace {

constexpr int64_t kImage = 8;
constexpr int64_t kChannelsIn = 3;
constexpr int kClasses = 10;

Tensor random_kernel(Rng& rng, std::vector<int64_t> shape) {
    Tensor t(std::move(shape));
    const double fan_in =
        static_cast<double>(t.shape[0] * t.shape[1] * t.shape[2]);
    const double sigma = 1.0 / std::sqrt(fan_in);
    for (float& v : t.data) v = static_cast<float>(rng.normal(0.0, sigma));
    return t;
}

LayerSpec conv(const std::string& name, int input, Tensor w, Activation act) {
    LayerSpec l;
    l.name = name;
    l.kind = LayerKind::Conv2D;
    l.inputs = {input};
    l.act = act;
    l.padding = Padding::Same;
    l.fan_in_k = w.shape[0] * w.shape[1] * w.shape[2];
    l.bias.assign(static_cast<size_t>(w.shape[3]), 0.0);
    l.weights = std::move(w);
    return l;
}

LayerSpec depthwise(const std::string& name, int input, Tensor w, Activation act) {
    LayerSpec l;
    l.name = name;
    l.kind = LayerKind::DepthwiseConv2D;
    l.inputs = {input};
    l.act = act;
    l.padding = Padding::Same;
    l.fan_in_k = w.shape[0] * w.shape[1];
    l.bias.assign(static_cast<size_t>(w.shape[2]), 0.0);
    l.weights = std::move(w);
    return l;
}

// Rescales weights and re-draws biases so that channel pre-activation means
// sit near `mean` (with per-channel jitter) and the overall spread is
// `stddev`, measured on the probe batch. Keeps layer statistics in a
// sensible range regardless of depth.
void normalize_layer(Graph& g, size_t index, const Tensor& probe, double mean, double stddev,
                     double jitter, Rng& rng) {
    LayerSpec& layer = g.layers[index];
    std::fill(layer.bias.begin(), layer.bias.end(), 0.0f);
    ForwardResult res = run_network(g, probe, /*capture=*/true, nullptr,
                                    static_cast<int>(index));
    const Tensor& pre = res.trace.layers[index].pre;
    const int64_t c = pre.shape[3];
    const int64_t pixels = pre.numel() / c;

    std::vector<double> ch_mean(static_cast<size_t>(c), 0.0);
    double sq = 0.0;
    const float* d = pre.data.data();
    for (int64_t p = 0; p < pixels; ++p, d += c)
        for (int64_t ch = 0; ch < c; ++ch) ch_mean[static_cast<size_t>(ch)] += d[ch];
    for (double& v : ch_mean) v /= static_cast<double>(pixels);
    d = pre.data.data();
    for (int64_t p = 0; p < pixels; ++p, d += c)
        for (int64_t ch = 0; ch < c; ++ch) {
            const double dev = d[ch] - ch_mean[static_cast<size_t>(ch)];
            sq += dev * dev;
        }
    const double spread = std::sqrt(sq / static_cast<double>(pre.numel()));
    const double scale = spread > 1e-12 ? stddev / spread : 1.0;

    for (float& v : layer.weights.data) v = static_cast<float>(v * scale);
    for (int64_t ch = 0; ch < c; ++ch)
        layer.bias[static_cast<size_t>(ch)] = static_cast<float>(
            mean - scale * ch_mean[static_cast<size_t>(ch)] + rng.normal(0.0, jitter));
}

void zero_channel(LayerSpec& layer, int64_t ch) {
    const int64_t co = layer.weights.shape[3];
    const int64_t rows = layer.weights.numel() / co;
    for (int64_t r = 0; r < rows; ++r) layer.weights.data[static_cast<size_t>(r * co + ch)] = 0.0f;
    layer.bias[static_cast<size_t>(ch)] = 0.0;
}

} // namespace

Tensor make_images(uint64_t seed, uint64_t stream, int64_t count) {
    Rng proto_rng = Rng::substream(seed, 0x1Du);
    const int64_t pixels = kImage * kImage * kChannelsIn;
    std::vector<float> protos(static_cast<size_t>(kClasses * pixels));
    for (float& v : protos) v = static_cast<float>(proto_rng.uniform01());

    Rng rng = Rng::substream(seed, 0x1Eu, stream);
    Tensor batch({count, kImage, kImage, kChannelsIn});
    const double blend = 0.75;
    for (int64_t i = 0; i < count; ++i) {
        const float* p = protos.data() + (i % kClasses) * pixels;
        float* dst = batch.data.data() + i * pixels;
        for (int64_t j = 0; j < pixels; ++j)
            dst[j] = static_cast<float>(blend * p[j] + (1.0 - blend) * rng.uniform01());
    }
    return batch;
}

Graph make_dwnet(uint64_t seed) {
    Rng wrng = Rng::substream(seed, 0x2Au);

    Graph g;
    g.input_shape = {kImage, kImage, kChannelsIn};
    g.layers.push_back(conv("conv1", -1, random_kernel(wrng, {3, 3, 3, 8}), Activation::ReLU6));
    g.layers.push_back(depthwise("dw1", 0, random_kernel(wrng, {3, 3, 8, 1}), Activation::ReLU6));
    g.layers.push_back(conv("pw1", 1, random_kernel(wrng, {1, 1, 8, 8}), Activation::ReLU6));
    g.layers.push_back(depthwise("dw2", 2, random_kernel(wrng, {3, 3, 8, 1}), Activation::ReLU6));
    g.layers.push_back(conv("pw2", 3, random_kernel(wrng, {1, 1, 8, 16}), Activation::ReLU6));
    {
        // 4x4 windows keep a 2x2 spatial map alive; full spatial pooling
        // would flatten the feature variance the classifier depends on.
        LayerSpec pool;
        pool.name = "pool";
        pool.kind = LayerKind::AvgPool;
        pool.inputs = {4};
        pool.pool_h = 4;
        pool.pool_w = 4;
        pool.stride = 4;
        g.layers.push_back(pool);
    }
    {
        LayerSpec logits;
        logits.name = "logits";
        logits.kind = LayerKind::Dense;
        logits.inputs = {5};
        logits.fan_in_k = 64;
        logits.weights = random_kernel(wrng, {1, 1, 64, kClasses});
        logits.bias.assign(kClasses, 0.0);
        g.layers.push_back(logits);
    }

    // Normalize layer by layer, applying each layer's edge-case overrides
    // before the layers that consume it are normalized, so downstream
    // channel statistics land on target.
    const Tensor probe = make_images(seed, 0, 64);
    Rng jrng = Rng::substream(seed, 0x2Bu);
    normalize_layer(g, 0, probe, 1.0, 0.8, 0.18, jrng);
    normalize_layer(g, 1, probe, 1.0, 0.75, 0.18, jrng);
    // A depthwise channel leaning into the ReLU6 knee; clipping hides part
    // of the conv-output distribution from post-activation measurements.
    g.layers[1].bias[2] = static_cast<float>(g.layers[1].bias[2] + 4.2);
    normalize_layer(g, 2, probe, 1.0, 0.75, 0.18, jrng);
    // Dead pointwise channel: constant zero output on every input.
    zero_channel(g.layers[2], 0);
    normalize_layer(g, 3, probe, 1.0, 0.75, 0.18, jrng);
    // Another saturated-leaning channel (mostly, not always, above the knee
    // so it stays off the dead-channel list), and a negative bias on the
    // slice that reads the dead channel: its output would otherwise be the
    // constant ReLU6(bias), and parking the cascade at 0 keeps zeroing
    // prediction-neutral.
    g.layers[3].bias[1] = 5.7f;
    g.layers[3].bias[0] = -0.4f;
    normalize_layer(g, 4, probe, 0.95, 0.75, 0.18, jrng);
    normalize_layer(g, 6, probe, 0.0, 1.9, 0.3, jrng);
    return g;
}

Graph make_dwnet_bn(uint64_t seed) {
    Graph g = make_dwnet(seed);
    Rng rng = Rng::substream(seed, 0x3Cu);
    for (size_t li : {size_t{0}, size_t{2}, size_t{4}, size_t{6}}) {
        LayerSpec& layer = g.layers[li];
        const int64_t co = layer.weights.shape[3];
        BatchNorm bn;
        bn.epsilon = 1e-3;
        bn.gamma.resize(static_cast<size_t>(co));
        bn.beta.resize(static_cast<size_t>(co));
        bn.mean.resize(static_cast<size_t>(co));
        bn.variance.resize(static_cast<size_t>(co));
        // Choose parameters, then invert the folding formula so that folding
        // this network reproduces the plain one bit-for-bit in double math.
        for (int64_t ch = 0; ch < co; ++ch) {
            const size_t c = static_cast<size_t>(ch);
            bn.gamma[c] = static_cast<float>(rng.uniform(0.5, 1.5));
            bn.beta[c] = static_cast<float>(rng.normal(0.0, 0.3));
            bn.mean[c] = static_cast<float>(rng.normal(0.0, 0.5));
            bn.variance[c] = static_cast<float>(rng.uniform(0.25, 2.25));
            const double f = bn.gamma[c] / std::sqrt(static_cast<double>(bn.variance[c]) +
                                                     bn.epsilon);
            const int64_t rows = layer.weights.numel() / co;
            for (int64_t r = 0; r < rows; ++r) {
                float& w = layer.weights.data[static_cast<size_t>(r * co + ch)];
                w = static_cast<float>(static_cast<double>(w) / f);
            }
            layer.bias[c] = static_cast<float>(
                bn.mean[c] + (layer.bias[c] - bn.beta[c]) / f);
        }
        layer.bn = std::move(bn);
    }
    return g;
}

FixtureSet make_fixture_set(uint64_t seed) {
    FixtureSet f;
    f.model = make_dwnet(seed);
    f.model_bn = make_dwnet_bn(seed);
    f.calib = make_images(seed, 1, 64);
    f.ibc_pool = make_images(seed, 2, 64);
    f.tune = make_images(seed, 3, 512);
    f.holdout = make_images(seed, 4, 256);
    const Tensor logits = forward(f.model, f.holdout, false).logits;
    f.holdout_labels = argmax_classes(logits);
    return f;
}

} // namespace qbc::fixtures
