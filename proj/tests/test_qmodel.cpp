#include <doctest.h>

#include <cmath>

#include "qbc/errors.hpp"
#include "qbc/fixtures.hpp"
#include "qbc/ibc.hpp"
#include "qbc/qmodel.hpp"
#include "support/builders.hpp"

using namespace qbc;
using namespace testsup;

TEST_CASE("identity batch norm folds to unchanged parameters") {
    Rng rng(40);
    Graph g;
    g.input_shape = {3, 3, 2};
    g.layers.push_back(conv_layer("c", -1, random_tensor(rng, {3, 3, 2, 2}, -1, 1),
                                  {0.5f, -0.25f}, Activation::None, Padding::Same));
    BatchNorm bn;
    bn.gamma = {1.0f, 1.0f};
    bn.beta = {0.0f, 0.0f};
    bn.mean = {0.0f, 0.0f};
    bn.variance = {1.0f, 1.0f};
    bn.epsilon = 0.0;
    g.layers[0].bn = bn;
    const Graph folded = fold_batchnorm(g);
    CHECK(folded.layers[0].weights.data == g.layers[0].weights.data);
    CHECK(folded.layers[0].bias == g.layers[0].bias);
    CHECK(!folded.layers[0].bn);
}

TEST_CASE("batch norm folding hand case") {
    Graph g;
    g.input_shape = {1, 1, 1};
    Tensor w({1, 1, 1, 1});
    w.data = {1.0f};
    g.layers.push_back(conv_layer("c", -1, w, {0.0f}, Activation::None));
    BatchNorm bn;
    bn.gamma = {2.0f};
    bn.beta = {1.0f};
    bn.mean = {0.5f};
    bn.variance = {4.0f};
    bn.epsilon = 0.0;
    g.layers[0].bn = bn;
    const Graph folded = fold_batchnorm(g);
    CHECK(folded.layers[0].weights.data[0] == doctest::Approx(1.0).epsilon(1e-7));
    CHECK(folded.layers[0].bias[0] == doctest::Approx(0.5).epsilon(1e-7));
}

TEST_CASE("zero variance with positive epsilon folds to a finite near-constant channel") {
    Graph g;
    g.input_shape = {1, 1, 1};
    Tensor w({1, 1, 1, 1});
    w.data = {1.0f};
    g.layers.push_back(conv_layer("c", -1, w, {0.0f}, Activation::None));
    BatchNorm bn;
    bn.gamma = {1e-6f};
    bn.beta = {0.7f};
    bn.mean = {0.0f};
    bn.variance = {0.0f};
    bn.epsilon = 1e-3;
    g.layers[0].bn = bn;
    const Graph folded = fold_batchnorm(g);
    CHECK(std::isfinite(folded.layers[0].weights.data[0]));
    CHECK(std::abs(folded.layers[0].weights.data[0]) < 1e-3);
    CHECK(folded.layers[0].bias[0] == doctest::Approx(0.7).epsilon(1e-6));
}

TEST_CASE("negative batch-norm variance raises a numeric error") {
    Graph g;
    g.input_shape = {1, 1, 1};
    Tensor w({1, 1, 1, 1});
    w.data = {1.0f};
    g.layers.push_back(conv_layer("c", -1, w, {0.0f}, Activation::None));
    BatchNorm bn;
    bn.gamma = {1.0f};
    bn.beta = {0.0f};
    bn.mean = {0.0f};
    bn.variance = {-1.0f};
    g.layers[0].bn = bn;
    CHECK_THROWS_AS((void)fold_batchnorm(g), NumericError);
}

TEST_CASE("folding the synthetic bn fixture reproduces the plain net") {
    const Graph plain = fixtures::make_dwnet(11);
    const Graph bn_net = fixtures::make_dwnet_bn(11);
    const Graph folded = fold_batchnorm(bn_net);
    const Tensor batch = fixtures::make_images(11, 5, 8);
    const Tensor a = forward(plain, batch, false).logits;
    const Tensor b = forward(folded, batch, false).logits;
    const Tensor c = forward(bn_net, batch, false).logits;
    for (int64_t i = 0; i < a.numel(); ++i) {
        const double scale = std::max(1.0, std::abs(static_cast<double>(a.data[i])));
        CHECK(std::abs(a.data[i] - b.data[i]) / scale < 1e-5);
        CHECK(std::abs(a.data[i] - c.data[i]) / scale < 1e-5);
    }
}

TEST_CASE("dead channel detection: zero, saturated, and barely-alive channels") {
    Rng rng(41);
    Graph g;
    g.input_shape = {4, 4, 2};
    Tensor w = random_tensor(rng, {1, 1, 2, 3}, 0.5, 1.0);
    // channel 0: all-zero weights and bias
    w.data[0] = w.data[3] = 0.0f;
    // channel 1: tiny weights, bias far above the relu6 ceiling
    w.data[1] = w.data[4] = 1e-4f;
    g.layers.push_back(conv_layer("c", -1, w, {0.0f, 8.0f, 0.1f}, Activation::ReLU6));

    Tensor calib = random_tensor(rng, {8, 4, 4, 2}, 0.0, 1.0);
    Graph worked = g;
    const DeadChannelReport report = drop_dead_channels(worked, calib);
    REQUIRE(report.zeroed.size() == 2);
    CHECK(report.zeroed[0].channel == 0);
    CHECK(report.zeroed[1].channel == 1);
    CHECK(report.zeroed[1].constant_value == doctest::Approx(6.0));
    CHECK(worked.layers[0].dead_channels == std::vector<int>{0, 1});
    CHECK(worked.layers[0].bias[1] == 0.0f);

    // a channel with small but real variance stays
    bool ch2_flagged = false;
    for (const auto& z : report.zeroed) ch2_flagged |= z.channel == 2;
    CHECK(!ch2_flagged);
}

TEST_CASE("dead-channel zeroing keeps fixture calibration predictions") {
    const fixtures::FixtureSet f = fixtures::make_fixture_set(42);
    Graph g = f.model;
    const DeadChannelReport report = drop_dead_channels(g, f.calib);
    CHECK(report.zeroed.size() == 2);
    CHECK(report.predictions_changed == 0);
}

TEST_CASE("identity conv chain calibrated on [0,1] gets 1/255 grids") {
    Graph g;
    g.input_shape = {2, 2, 1};
    for (int i = 0; i < 2; ++i) {
        Tensor w({1, 1, 1, 1});
        w.data = {1.0f};
        g.layers.push_back(
            conv_layer("id" + std::to_string(i), i - 1, w, {0.0f}, Activation::None));
    }
    Tensor calib({2, 2, 2, 1});
    calib.data = {0.0f, 0.25f, 0.5f, 1.0f, 0.75f, 0.1f, 0.9f, 0.2f};
    const QuantizedModel qm = quantize_model(g, calib, 8, 8);
    CHECK(qm.input_grid.scale == doctest::Approx(1.0 / 255).epsilon(1e-9));
    for (const auto& lq : qm.layers)
        CHECK(lq.a_grid.scale == doctest::Approx(1.0 / 255).epsilon(1e-9));
}

TEST_CASE("32-bit mode is an exact no-op pipeline") {
    const fixtures::FixtureSet f = fixtures::make_fixture_set(13);
    const QuantizedModel qm = quantize_model(f.model, f.calib, 32, 32);
    const Tensor a = forward(f.model, f.holdout, false).logits;
    const Tensor b = forward_quant(qm, f.holdout, false).logits;
    REQUIRE(a.numel() == b.numel());
    for (int64_t i = 0; i < a.numel(); ++i)
        CHECK(std::abs(a.data[i] - b.data[i]) <= 1e-6 * std::max(1.0f, std::abs(a.data[i])));
}

TEST_CASE("quantize_model refuses unfolded batch norm") {
    const Graph bn_net = fixtures::make_dwnet_bn(11);
    const Tensor calib = fixtures::make_images(11, 1, 4);
    CHECK_THROWS_AS((void)quantize_model(bn_net, calib, 8, 8), ValidationError);
}

TEST_CASE("quantized forward basics") {
    const fixtures::FixtureSet f = fixtures::make_fixture_set(42);
    Graph g = f.model;
    drop_dead_channels(g, f.calib);
    const QuantizedModel qm = quantize_model(g, f.calib, 8, 8);

    SUBCASE("zero input with zero biases stays exactly zero") {
        Graph zg;
        zg.input_shape = {2, 2, 1};
        Tensor w({1, 1, 1, 1});
        w.data = {0.5f};
        zg.layers.push_back(conv_layer("c", -1, w, {0.0f}, Activation::None));
        Tensor calib({1, 2, 2, 1});
        calib.data = {0.0f, 0.5f, 1.0f, 0.25f};
        const QuantizedModel zq = quantize_model(zg, calib, 8, 8);
        Tensor zero({1, 2, 2, 1});
        const Tensor out = forward_quant(zq, zero, false).logits;
        for (float v : out.data) CHECK(v == 0.0f);
    }

    SUBCASE("captured post activations never exceed the grid ceiling") {
        const ForwardResult res = forward_quant(qm, slice_batch(f.holdout, 0, 8), true);
        for (size_t li = 0; li < qm.layers.size(); ++li) {
            const double hi = qm.layers[li].a_grid.cmax() * (1 + 1e-6);
            const double lo = qm.layers[li].a_grid.cmin() - 1e-9;
            for (float v : res.trace.layers[li].post.data) {
                CHECK(v <= hi);
                CHECK(v >= lo);
            }
        }
    }

    SUBCASE("real zero is representable on every activation grid") {
        CHECK(fake_quant(0.0, qm.input_grid) == 0.0);
        for (const auto& lq : qm.layers) CHECK(fake_quant(0.0, lq.a_grid) == 0.0);
    }

    SUBCASE("on-grid weights leave only activation rounding") {
        Graph lg;
        lg.input_shape = {1, 1, 2};
        Tensor w({1, 1, 2, 2});
        w.data = {0.5f, -0.25f, 0.75f, 1.0f}; // multiples of 1/127? use exact grid values
        // make weights exact multiples of max/127 by construction
        for (float& v : w.data) v = static_cast<float>(std::round(v * 127.0) / 127.0);
        lg.layers.push_back(conv_layer("c", -1, w, {0.0f, 0.0f}, Activation::None));
        Rng rng(50);
        Tensor calib = random_tensor(rng, {16, 1, 1, 2}, -1.0, 1.0);
        const QuantizedModel lq = quantize_model(lg, calib, 8, 8);
        const Tensor fp = forward(lg, calib, false).logits;
        const Tensor qv = forward_quant(lq, calib, false).logits;
        // error bounded by input rounding (propagated) + output rounding
        const double bound = lq.input_grid.scale * (0.5 * (0.5 + 0.25 + 0.75 + 1.0)) +
                             lq.layers[0].a_grid.scale * 0.5 + 1e-9;
        for (int64_t i = 0; i < fp.numel(); ++i)
            CHECK(std::abs(fp.data[i] - qv.data[i]) <= bound);
    }
}

TEST_CASE("quantize_model is deterministic") {
    const fixtures::FixtureSet f = fixtures::make_fixture_set(42);
    Graph g = f.model;
    drop_dead_channels(g, f.calib);
    const QuantizedModel a = quantize_model(g, f.calib, 6, 8);
    const QuantizedModel b = quantize_model(g, f.calib, 6, 8);
    CHECK(same_except_biases(a, b));
    for (size_t i = 0; i < a.layers.size(); ++i)
        CHECK(a.graph.layers[i].bias == b.graph.layers[i].bias);
}
