#include <doctest.h>

#include <cmath>

#include "qbc/backward.hpp"
#include "qbc/errors.hpp"
#include "qbc/forward.hpp"
#include "qbc/loss.hpp"
#include "support/builders.hpp"
#include "support/reference.hpp"

using namespace qbc;
using namespace testsup;

TEST_CASE("single dense layer with unit logits gradient gives bias gradient 1") {
    Rng rng(20);
    Graph g = one_dense(4, 3, rng);
    Tensor batch = random_tensor(rng, {1, 1, 1, 4}, -1, 1);
    const ForwardResult res = forward(g, batch, true);
    const std::vector<double> ones(3, 1.0);
    const BiasGrads grads = backward_bias_grads(g, res.trace, ones);
    REQUIRE(grads.per_layer[0].size() == 3);
    for (double v : grads.per_layer[0]) CHECK(v == 1.0);
}

TEST_CASE("relu6 channel saturated on the whole batch has zero bias gradient") {
    Graph g;
    g.input_shape = {1, 1, 1};
    Tensor w({1, 1, 1, 2});
    w.data = {1.0f, 1.0f};
    g.layers.push_back(conv_layer("c", -1, w, {10.0f, 0.0f}, Activation::ReLU6));
    Tensor batch({3, 1, 1, 1});
    batch.data = {0.5f, 1.0f, 2.0f}; // channel 0 pre = 10.5.. (saturated), channel 1 fine
    const ForwardResult res = forward(g, batch, true);
    const std::vector<double> ones(6, 1.0);
    const BiasGrads grads = backward_bias_grads(g, res.trace, ones);
    CHECK(grads.per_layer[0][0] == 0.0);
    CHECK(grads.per_layer[0][1] == 3.0);
}

TEST_CASE("missing trace entries raise") {
    Rng rng(21);
    Graph g = one_dense(4, 3, rng);
    Tensor batch = random_tensor(rng, {1, 1, 1, 4}, -1, 1);
    ForwardResult res = forward(g, batch, true);
    res.trace.layers.clear();
    CHECK_THROWS_AS((void)backward_bias_grads(g, res.trace, std::vector<double>(3, 1.0)),
                    ValidationError);
}

// Central finite differences of a distillation loss against the independent
// double-precision evaluator, on random toy graphs.
TEST_CASE("bias gradients match finite differences on random toy graphs") {
    const double h = 1e-4;
    int graphs_checked = 0;
    for (uint64_t seed = 0; seed < 5; ++seed) {
        Tensor batch;
        Graph g = random_toy_graph(seed, batch);
        ++graphs_checked;

        const ForwardResult res = forward(g, batch, true);
        const int64_t batch_n = res.logits.shape[0];
        const int64_t classes = res.logits.shape[1];

        // fixed random teacher
        Rng trng = Rng::substream(seed, 0xFEEDu);
        Tensor teacher({batch_n, classes});
        for (float& v : teacher.data) v = static_cast<float>(trng.uniform(-1.0, 1.0));

        const DistillationLoss dl = distillation_loss(teacher, res.logits);
        const BiasGrads grads = backward_bias_grads(g, res.trace, dl.grad);

        std::vector<std::vector<double>> biases(g.layers.size());
        for (size_t li = 0; li < g.layers.size(); ++li)
            if (g.layers[li].has_bias())
                biases[li].assign(g.layers[li].bias.begin(), g.layers[li].bias.end());

        std::vector<double> teacher_d(teacher.data.begin(), teacher.data.end());
        for (size_t li = 0; li < g.layers.size(); ++li) {
            for (size_t ch = 0; ch < biases[li].size(); ++ch) {
                auto up = biases, dn = biases;
                up[li][ch] += h;
                dn[li][ch] -= h;
                const double lp = refnet::distill_ce(
                    teacher_d, refnet::logits(g, batch, up), batch_n, classes);
                const double lm = refnet::distill_ce(
                    teacher_d, refnet::logits(g, batch, dn), batch_n, classes);
                const double fd = (lp - lm) / (2 * h);
                const double bp = grads.per_layer[li][ch];
                const double denom = std::max({std::abs(fd), std::abs(bp), 1e-6});
                CHECK(std::abs(fd - bp) / denom < 1e-4);
            }
        }
    }
    CHECK(graphs_checked == 5);
}
