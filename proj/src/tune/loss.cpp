#include "qbc/loss.hpp"

#include <algorithm>
#include <cmath>

#include "qbc/errors.hpp"

namespace qbc {
namespace {

// softmax and log-softmax of one row, max-subtracted.
void row_softmax(const float* logits, int64_t c, std::vector<double>& p,
                 std::vector<double>& logp) {
    double mx = logits[0];
    for (int64_t i = 1; i < c; ++i) mx = std::max(mx, static_cast<double>(logits[i]));
    double z = 0.0;
    for (int64_t i = 0; i < c; ++i) {
        const double e = std::exp(static_cast<double>(logits[i]) - mx);
        p[static_cast<size_t>(i)] = e;
        z += e;
    }
    const double logz = std::log(z);
    for (int64_t i = 0; i < c; ++i) {
        logp[static_cast<size_t>(i)] = static_cast<double>(logits[i]) - mx - logz;
        p[static_cast<size_t>(i)] /= z;
    }
}

void check_finite(const Tensor& t, const char* who) {
    if (!t.all_finite()) throw NumericError(std::string(who) + ": non-finite logits");
}

} // namespace

DistillationLoss distillation_loss(const Tensor& teacher_logits, const Tensor& student_logits) {
    if (!teacher_logits.same_shape(student_logits))
        throw ValidationError("distillation loss: logits shapes differ");
    check_finite(teacher_logits, "distillation loss (teacher)");
    check_finite(student_logits, "distillation loss (student)");

    const int64_t n = teacher_logits.shape[0];
    const int64_t c = teacher_logits.numel() / n;
    DistillationLoss out;
    out.grad.assign(static_cast<size_t>(n * c), 0.0);

    std::vector<double> pt(static_cast<size_t>(c)), logpt(static_cast<size_t>(c));
    std::vector<double> ps(static_cast<size_t>(c)), logps(static_cast<size_t>(c));
    const double inv_n = 1.0 / static_cast<double>(n);
    double total = 0.0;
    for (int64_t b = 0; b < n; ++b) {
        row_softmax(teacher_logits.data.data() + b * c, c, pt, logpt);
        row_softmax(student_logits.data.data() + b * c, c, ps, logps);
        double l = 0.0;
        for (int64_t i = 0; i < c; ++i) {
            l -= pt[static_cast<size_t>(i)] * logps[static_cast<size_t>(i)];
            out.grad[static_cast<size_t>(b * c + i)] =
                (ps[static_cast<size_t>(i)] - pt[static_cast<size_t>(i)]) * inv_n;
        }
        total += l;
    }
    out.loss = total * inv_n;
    return out;
}

double distillation_loss_value(const Tensor& teacher_logits, const Tensor& student_logits) {
    return distillation_loss(teacher_logits, student_logits).loss;
}

double softmax_entropy(const Tensor& logits) {
    const int64_t n = logits.shape[0];
    const int64_t c = logits.numel() / n;
    std::vector<double> p(static_cast<size_t>(c)), logp(static_cast<size_t>(c));
    double total = 0.0;
    for (int64_t b = 0; b < n; ++b) {
        row_softmax(logits.data.data() + b * c, c, p, logp);
        double h = 0.0;
        for (int64_t i = 0; i < c; ++i)
            h -= p[static_cast<size_t>(i)] * logp[static_cast<size_t>(i)];
        total += h;
    }
    return total / static_cast<double>(n);
}

std::vector<int64_t> argmax_classes(const Tensor& logits) {
    const int64_t n = logits.shape[0];
    const int64_t c = logits.numel() / n;
    std::vector<int64_t> out(static_cast<size_t>(n));
    for (int64_t b = 0; b < n; ++b) {
        const float* row = logits.data.data() + b * c;
        int64_t best = 0;
        for (int64_t i = 1; i < c; ++i)
            if (row[i] > row[best]) best = i;
        out[static_cast<size_t>(b)] = best;
    }
    return out;
}

double top1_accuracy(const Tensor& logits, const std::vector<int64_t>& labels) {
    const std::vector<int64_t> pred = argmax_classes(logits);
    if (pred.size() != labels.size())
        throw ValidationError("top1: label count " + std::to_string(labels.size()) +
                              " != batch size " + std::to_string(pred.size()));
    int64_t hits = 0;
    for (size_t i = 0; i < pred.size(); ++i)
        if (pred[i] == labels[i]) ++hits;
    return static_cast<double>(hits) / static_cast<double>(pred.size());
}

} // namespace qbc
