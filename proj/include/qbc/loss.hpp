#pragma once

#include <vector>

#include "qbc/tensor.hpp"

namespace qbc {

struct DistillationLoss {
    double loss = 0.0;
    std::vector<double> grad; // dLoss/dStudentLogits, includes the 1/batch factor
};

// Batch-averaged cross-entropy between softmax(teacher) and softmax(student)
// logits. log-softmax uses max subtraction; gradient is
// (softmax(student) - softmax(teacher)) / batch. Throws NumericError on
// non-finite logits.
DistillationLoss distillation_loss(const Tensor& teacher_logits, const Tensor& student_logits);

double distillation_loss_value(const Tensor& teacher_logits, const Tensor& student_logits);

// Mean entropy of softmax(logits); the floor of the distillation loss.
double softmax_entropy(const Tensor& logits);

std::vector<int64_t> argmax_classes(const Tensor& logits);

// Fraction of rows where argmax(logits) equals the label.
double top1_accuracy(const Tensor& logits, const std::vector<int64_t>& labels);

} // namespace qbc
