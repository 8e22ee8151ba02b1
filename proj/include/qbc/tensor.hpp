#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace qbc {

// Dense float32 tensor. Activations are laid out batch-height-width-channels,
// convolution kernels height-width-in-out; the innermost dimension is always
// contiguous.
struct Tensor {
    std::vector<int64_t> shape;
    std::vector<float> data;

    Tensor() = default;
    explicit Tensor(std::vector<int64_t> s) : shape(std::move(s)) {
        data.assign(static_cast<size_t>(numel_of(shape)), 0.0f);
    }
    Tensor(std::vector<int64_t> s, std::vector<float> d)
        : shape(std::move(s)), data(std::move(d)) {}

    static int64_t numel_of(const std::vector<int64_t>& s) {
        int64_t n = 1;
        for (int64_t e : s) n *= e;
        return s.empty() ? 0 : n;
    }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    bool empty() const { return data.empty(); }
    int64_t dim(size_t i) const { return shape[i]; }

    // NHWC accessors for rank-4 activation tensors.
    float& at(int64_t b, int64_t y, int64_t x, int64_t c) {
        return data[static_cast<size_t>(((b * shape[1] + y) * shape[2] + x) * shape[3] + c)];
    }
    float at(int64_t b, int64_t y, int64_t x, int64_t c) const {
        return data[static_cast<size_t>(((b * shape[1] + y) * shape[2] + x) * shape[3] + c)];
    }
    float* row(int64_t b, int64_t y, int64_t x) {
        return data.data() + static_cast<size_t>(((b * shape[1] + y) * shape[2] + x) * shape[3]);
    }
    const float* row(int64_t b, int64_t y, int64_t x) const {
        return data.data() + static_cast<size_t>(((b * shape[1] + y) * shape[2] + x) * shape[3]);
    }

    bool same_shape(const Tensor& other) const { return shape == other.shape; }
    bool all_finite() const;
    std::string shape_str() const;
};

} // namespace qbc
