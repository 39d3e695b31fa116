#pragma once

#include <cstddef>
#include <vector>

#include "cabr/common.hpp"

namespace cabr {

/// Dense NCHW float32 array with an optional gradient buffer.
struct Tensor {
    int n = 0, c = 0, h = 0, w = 0;
    std::vector<float> values;
    std::vector<float> grad;
    bool requires_grad = false;

    Tensor() = default;
    Tensor(int n_, int c_, int h_, int w_)
        : n(n_), c(c_), h(h_), w(w_), values(static_cast<std::size_t>(n_) * c_ * h_ * w_, 0.f) {}

    std::size_t size() const { return values.size(); }
    std::size_t sample_size() const { return static_cast<std::size_t>(c) * h * w; }
    std::size_t plane_size() const { return static_cast<std::size_t>(h) * w; }

    float* sample(int i) { return values.data() + i * sample_size(); }
    const float* sample(int i) const { return values.data() + i * sample_size(); }

    float& at(int ni, int ci, int y, int x) {
        return values[((static_cast<std::size_t>(ni) * c + ci) * h + y) * w + x];
    }
    const float& at(int ni, int ci, int y, int x) const {
        return values[((static_cast<std::size_t>(ni) * c + ci) * h + y) * w + x];
    }

    void set_requires_grad(bool on) {
        requires_grad = on;
        grad.assign(on ? values.size() : 0, 0.f);
    }

    bool same_shape(const Tensor& o) const {
        return n == o.n && c == o.c && h == o.h && w == o.w;
    }

    void check_same_shape(const Tensor& o, const char* what) const {
        if (!same_shape(o)) {
            throw ArgumentError(std::string(what) + ": tensor shapes differ");
        }
    }
};

}  // namespace cabr
