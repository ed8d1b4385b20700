#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <vector>

#include "rnnet/errors.hpp"

namespace rnnet {

// Dense row-major numeric array, rank <= 4. Gradients live in a separate
// same-shape buffer managed by the parameter store.
struct Tensor {
    std::vector<size_t> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<size_t> s) : shape(std::move(s)) {
        data.assign(numel(shape), 0.0);
    }
    Tensor(std::vector<size_t> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
        if (data.size() != numel(shape)) {
            throw ShapeError("tensor data length does not match shape");
        }
    }

    static size_t numel(const std::vector<size_t>& shape) {
        size_t n = 1;
        for (size_t d : shape) n *= d;
        return n;
    }

    size_t size() const { return data.size(); }
    size_t rank() const { return shape.size(); }
    size_t dim(size_t i) const { return i < shape.size() ? shape[i] : 1; }

    double& at(size_t i) { return data[i]; }
    double at(size_t i) const { return data[i]; }

    // (n, c, h, w) indexing for rank-4 tensors.
    double& at4(size_t n, size_t c, size_t h, size_t w) {
        return data[((n * shape[1] + c) * shape[2] + h) * shape[3] + w];
    }
    double at4(size_t n, size_t c, size_t h, size_t w) const {
        return data[((n * shape[1] + c) * shape[2] + h) * shape[3] + w];
    }

    // (n, f) indexing for rank-2 tensors.
    double& at2(size_t n, size_t f) { return data[n * shape[1] + f]; }
    double at2(size_t n, size_t f) const { return data[n * shape[1] + f]; }

    void fill(double v) { std::fill(data.begin(), data.end(), v); }
    bool same_shape(const Tensor& other) const { return shape == other.shape; }
    void check_finite(const char* what) const;
};

}  // namespace rnnet
