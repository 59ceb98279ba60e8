#pragma once

#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "race/errors.hpp"

namespace race {

// Dense row-major array. Rank is 1 or 2 everywhere in this codebase; batch
// dimensions are handled by looping, not by higher-rank tensors.
template <class S>
struct Array {
    std::vector<int> shape;
    std::vector<S> data;

    Array() = default;
    Array(std::vector<int> shp, std::vector<S> values) : shape(std::move(shp)), data(std::move(values)) {
        if (numel(shape) != data.size()) throw ShapeError("array: shape does not match data length");
    }

    static size_t numel(const std::vector<int>& shp) {
        size_t n = 1;
        for (int d : shp) {
            if (d < 0) throw ShapeError("array: negative dimension");
            n *= static_cast<size_t>(d);
        }
        return n;
    }

    static Array zeros(std::vector<int> shp) {
        size_t n = numel(shp);
        return Array(std::move(shp), std::vector<S>(n, S(0)));
    }

    static Array full(std::vector<int> shp, S v) {
        size_t n = numel(shp);
        return Array(std::move(shp), std::vector<S>(n, v));
    }

    size_t size() const { return data.size(); }
    bool is_scalar() const { return data.size() == 1; }

    int rows() const { return shape.empty() ? 1 : shape[0]; }
    int cols() const { return shape.size() < 2 ? (shape.empty() ? 1 : shape[0]) : shape[1]; }

    S& at(int r, int c) { return data[static_cast<size_t>(r) * cols() + c]; }
    S at(int r, int c) const { return data[static_cast<size_t>(r) * cols() + c]; }

    bool same_shape(const Array& o) const { return shape == o.shape; }

    std::string shape_str() const {
        std::string s = "[";
        for (size_t i = 0; i < shape.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(shape[i]);
        }
        return s + "]";
    }

    template <class T>
    Array<T> cast() const {
        Array<T> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<T>(data[i]);
        return out;
    }
};

// A value with an optional gradient slot. Model parameters are Tensors that
// outlive the per-step computation graphs; gradients accumulate across
// backward calls until zero_grad().
template <class S>
struct Tensor {
    Array<S> value;
    bool requires_grad = false;
    Array<S> grad;

    Tensor() = default;
    explicit Tensor(Array<S> v, bool req_grad = false) : value(std::move(v)), requires_grad(req_grad) {
        if (requires_grad) grad = Array<S>::zeros(value.shape);
    }

    void zero_grad() {
        if (requires_grad) std::fill(grad.data.begin(), grad.data.end(), S(0));
    }
};

using ArrayF = Array<float>;
using ArrayD = Array<double>;
using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace race
