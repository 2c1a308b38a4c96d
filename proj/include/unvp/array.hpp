#pragma once

// Dense row-major arrays of doubles. Everything numeric in this library runs
// on 64-bit floats; there is no narrower storage path.

#include <cmath>
#include <cstddef>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "unvp/error.hpp"

namespace unvp {

struct Array {
    std::vector<std::size_t> shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad; // same length as data whenever requires_grad

    Array() = default;

    explicit Array(std::vector<std::size_t> s, double fill = 0.0) : shape(std::move(s)) {
        data.assign(count(shape), fill);
    }

    static std::size_t count(const std::vector<std::size_t>& s) {
        std::size_t n = 1;
        for (std::size_t d : s) n *= d;
        return n;
    }

    std::size_t numel() const { return data.size(); }

    std::size_t rows() const {
        if (shape.size() != 2) throw ShapeError("rows(): array is not 2-d");
        return shape[0];
    }
    std::size_t cols() const {
        if (shape.size() != 2) throw ShapeError("cols(): array is not 2-d");
        return shape[1];
    }

    double& at(std::size_t i, std::size_t j) { return data[i * cols() + j]; }
    double at(std::size_t i, std::size_t j) const { return data[i * cols() + j]; }

    void set_requires_grad() {
        requires_grad = true;
        grad.assign(data.size(), 0.0);
    }

    void zero_grad() {
        if (requires_grad) grad.assign(data.size(), 0.0);
    }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    std::string shape_str() const {
        std::ostringstream os;
        os << '[';
        for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
        os << ']';
        return os.str();
    }
};

using ArrayPtr = std::shared_ptr<Array>;

inline ArrayPtr make_array(std::vector<std::size_t> shape, double fill = 0.0) {
    return std::make_shared<Array>(std::move(shape), fill);
}

inline ArrayPtr make_array(std::vector<std::size_t> shape, std::vector<double> values) {
    auto a = std::make_shared<Array>();
    a->shape = std::move(shape);
    if (Array::count(a->shape) != values.size())
        throw ShapeError("make_array: value count does not match shape");
    a->data = std::move(values);
    return a;
}

// Trainable leaf, zero-filled. Callers fill in their init scheme.
inline ArrayPtr make_param(std::vector<std::size_t> shape) {
    auto a = make_array(std::move(shape));
    a->set_requires_grad();
    return a;
}

inline void zero_grads(const std::vector<ArrayPtr>& params) {
    for (const auto& p : params) p->zero_grad();
}

} // namespace unvp
