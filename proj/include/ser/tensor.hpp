#pragma once

#include <array>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "ser/errors.hpp"

namespace ser {

struct Shape {
    int n = 0, c = 0, h = 0, w = 0;

    std::size_t size() const {
        return static_cast<std::size_t>(n) * c * h * w;
    }
    bool operator==(const Shape&) const = default;

    std::string str() const {
        return std::to_string(n) + "x" + std::to_string(c) + "x" + std::to_string(h) + "x" +
               std::to_string(w);
    }
};

// Dense NCHW tensor. Flat (vector) data uses h = w = 1.
template <typename T>
struct Tensor {
    Shape shape;
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(Shape s) : shape(s), data(s.size(), T(0)) {}
    Tensor(int n, int c, int h, int w) : Tensor(Shape{n, c, h, w}) {}

    static Tensor flat(int n, int c) { return Tensor(n, c, 1, 1); }

    std::size_t size() const { return data.size(); }

    T* sample(int i) { return data.data() + static_cast<std::size_t>(i) * sample_size(); }
    const T* sample(int i) const {
        return data.data() + static_cast<std::size_t>(i) * sample_size();
    }
    std::size_t sample_size() const {
        return static_cast<std::size_t>(shape.c) * shape.h * shape.w;
    }

    T& at(int n, int c, int h, int w) {
        return data[((static_cast<std::size_t>(n) * shape.c + c) * shape.h + h) * shape.w + w];
    }
    T at(int n, int c, int h, int w) const {
        return data[((static_cast<std::size_t>(n) * shape.c + c) * shape.h + h) * shape.w + w];
    }
};

} // namespace ser
