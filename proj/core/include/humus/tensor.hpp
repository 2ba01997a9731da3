#pragma once

#include <span>

#include "humus/base.hpp"

namespace humus {

// Plain dense row-major buffer. Image axes are ordered [B,C,H,W] (or [C,H,W]),
// token matrices are [tokens, dim].
template <class T>
struct Tensor {
    Shape shape;
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(Shape s) : shape(std::move(s)), data(size_t(numel(shape)), T(0)) {}
    Tensor(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        if (int64_t(data.size()) != numel(shape))
            throw ShapeError(sstr("tensor data length ", data.size(), " != numel of ", shape_str(shape)));
    }

    int64_t size() const { return int64_t(data.size()); }
    T& operator[](size_t i) { return data[i]; }
    const T& operator[](size_t i) const { return data[i]; }

    static Tensor full(Shape s, T v) {
        Tensor t(std::move(s));
        for (auto& x : t.data) x = v;
        return t;
    }

    static Tensor random_uniform(Shape s, Rng& rng, T lo = T(-1), T hi = T(1)) {
        Tensor t(std::move(s));
        for (auto& x : t.data) x = T(rng.uniform(double(lo), double(hi)));
        return t;
    }

    static Tensor random_normal(Shape s, Rng& rng, T sd = T(1)) {
        Tensor t(std::move(s));
        for (auto& x : t.data) x = T(rng.normal(0.0, double(sd)));
        return t;
    }

    template <class U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (size_t i = 0; i < data.size(); ++i) out.data[i] = U(data[i]);
        return out;
    }
};

template <class T>
T max_abs_diff(std::span<const T> a, std::span<const T> b) {
    T m = 0;
    for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

template <class T>
T max_rel_diff(std::span<const T> a, std::span<const T> b, T floor = T(1e-8)) {
    T m = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        T d = std::abs(a[i] - b[i]);
        T den = std::max({std::abs(a[i]), std::abs(b[i]), floor});
        m = std::max(m, d / den);
    }
    return m;
}

}  // namespace humus
