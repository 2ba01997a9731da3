#pragma once

#include "humus/fft.hpp"
#include "humus/ops.hpp"

namespace humus {

// Complex data lives as (real, imag) pairs of equal shape.

template <class T>
struct CArray {
    Tensor<T> re, im;

    CArray() = default;
    explicit CArray(Shape s) : re(s), im(std::move(s)) {}
    CArray(Tensor<T> r, Tensor<T> i) : re(std::move(r)), im(std::move(i)) {
        if (re.shape != im.shape)
            throw ShapeError(sstr("complex parts differ: ", shape_str(re.shape), " vs ", shape_str(im.shape)));
    }

    const Shape& shape() const { return re.shape; }
    int64_t size() const { return re.size(); }

    template <class U>
    CArray<U> cast() const {
        return {re.template cast<U>(), im.template cast<U>()};
    }
};

// Centered orthonormal 2-D FFT over the two trailing axes of each part.
template <class T>
void fft2c(CArray<T>& a, bool inverse = false) {
    const Shape& s = a.shape();
    if (s.size() < 2) throw ShapeError("fft2c: needs rank >= 2");
    const int64_t h = s[s.size() - 2], w = s[s.size() - 1];
    fft2c_batched(a.re.data.data(), a.im.data.data(), a.size() / (h * w), h, w, inverse);
}

template <class T>
CArray<T> fft2c_copy(const CArray<T>& a, bool inverse = false) {
    CArray<T> out = a;
    fft2c(out, inverse);
    return out;
}

// ---------------------------------------------------------------------------
// Graph-side complex values

template <class T>
struct ComplexVar {
    Var<T> re, im;

    const Shape& shape() const { return re.shape(); }
    CArray<T> carray() const { return {re.tensor(), im.tensor()}; }
};

template <class T>
ComplexVar<T> complex_leaf(Tape<T>& tp, const CArray<T>& a, bool requires_grad = false) {
    return {tp.leaf(a.re, requires_grad), tp.leaf(a.im, requires_grad)};
}

template <class T>
ComplexVar<T> complex_constant(Tape<T>& tp, const CArray<T>& a) {
    return {tp.constant(a.re), tp.constant(a.im)};
}

template <class T>
ComplexVar<T> cadd(ComplexVar<T> a, ComplexVar<T> b) {
    return {ops::add(a.re, b.re), ops::add(a.im, b.im)};
}

template <class T>
ComplexVar<T> csub(ComplexVar<T> a, ComplexVar<T> b) {
    return {ops::sub(a.re, b.re), ops::sub(a.im, b.im)};
}

template <class T>
ComplexVar<T> cscale(ComplexVar<T> a, T c) {
    return {ops::mul_scalar(a.re, c), ops::mul_scalar(a.im, c)};
}

template <class T>
ComplexVar<T> cmul(ComplexVar<T> a, ComplexVar<T> b) {
    using namespace ops;
    return {sub(mul(a.re, b.re), mul(a.im, b.im)), add(mul(a.re, b.im), mul(a.im, b.re))};
}

// a * conj(b)
template <class T>
ComplexVar<T> cmul_conj(ComplexVar<T> a, ComplexVar<T> b) {
    using namespace ops;
    return {add(mul(a.re, b.re), mul(a.im, b.im)), sub(mul(a.im, b.re), mul(a.re, b.im))};
}

template <class T>
Var<T> cabs2(ComplexVar<T> a) {
    using namespace ops;
    return add(mul(a.re, a.re), mul(a.im, a.im));
}

template <class T>
ComplexVar<T> csum_axis0(ComplexVar<T> a) {
    return {ops::sum_axis0(a.re), ops::sum_axis0(a.im)};
}

template <class T>
ComplexVar<T> crepeat_axis0(ComplexVar<T> a, int64_t n) {
    return {ops::repeat_axis0(a.re, n), ops::repeat_axis0(a.im, n)};
}

namespace ops_fft {

// One node holding the packed [2, batch..., H, W] spectrum. The transform is
// unitary on the stacked real representation, so the backward pass is the
// opposite-direction transform applied to the gradient planes.
template <class T>
Var<T> fft2c_packed(Var<T> x, bool inverse) {
    const Shape& s = x.shape();
    if (s.size() < 3 || s[0] != 2)
        throw ShapeError(sstr("fft2c: packed input must be [2,...,H,W], got ", shape_str(s)));
    const int64_t h = s[s.size() - 2], w = s[s.size() - 1];
    check_fft_extent(h, w);
    const int64_t plane = x.size() / 2;
    const int64_t batch = plane / (h * w);

    auto& tp = x.tape();
    auto& n = tp.make(s, x.requires_grad());
    auto out = tp.mutable_values(n);
    auto xv = x.values();
    std::copy(xv.begin(), xv.end(), out.begin());
    fft2c_batched(out.data(), out.data() + plane, batch, h, w, inverse);
    if (n.needs) {
        n.back = [self = n.id, xi = x.id(), plane, batch, h, w, inverse](Tape<T>& t) {
            auto g = t.node_grad(self);
            std::vector<T> tmp(g.begin(), g.end());
            fft2c_batched(tmp.data(), tmp.data() + plane, batch, h, w, !inverse);
            T* gx = t.grad_accum(xi);
            for (size_t i = 0; i < tmp.size(); ++i) gx[i] += tmp[i];
        };
    }
    return tp.handle(n);
}

}  // namespace ops_fft

// Centered orthonormal 2-D FFT over the trailing two axes, differentiable.
template <class T>
ComplexVar<T> cfft2c(ComplexVar<T> a, bool inverse = false) {
    Shape s = a.shape();
    Shape lifted = s;
    lifted.insert(lifted.begin(), 1);
    Var<T> packed = ops::concat(ops::reshape(a.re, lifted), ops::reshape(a.im, lifted), 0);
    Var<T> y = ops_fft::fft2c_packed(packed, inverse);
    Var<T> yre = ops::reshape(ops::slice_axis0(y, 0, 1), s);
    Var<T> yim = ops::reshape(ops::slice_axis0(y, 1, 1), s);
    return {yre, yim};
}

template <class T>
ComplexVar<T> cifft2c(ComplexVar<T> a) {
    return cfft2c(a, true);
}

}  // namespace humus
