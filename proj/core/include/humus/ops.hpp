#pragma once

#include <algorithm>
#include <cmath>
#include <memory>

#include "humus/tape.hpp"

namespace humus {
namespace ops {

namespace detail {

template <class T>
Tape<T>& same_tape(const Var<T>& a, const Var<T>& b, const char* op) {
    if (&a.tape() != &b.tape()) throw Error(sstr(op, ": operands live on different tapes"));
    return a.tape();
}

template <class T>
void check_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(sstr(op, ": shape mismatch ", shape_str(a.shape()), " vs ", shape_str(b.shape())));
}

template <class T>
T* maybe_grad(Tape<T>& tp, int id) {
    return tp.node_requires(id) ? tp.grad_accum(id) : nullptr;
}

constexpr int64_t kPar = 1 << 13;  // below this, parallelizing costs more than it saves

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary

template <class T, class Fwd, class Bwd>
Var<T> binary_elementwise(Var<T> a, Var<T> b, const char* name, Fwd fwd, Bwd bwd) {
    auto& tp = detail::same_tape(a, b, name);
    detail::check_same_shape(a, b, name);
    auto& n = tp.make(a.shape(), a.requires_grad() || b.requires_grad());
    auto out = tp.mutable_values(n);
    auto av = a.values(), bv = b.values();
    for (size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i], bv[i]);
    if (n.needs) {
        n.back = [self = n.id, ai = a.id(), bi = b.id(), bwd](Tape<T>& t) {
            auto g = t.node_grad(self);
            auto av2 = t.node_values(ai), bv2 = t.node_values(bi);
            T* ga = detail::maybe_grad(t, ai);
            T* gb = detail::maybe_grad(t, bi);
            for (size_t i = 0; i < g.size(); ++i) {
                auto [da, db] = bwd(av2[i], bv2[i]);
                if (ga) ga[i] += g[i] * da;
                if (gb) gb[i] += g[i] * db;
            }
        };
    }
    return tp.handle(n);
}

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
    return binary_elementwise(
        a, b, "add", [](T x, T y) { return x + y; },
        [](T, T) { return std::pair<T, T>(T(1), T(1)); });
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
    return binary_elementwise(
        a, b, "sub", [](T x, T y) { return x - y; },
        [](T, T) { return std::pair<T, T>(T(1), T(-1)); });
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
    return binary_elementwise(
        a, b, "mul", [](T x, T y) { return x * y; },
        [](T x, T y) { return std::pair<T, T>(y, x); });
}

template <class T>
Var<T> div(Var<T> a, Var<T> b) {
    return binary_elementwise(
        a, b, "div", [](T x, T y) { return x / y; },
        [](T x, T y) { return std::pair<T, T>(T(1) / y, -x / (y * y)); });
}

// ---------------------------------------------------------------------------
// Elementwise unary

template <class T, class Fwd, class Bwd>
Var<T> unary_elementwise(Var<T> a, Fwd fwd, Bwd bwd) {
    auto& tp = a.tape();
    auto& n = tp.make(a.shape(), a.requires_grad());
    auto out = tp.mutable_values(n);
    auto av = a.values();
    for (size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i]);
    if (n.needs) {
        n.back = [self = n.id, ai = a.id(), bwd](Tape<T>& t) {
            auto g = t.node_grad(self);
            auto av2 = t.node_values(ai);
            T* ga = t.grad_accum(ai);
            for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bwd(av2[i]);
        };
    }
    return tp.handle(n);
}

template <class T>
Var<T> add_scalar(Var<T> a, T c) {
    return unary_elementwise(
        a, [c](T x) { return x + c; }, [](T) { return T(1); });
}

template <class T>
Var<T> mul_scalar(Var<T> a, T c) {
    return unary_elementwise(
        a, [c](T x) { return x * c; }, [c](T) { return c; });
}

template <class T>
Var<T> div_scalar(Var<T> a, T c) {
    return unary_elementwise(
        a, [c](T x) { return x / c; }, [c](T) { return T(1) / c; });
}

template <class T>
Var<T> neg(Var<T> a) {
    return mul_scalar(a, T(-1));
}

// sqrt(x + eps); eps > 0 keeps the gradient finite at x == 0
template <class T>
Var<T> sqrt_eps(Var<T> a, T eps = T(0)) {
    return unary_elementwise(
        a, [eps](T x) { return std::sqrt(x + eps); },
        [eps](T x) { return T(0.5) / std::sqrt(x + eps); });
}

template <class T>
Var<T> leaky_relu(Var<T> a, T slope) {
    if (!(slope > T(0) && slope < T(1)))
        throw Error(sstr("leaky_relu: slope must be in (0,1), got ", slope));
    return unary_elementwise(
        a, [slope](T x) { return x > T(0) ? x : slope * x; },
        [slope](T x) { return x > T(0) ? T(1) : slope; });
}

// tanh-approximation gelu
template <class T>
Var<T> gelu(Var<T> a) {
    constexpr T c = T(0.7978845608028653558798921198687);  // sqrt(2/pi)
    constexpr T k = T(0.044715);
    return unary_elementwise(
        a,
        [](T x) {
            T u = c * (x + k * x * x * x);
            return T(0.5) * x * (T(1) + std::tanh(u));
        },
        [](T x) {
            T u = c * (x + k * x * x * x);
            T th = std::tanh(u);
            T sech2 = T(1) - th * th;
            return T(0.5) * (T(1) + th) + T(0.5) * x * sech2 * c * (T(1) + T(3) * k * x * x);
        });
}

// x * s where s is a learnable one-element tensor broadcast over x
template <class T>
Var<T> mul_broadcast_scalar(Var<T> x, Var<T> s) {
    auto& tp = detail::same_tape(x, s, "mul_broadcast_scalar");
    if (s.size() != 1)
        throw ShapeError(sstr("mul_broadcast_scalar: scale must be one element, got ",
                              shape_str(s.shape())));
    auto& n = tp.make(x.shape(), x.requires_grad() || s.requires_grad());
    auto out = tp.mutable_values(n);
    auto xv = x.values();
    const T sv = s.values()[0];
    for (size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * sv;
    if (n.needs) {
        n.back = [self = n.id, xi = x.id(), si = s.id()](Tape<T>& t) {
            auto g = t.node_grad(self);
            auto xv2 = t.node_values(xi);
            const T sv2 = t.node_values(si)[0];
            if (T* gx = detail::maybe_grad(t, xi))
                for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * sv2;
            if (T* gs = detail::maybe_grad(t, si)) {
                T acc = 0;
                for (size_t i = 0; i < g.size(); ++i) acc += g[i] * xv2[i];
                gs[0] += acc;
            }
        };
    }
    return tp.handle(n);
}

// ---------------------------------------------------------------------------
// Reductions

template <class T>
Var<T> sum_all(Var<T> a) {
    auto& tp = a.tape();
    auto& n = tp.make(Shape{1}, a.requires_grad());
    auto av = a.values();
    T s = 0;
    for (T x : av) s += x;
    tp.mutable_values(n)[0] = s;
    if (n.needs) {
        n.back = [self = n.id, ai = a.id()](Tape<T>& t) {
            T g = t.node_grad(self)[0];
            T* ga = t.grad_accum(ai);
            size_t m = t.node_values(ai).size();
            for (size_t i = 0; i < m; ++i) ga[i] += g;
        };
    }
    return tp.handle(n);
}

template <class T>
Var<T> mean_all(Var<T> a) {
    return div_scalar(sum_all(a), T(a.size()));
}

// sum over the leading axis: [N, rest...] -> [rest...]
template <class T>
Var<T> sum_axis0(Var<T> a) {
    if (a.shape().size() < 2) throw ShapeError("sum_axis0: needs rank >= 2");
    Shape out_shape(a.shape().begin() + 1, a.shape().end());
    int64_t n0 = a.shape()[0], rest = numel(out_shape);
    auto& tp = a.tape();
    auto& n = tp.make(out_shape, a.requires_grad());
    auto out = tp.mutable_values(n);
    auto av = a.values();
    for (int64_t j = 0; j < rest; ++j) {
        T s = 0;
        for (int64_t i = 0; i < n0; ++i) s += av[size_t(i * rest + j)];
        out[size_t(j)] = s;
    }
    if (n.needs) {
        n.back = [self = n.id, ai = a.id(), n0, rest](Tape<T>& t) {
            auto g = t.node_grad(self);
            T* ga = t.grad_accum(ai);
            for (int64_t i = 0; i < n0; ++i)
                for (int64_t j = 0; j < rest; ++j) ga[size_t(i * rest + j)] += g[size_t(j)];
        };
    }
    return tp.handle(n);
}

// ---------------------------------------------------------------------------
// Shape plumbing

template <class T>
Var<T> reshape(Var<T> a, Shape shape) {
    if (numel(shape) != a.size())
        throw ShapeError(sstr("reshape: cannot view ", shape_str(a.shape()), " as ", shape_str(shape)));
    auto& tp = a.tape();
    auto& n = tp.make(std::move(shape), a.requires_grad());
    auto out = tp.mutable_values(n);
    auto av = a.values();
    std::copy(av.begin(), av.end(), out.begin());
    if (n.needs) {
        n.back = [self = n.id, ai = a.id()](Tape<T>& t) {
            auto g = t.node_grad(self);
            T* ga = t.grad_accum(ai);
            for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        };
    }
    return tp.handle(n);
}

// out[i] = in[idx[i]]; indices may repeat (backward scatter-adds).
template <class T>
Var<T> gather(Var<T> a, std::shared_ptr<const std::vector<int32_t>> idx, Shape out_shape) {
    if (int64_t(idx->size()) != numel(out_shape))
        throw ShapeError(sstr("gather: index count ", idx->size(), " != numel of ", shape_str(out_shape)));
    auto& tp = a.tape();
    auto& n = tp.make(std::move(out_shape), a.requires_grad());
    auto out = tp.mutable_values(n);
    auto av = a.values();
    const auto& ix = *idx;
    for (size_t i = 0; i < out.size(); ++i) out[i] = av[size_t(ix[i])];
    if (n.needs) {
        n.back = [self = n.id, ai = a.id(), idx](Tape<T>& t) {
            auto g = t.node_grad(self);
            T* ga = t.grad_accum(ai);
            const auto& ix2 = *idx;
            for (size_t i = 0; i < g.size(); ++i) ga[size_t(ix2[i])] += g[i];
        };
    }
    return tp.handle(n);
}

template <class T>
Var<T> gather(Var<T> a, std::vector<int32_t> idx, Shape out_shape) {
    return gather(a, std::make_shared<const std::vector<int32_t>>(std::move(idx)), std::move(out_shape));
}

// rows [start, start+len) of the leading axis
template <class T>
Var<T> slice_axis0(Var<T> a, int64_t start, int64_t len) {
    if (a.shape().empty()) throw ShapeError("slice_axis0: needs rank >= 1");
    const int64_t n0 = a.shape()[0];
    if (start < 0 || len < 1 || start + len > n0)
        throw ShapeError(sstr("slice_axis0: range [", start, ",", start + len, ") out of [0,", n0, ")"));
    Shape os = a.shape();
    os[0] = len;
    const int64_t rest = a.size() / n0;
    auto& tp = a.tape();
    auto& n = tp.make(os, a.requires_grad());
    auto out = tp.mutable_values(n);
    auto av = a.values();
    std::copy(av.begin() + start * rest, av.begin() + (start + len) * rest, out.begin());
    if (n.needs) {
        n.back = [self = n.id, ai = a.id(), start, rest](Tape<T>& t) {
            auto g = t.node_grad(self);
            T* ga = t.grad_accum(ai);
            for (size_t i = 0; i < g.size(); ++i) ga[size_t(start * rest) + i] += g[i];
        };
    }
    return tp.handle(n);
}

// [rest...] -> [n0, rest...], repeating the input n0 times
template <class T>
Var<T> repeat_axis0(Var<T> a, int64_t n0) {
    if (n0 < 1) throw ShapeError("repeat_axis0: n0 must be >= 1");
    Shape os = a.shape();
    os.insert(os.begin(), n0);
    const int64_t rest = a.size();
    auto& tp = a.tape();
    auto& n = tp.make(os, a.requires_grad());
    auto out = tp.mutable_values(n);
    auto av = a.values();
    for (int64_t r = 0; r < n0; ++r) std::copy(av.begin(), av.end(), out.begin() + r * rest);
    if (n.needs) {
        n.back = [self = n.id, ai = a.id(), n0, rest](Tape<T>& t) {
            auto g = t.node_grad(self);
            T* ga = t.grad_accum(ai);
            for (int64_t r = 0; r < n0; ++r)
                for (int64_t i = 0; i < rest; ++i) ga[size_t(i)] += g[size_t(r * rest + i)];
        };
    }
    return tp.handle(n);
}

template <class T>
Var<T> concat(Var<T> a, Var<T> b, int axis) {
    auto& tp = detail::same_tape(a, b, "concat");
    const Shape &sa = a.shape(), &sb = b.shape();
    if (sa.size() != sb.size()) throw ShapeError("concat: rank mismatch");
    if (axis < 0 || size_t(axis) >= sa.size()) throw ShapeError(sstr("concat: bad axis ", axis));
    for (size_t d = 0; d < sa.size(); ++d)
        if (int(d) != axis && sa[d] != sb[d])
            throw ShapeError(sstr("concat: shapes ", shape_str(sa), " and ", shape_str(sb),
                                  " differ on non-concat axis ", d));
    Shape os = sa;
    os[size_t(axis)] += sb[size_t(axis)];
    int64_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= sa[size_t(d)];
    for (size_t d = size_t(axis) + 1; d < sa.size(); ++d) inner *= sa[d];
    const int64_t wa = sa[size_t(axis)] * inner, wb = sb[size_t(axis)] * inner;

    auto& n = tp.make(os, a.requires_grad() || b.requires_grad());
    auto out = tp.mutable_values(n);
    auto av = a.values(), bv = b.values();
    for (int64_t o = 0; o < outer; ++o) {
        std::copy(av.begin() + o * wa, av.begin() + (o + 1) * wa, out.begin() + o * (wa + wb));
        std::copy(bv.begin() + o * wb, bv.begin() + (o + 1) * wb, out.begin() + o * (wa + wb) + wa);
    }
    if (n.needs) {
        n.back = [self = n.id, ai = a.id(), bi = b.id(), outer, wa, wb](Tape<T>& t) {
            auto g = t.node_grad(self);
            T* ga = detail::maybe_grad(t, ai);
            T* gb = detail::maybe_grad(t, bi);
            for (int64_t o = 0; o < outer; ++o) {
                const T* gs = g.data() + o * (wa + wb);
                if (ga)
                    for (int64_t i = 0; i < wa; ++i) ga[o * wa + i] += gs[i];
                if (gb)
                    for (int64_t i = 0; i < wb; ++i) gb[o * wb + i] += gs[wa + i];
            }
        };
    }
    return tp.handle(n);
}

// ---------------------------------------------------------------------------
// Affine over the trailing axis

template <class T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b) {
    auto& tp = detail::same_tape(x, w, "linear");
    const Shape& xs = x.shape();
    if (xs.empty()) throw ShapeError("linear: input must have rank >= 1");
    if (w.shape().size() != 2)
        throw ShapeError(sstr("linear: weight must be [Din,Dout], got ", shape_str(w.shape())));
    const int64_t din = w.shape()[0], dout = w.shape()[1];
    if (xs.back() != din)
        throw ShapeError(sstr("linear: trailing axis of input (", xs.back(), ") != weight Din (", din, ")"));
    if (b.shape() != Shape{dout})
        throw ShapeError(sstr("linear: bias shape ", shape_str(b.shape()), " != [", dout, "]"));
    Shape os = xs;
    os.back() = dout;
    const int64_t rows = numel(xs) / din;

    auto& n = tp.make(os, x.requires_grad() || w.requires_grad() || b.requires_grad());
    auto out = tp.mutable_values(n);
    const T* xv = x.values().data();
    const T* wv = w.values().data();
    const T* bv = b.values().data();
#pragma omp parallel for if (rows * dout * din > detail::kPar)
    for (int64_t r = 0; r < rows; ++r) {
        T* orow = out.data() + r * dout;
        for (int64_t j = 0; j < dout; ++j) orow[j] = bv[j];
        const T* xrow = xv + r * din;
        for (int64_t i = 0; i < din; ++i) {
            const T xi = xrow[i];
            const T* wrow = wv + i * dout;
            for (int64_t j = 0; j < dout; ++j) orow[j] += xi * wrow[j];
        }
    }
    if (n.needs) {
        n.back = [self = n.id, xi_ = x.id(), wi_ = w.id(), bi_ = b.id(), rows, din, dout](Tape<T>& t) {
            const T* g = t.node_grad(self).data();
            const T* xv2 = t.node_values(xi_).data();
            const T* wv2 = t.node_values(wi_).data();
            if (T* gx = detail::maybe_grad(t, xi_)) {
#pragma omp parallel for if (rows * dout * din > detail::kPar)
                for (int64_t r = 0; r < rows; ++r) {
                    const T* grow = g + r * dout;
                    T* gxr = gx + r * din;
                    for (int64_t i = 0; i < din; ++i) {
                        const T* wrow = wv2 + i * dout;
                        T s = 0;
                        for (int64_t j = 0; j < dout; ++j) s += grow[j] * wrow[j];
                        gxr[i] += s;
                    }
                }
            }
            if (T* gw = detail::maybe_grad(t, wi_)) {
#pragma omp parallel for if (rows * dout * din > detail::kPar)
                for (int64_t i = 0; i < din; ++i) {
                    T* gwr = gw + i * dout;
                    for (int64_t r = 0; r < rows; ++r) {
                        const T xi2 = xv2[r * din + i];
                        const T* grow = g + r * dout;
                        for (int64_t j = 0; j < dout; ++j) gwr[j] += xi2 * grow[j];
                    }
                }
            }
            if (T* gb = detail::maybe_grad(t, bi_)) {
                for (int64_t r = 0; r < rows; ++r)
                    for (int64_t j = 0; j < dout; ++j) gb[j] += g[r * dout + j];
            }
        };
    }
    return tp.handle(n);
}

// ---------------------------------------------------------------------------
// Batched matmul: a[B,M,K] x b[B,K,N] -> [B,M,N]; trans_b treats b as [B,N,K].

template <class T>
Var<T> bmm(Var<T> a, Var<T> b, bool trans_b = false) {
    auto& tp = detail::same_tape(a, b, "bmm");
    if (a.shape().size() != 3 || b.shape().size() != 3)
        throw ShapeError(sstr("bmm: expects rank-3 operands, got ", shape_str(a.shape()), " and ",
                              shape_str(b.shape())));
    const int64_t B = a.shape()[0], M = a.shape()[1], K = a.shape()[2];
    const int64_t N = trans_b ? b.shape()[1] : b.shape()[2];
    const int64_t bk = trans_b ? b.shape()[2] : b.shape()[1];
    if (b.shape()[0] != B || bk != K)
        throw ShapeError(sstr("bmm: incompatible shapes ", shape_str(a.shape()), " and ",
                              shape_str(b.shape()), trans_b ? " (trans_b)" : ""));

    auto& n = tp.make(Shape{B, M, N}, a.requires_grad() || b.requires_grad());
    auto out = tp.mutable_values(n);
    const T* av = a.values().data();
    const T* bv = b.values().data();
#pragma omp parallel for if (B * M * N * K > detail::kPar)
    for (int64_t bm = 0; bm < B * M; ++bm) {
        const int64_t bb = bm / M, m = bm % M;
        const T* arow = av + (bb * M + m) * K;
        T* orow = out.data() + bm * N;
        if (trans_b) {
            const T* bmat = bv + bb * N * K;
            for (int64_t nn = 0; nn < N; ++nn) {
                const T* brow = bmat + nn * K;
                T s = 0;
                for (int64_t k = 0; k < K; ++k) s += arow[k] * brow[k];
                orow[nn] = s;
            }
        } else {
            for (int64_t nn = 0; nn < N; ++nn) orow[nn] = 0;
            const T* bmat = bv + bb * K * N;
            for (int64_t k = 0; k < K; ++k) {
                const T ak = arow[k];
                const T* brow = bmat + k * N;
                for (int64_t nn = 0; nn < N; ++nn) orow[nn] += ak * brow[nn];
            }
        }
    }
    if (n.needs) {
        n.back = [self = n.id, ai = a.id(), bi = b.id(), B, M, K, N, trans_b](Tape<T>& t) {
            const T* g = t.node_grad(self).data();
            const T* av2 = t.node_values(ai).data();
            const T* bv2 = t.node_values(bi).data();
            if (T* ga = detail::maybe_grad(t, ai)) {
#pragma omp parallel for if (B * M * N * K > detail::kPar)
                for (int64_t bm = 0; bm < B * M; ++bm) {
                    const int64_t bb = bm / M, m = bm % M;
                    const T* grow = g + bm * N;
                    T* gar = ga + bm * K;
                    for (int64_t k = 0; k < K; ++k) {
                        T s = 0;
                        if (trans_b) {
                            const T* bmat = bv2 + bb * N * K;
                            for (int64_t nn = 0; nn < N; ++nn) s += grow[nn] * bmat[nn * K + k];
                        } else {
                            const T* brow = bv2 + (bb * K + k) * N;
                            for (int64_t nn = 0; nn < N; ++nn) s += grow[nn] * brow[nn];
                        }
                        gar[k] += s;
                    }
                    (void)m;
                }
            }
            if (T* gb = detail::maybe_grad(t, bi)) {
#pragma omp parallel for if (B * M * N * K > detail::kPar)
                for (int64_t bb = 0; bb < B; ++bb) {
                    const T* gmat = g + bb * M * N;
                    const T* amat = av2 + bb * M * K;
                    if (trans_b) {
                        T* gbm = gb + bb * N * K;
                        for (int64_t nn = 0; nn < N; ++nn)
                            for (int64_t k = 0; k < K; ++k) {
                                T s = 0;
                                for (int64_t m = 0; m < M; ++m) s += gmat[m * N + nn] * amat[m * K + k];
                                gbm[nn * K + k] += s;
                            }
                    } else {
                        T* gbm = gb + bb * K * N;
                        for (int64_t k = 0; k < K; ++k)
                            for (int64_t nn = 0; nn < N; ++nn) {
                                T s = 0;
                                for (int64_t m = 0; m < M; ++m) s += amat[m * K + k] * gmat[m * N + nn];
                                gbm[k * N + nn] += s;
                            }
                    }
                }
            }
        };
    }
    return tp.handle(n);
}

// ---------------------------------------------------------------------------
// conv2d, cross-correlation semantics. input [B,Cin,H,W], weight [Cout,Cin,kh,kw].

template <class T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b, int stride = 1, int padding = 0) {
    auto& tp = detail::same_tape(x, w, "conv2d");
    if (x.shape().size() != 4)
        throw ShapeError(sstr("conv2d: input must be [B,Cin,H,W], got ", shape_str(x.shape())));
    if (w.shape().size() != 4)
        throw ShapeError(sstr("conv2d: weight must be [Cout,Cin,kh,kw], got ", shape_str(w.shape())));
    const int64_t B = x.shape()[0], Cin = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    const int64_t Cout = w.shape()[0], kh = w.shape()[2], kw = w.shape()[3];
    if (w.shape()[1] != Cin)
        throw ShapeError(sstr("conv2d: channel axis mismatch, input Cin=", Cin, " weight Cin=", w.shape()[1]));
    if (kh % 2 == 0 || kw % 2 == 0)
        throw ShapeError(sstr("conv2d: kernel extents must be odd, got ", kh, "x", kw));
    if (b.shape() != Shape{Cout})
        throw ShapeError(sstr("conv2d: bias shape ", shape_str(b.shape()), " != [", Cout, "]"));
    if (padding < 0 || stride < 1) throw ShapeError("conv2d: padding must be >= 0 and stride >= 1");
    if (H + 2 * padding < kh || W + 2 * padding < kw)
        throw ShapeError(sstr("conv2d: spatial extent ", H, "x", W, " with kernel ", kh, "x", kw,
                              ", stride ", stride, ", padding ", padding, " yields an empty output"));
    // floor semantics: a trailing partial window is dropped
    const int64_t Ho = (H + 2 * padding - kh) / stride + 1;
    const int64_t Wo = (W + 2 * padding - kw) / stride + 1;

    auto& n = tp.make(Shape{B, Cout, Ho, Wo},
                      x.requires_grad() || w.requires_grad() || b.requires_grad());
    auto out = tp.mutable_values(n);
    const T* xv = x.values().data();
    const T* wv = w.values().data();
    const T* bv = b.values().data();
    const int s = stride, p = padding;
    // valid output range for a kernel offset: oy*s - p + k in [0, extent);
    // divisions must round toward -inf/+inf even for negative numerators
    auto orange = [s, p](int64_t k, int64_t extent, int64_t osize) {
        auto ceil_div = [](int64_t a, int64_t b) { return a >= 0 ? (a + b - 1) / b : -(-a / b); };
        auto floor_div = [](int64_t a, int64_t b) { return a >= 0 ? a / b : -((-a + b - 1) / b); };
        const int64_t lo = std::max<int64_t>(0, ceil_div(p - k, s));
        const int64_t hi = std::min<int64_t>(osize, floor_div(extent - 1 + p - k, s) + 1);
        return std::pair<int64_t, int64_t>(lo, std::max(lo, hi));
    };
#pragma omp parallel for if (B * Cout * Ho * Wo * Cin * kh * kw > detail::kPar)
    for (int64_t bc = 0; bc < B * Cout; ++bc) {
        const int64_t bb = bc / Cout, co = bc % Cout;
        T* omap = out.data() + bc * Ho * Wo;
        for (int64_t i = 0; i < Ho * Wo; ++i) omap[i] = bv[co];
        for (int64_t ci = 0; ci < Cin; ++ci) {
            const T* imap = xv + (bb * Cin + ci) * H * W;
            const T* wmap = wv + (co * Cin + ci) * kh * kw;
            for (int64_t ky = 0; ky < kh; ++ky) {
                const auto [oy0, oy1] = orange(ky, H, Ho);
                for (int64_t kx = 0; kx < kw; ++kx) {
                    const auto [ox0, ox1] = orange(kx, W, Wo);
                    const T wval = wmap[ky * kw + kx];
                    for (int64_t oy = oy0; oy < oy1; ++oy) {
                        const T* irow = imap + (oy * s - p + ky) * W - p + kx;
                        T* orow = omap + oy * Wo;
                        if (s == 1) {
                            for (int64_t ox = ox0; ox < ox1; ++ox) orow[ox] += wval * irow[ox];
                        } else {
                            for (int64_t ox = ox0; ox < ox1; ++ox) orow[ox] += wval * irow[ox * s];
                        }
                    }
                }
            }
        }
    }
    if (n.needs) {
        n.back = [self = n.id, xi = x.id(), wi = w.id(), bi = b.id(), B, Cin, H, W, Cout, kh, kw, s,
                  p, Ho, Wo, orange](Tape<T>& t) {
            const T* g = t.node_grad(self).data();
            const T* xv2 = t.node_values(xi).data();
            const T* wv2 = t.node_values(wi).data();
            if (T* gx = detail::maybe_grad(t, xi)) {
#pragma omp parallel for if (B * Cin * H * W * Cout > detail::kPar)
                for (int64_t bc = 0; bc < B * Cin; ++bc) {
                    const int64_t bb = bc / Cin, ci = bc % Cin;
                    T* gmap = gx + bc * H * W;
                    for (int64_t co = 0; co < Cout; ++co) {
                        const T* gomap = g + (bb * Cout + co) * Ho * Wo;
                        const T* wmap = wv2 + (co * Cin + ci) * kh * kw;
                        for (int64_t ky = 0; ky < kh; ++ky) {
                            const auto [oy0, oy1] = orange(ky, H, Ho);
                            for (int64_t kx = 0; kx < kw; ++kx) {
                                const auto [ox0, ox1] = orange(kx, W, Wo);
                                const T wval = wmap[ky * kw + kx];
                                for (int64_t oy = oy0; oy < oy1; ++oy) {
                                    T* grow = gmap + (oy * s - p + ky) * W - p + kx;
                                    const T* gorow = gomap + oy * Wo;
                                    if (s == 1) {
                                        for (int64_t ox = ox0; ox < ox1; ++ox)
                                            grow[ox] += wval * gorow[ox];
                                    } else {
                                        for (int64_t ox = ox0; ox < ox1; ++ox)
                                            grow[ox * s] += wval * gorow[ox];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            if (T* gw = detail::maybe_grad(t, wi)) {
#pragma omp parallel for if (Cout * Cin * kh * kw * B * Ho * Wo > detail::kPar)
                for (int64_t cc = 0; cc < Cout * Cin; ++cc) {
                    const int64_t co = cc / Cin, ci = cc % Cin;
                    T* gwmap = gw + cc * kh * kw;
                    for (int64_t ky = 0; ky < kh; ++ky) {
                        const auto [oy0, oy1] = orange(ky, H, Ho);
                        for (int64_t kx = 0; kx < kw; ++kx) {
                            const auto [ox0, ox1] = orange(kx, W, Wo);
                            T acc = 0;
                            for (int64_t bb = 0; bb < B; ++bb) {
                                const T* imap = xv2 + (bb * Cin + ci) * H * W;
                                const T* gmap = g + (bb * Cout + co) * Ho * Wo;
                                for (int64_t oy = oy0; oy < oy1; ++oy) {
                                    const T* irow = imap + (oy * s - p + ky) * W - p + kx;
                                    const T* grow = gmap + oy * Wo;
                                    if (s == 1) {
                                        for (int64_t ox = ox0; ox < ox1; ++ox)
                                            acc += grow[ox] * irow[ox];
                                    } else {
                                        for (int64_t ox = ox0; ox < ox1; ++ox)
                                            acc += grow[ox] * irow[ox * s];
                                    }
                                }
                            }
                            gwmap[ky * kw + kx] += acc;
                        }
                    }
                }
            }
            if (T* gb = detail::maybe_grad(t, bi)) {
                for (int64_t bb = 0; bb < B; ++bb)
                    for (int64_t co = 0; co < Cout; ++co) {
                        const T* gmap = g + (bb * Cout + co) * Ho * Wo;
                        T acc = 0;
                        for (int64_t i = 0; i < Ho * Wo; ++i) acc += gmap[i];
                        gb[co] += acc;
                    }
            }
        };
    }
    return tp.handle(n);
}

// ---------------------------------------------------------------------------
// conv_transpose2d, stride-s upsampling, no padding.
// input [B,Cin,H,W], weight [Cin,Cout,kh,kw] -> [B,Cout,(H-1)s+kh,(W-1)s+kw]

template <class T>
Var<T> conv_transpose2d(Var<T> x, Var<T> w, Var<T> b, int stride) {
    auto& tp = detail::same_tape(x, w, "conv_transpose2d");
    if (x.shape().size() != 4)
        throw ShapeError(sstr("conv_transpose2d: input must be [B,Cin,H,W], got ", shape_str(x.shape())));
    if (w.shape().size() != 4)
        throw ShapeError(sstr("conv_transpose2d: weight must be [Cin,Cout,kh,kw], got ", shape_str(w.shape())));
    const int64_t B = x.shape()[0], Cin = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    const int64_t Cout = w.shape()[1], kh = w.shape()[2], kw = w.shape()[3];
    if (w.shape()[0] != Cin)
        throw ShapeError(sstr("conv_transpose2d: channel axis mismatch, input Cin=", Cin, " weight Cin=",
                              w.shape()[0]));
    if (b.shape() != Shape{Cout})
        throw ShapeError(sstr("conv_transpose2d: bias shape ", shape_str(b.shape()), " != [", Cout, "]"));
    if (stride < 1) throw ShapeError("conv_transpose2d: stride must be >= 1");
    const int64_t Ho = (H - 1) * stride + kh, Wo = (W - 1) * stride + kw;
    const int s = stride;

    auto& n = tp.make(Shape{B, Cout, Ho, Wo},
                      x.requires_grad() || w.requires_grad() || b.requires_grad());
    auto out = tp.mutable_values(n);
    const T* xv = x.values().data();
    const T* wv = w.values().data();
    const T* bv = b.values().data();
#pragma omp parallel for if (B * Cout * Ho * Wo * Cin > detail::kPar)
    for (int64_t bc = 0; bc < B * Cout; ++bc) {
        const int64_t bb = bc / Cout, co = bc % Cout;
        T* omap = out.data() + bc * Ho * Wo;
        for (int64_t i = 0; i < Ho * Wo; ++i) omap[i] = bv[co];
        for (int64_t ci = 0; ci < Cin; ++ci) {
            const T* imap = xv + (bb * Cin + ci) * H * W;
            const T* wmap = wv + (ci * Cout + co) * kh * kw;
            for (int64_t ky = 0; ky < kh; ++ky)
                for (int64_t kx = 0; kx < kw; ++kx) {
                    const T wval = wmap[ky * kw + kx];
                    for (int64_t y = 0; y < H; ++y) {
                        const T* irow = imap + y * W;
                        T* orow = omap + (y * s + ky) * Wo + kx;
                        for (int64_t xx = 0; xx < W; ++xx) orow[xx * s] += wval * irow[xx];
                    }
                }
        }
    }
    if (n.needs) {
        n.back = [self = n.id, xi = x.id(), wi = w.id(), bi = b.id(), B, Cin, H, W, Cout, kh, kw, s,
                  Ho, Wo](Tape<T>& t) {
            const T* g = t.node_grad(self).data();
            const T* xv2 = t.node_values(xi).data();
            const T* wv2 = t.node_values(wi).data();
            if (T* gx = detail::maybe_grad(t, xi)) {
#pragma omp parallel for if (B * Cin * H * W * Cout * kh * kw > detail::kPar)
                for (int64_t bc = 0; bc < B * Cin; ++bc) {
                    const int64_t bb = bc / Cin, ci = bc % Cin;
                    T* gmap = gx + bc * H * W;
                    for (int64_t co = 0; co < Cout; ++co) {
                        const T* gomap = g + (bb * Cout + co) * Ho * Wo;
                        const T* wmap = wv2 + (ci * Cout + co) * kh * kw;
                        for (int64_t ky = 0; ky < kh; ++ky)
                            for (int64_t kx = 0; kx < kw; ++kx) {
                                const T wval = wmap[ky * kw + kx];
                                for (int64_t y = 0; y < H; ++y) {
                                    const T* gorow = gomap + (y * s + ky) * Wo + kx;
                                    T* grow = gmap + y * W;
                                    for (int64_t xx = 0; xx < W; ++xx)
                                        grow[xx] += wval * gorow[xx * s];
                                }
                            }
                    }
                }
            }
            if (T* gw = detail::maybe_grad(t, wi)) {
#pragma omp parallel for if (Cin * Cout * kh * kw * B * H * W > detail::kPar)
                for (int64_t cc = 0; cc < Cin * Cout; ++cc) {
                    const int64_t ci = cc / Cout, co = cc % Cout;
                    T* gwmap = gw + cc * kh * kw;
                    for (int64_t ky = 0; ky < kh; ++ky)
                        for (int64_t kx = 0; kx < kw; ++kx) {
                            T acc = 0;
                            for (int64_t bb = 0; bb < B; ++bb) {
                                const T* imap = xv2 + (bb * Cin + ci) * H * W;
                                const T* gmap = g + (bb * Cout + co) * Ho * Wo;
                                for (int64_t y = 0; y < H; ++y) {
                                    const T* irow = imap + y * W;
                                    const T* grow = gmap + (y * s + ky) * Wo + kx;
                                    for (int64_t xx = 0; xx < W; ++xx) acc += irow[xx] * grow[xx * s];
                                }
                            }
                            gwmap[ky * kw + kx] += acc;
                        }
                }
            }
            if (T* gb = detail::maybe_grad(t, bi)) {
                for (int64_t bb = 0; bb < B; ++bb)
                    for (int64_t co = 0; co < Cout; ++co) {
                        const T* gmap = g + (bb * Cout + co) * Ho * Wo;
                        T acc = 0;
                        for (int64_t i = 0; i < Ho * Wo; ++i) acc += gmap[i];
                        gb[co] += acc;
                    }
            }
        };
    }
    return tp.handle(n);
}

// ---------------------------------------------------------------------------
// layer_norm over the trailing axis, then affine

template <class T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps = T(1e-5)) {
    auto& tp = detail::same_tape(x, gamma, "layer_norm");
    if (x.shape().empty()) throw ShapeError("layer_norm: input must have rank >= 1");
    const int64_t D = x.shape().back();
    if (gamma.shape() != Shape{D} || beta.shape() != Shape{D})
        throw ShapeError(sstr("layer_norm: affine params must be [", D, "], got ",
                              shape_str(gamma.shape()), " and ", shape_str(beta.shape())));
    if (!(eps > T(0))) throw Error("layer_norm: eps must be > 0");
    const int64_t rows = x.size() / D;

    auto& n = tp.make(x.shape(), x.requires_grad() || gamma.requires_grad() || beta.requires_grad());
    auto out = tp.mutable_values(n);
    const T* xv = x.values().data();
    const T* gv = gamma.values().data();
    const T* bv = beta.values().data();
    // saved for backward
    auto xhat = std::make_shared<std::vector<T>>(size_t(rows * D));
    auto istd = std::make_shared<std::vector<T>>(size_t(rows));
#pragma omp parallel for if (rows * D > detail::kPar)
    for (int64_t r = 0; r < rows; ++r) {
        const T* xr = xv + r * D;
        T mean = 0;
        for (int64_t d = 0; d < D; ++d) mean += xr[d];
        mean /= T(D);
        T var = 0;
        for (int64_t d = 0; d < D; ++d) {
            T c = xr[d] - mean;
            var += c * c;
        }
        var /= T(D);
        const T is = T(1) / std::sqrt(var + eps);
        (*istd)[size_t(r)] = is;
        T* xh = xhat->data() + r * D;
        T* orow = out.data() + r * D;
        for (int64_t d = 0; d < D; ++d) {
            xh[d] = (xr[d] - mean) * is;
            orow[d] = gv[d] * xh[d] + bv[d];
        }
    }
    if (n.needs) {
        n.back = [self = n.id, xi = x.id(), gi = gamma.id(), bi = beta.id(), rows, D, xhat,
                  istd](Tape<T>& t) {
            const T* g = t.node_grad(self).data();
            const T* gv2 = t.node_values(gi).data();
            if (T* gx = detail::maybe_grad(t, xi)) {
#pragma omp parallel for if (rows * D > detail::kPar)
                for (int64_t r = 0; r < rows; ++r) {
                    const T* grow = g + r * D;
                    const T* xh = xhat->data() + r * D;
                    const T is = (*istd)[size_t(r)];
                    T m1 = 0, m2 = 0;  // mean(gamma*dy), mean(gamma*dy*xhat)
                    for (int64_t d = 0; d < D; ++d) {
                        const T gd = gv2[d] * grow[d];
                        m1 += gd;
                        m2 += gd * xh[d];
                    }
                    m1 /= T(D);
                    m2 /= T(D);
                    T* gxr = gx + r * D;
                    for (int64_t d = 0; d < D; ++d)
                        gxr[d] += is * (gv2[d] * grow[d] - m1 - xh[d] * m2);
                }
            }
            if (T* gg = detail::maybe_grad(t, gi)) {
                for (int64_t r = 0; r < rows; ++r)
                    for (int64_t d = 0; d < D; ++d) gg[d] += g[r * D + d] * (*xhat)[size_t(r * D + d)];
            }
            if (T* gb = detail::maybe_grad(t, bi)) {
                for (int64_t r = 0; r < rows; ++r)
                    for (int64_t d = 0; d < D; ++d) gb[d] += g[r * D + d];
            }
        };
    }
    return tp.handle(n);
}

// ---------------------------------------------------------------------------
// softmax over the trailing axis, max-subtracted

template <class T>
Var<T> softmax(Var<T> x) {
    if (x.shape().empty()) throw ShapeError("softmax: input must have rank >= 1");
    const int64_t D = x.shape().back();
    const int64_t rows = x.size() / D;
    auto& tp = x.tape();
    auto& n = tp.make(x.shape(), x.requires_grad());
    auto out = tp.mutable_values(n);
    const T* xv = x.values().data();
#pragma omp parallel for if (rows * D > detail::kPar)
    for (int64_t r = 0; r < rows; ++r) {
        const T* xr = xv + r * D;
        T* orow = out.data() + r * D;
        T mx = xr[0];
        for (int64_t d = 1; d < D; ++d) mx = std::max(mx, xr[d]);
        T s = 0;
        for (int64_t d = 0; d < D; ++d) {
            orow[d] = std::exp(xr[d] - mx);
            s += orow[d];
        }
        const T inv = T(1) / s;
        for (int64_t d = 0; d < D; ++d) orow[d] *= inv;
    }
    if (n.needs) {
        n.back = [self = n.id, xi = x.id(), rows, D](Tape<T>& t) {
            const T* g = t.node_grad(self).data();
            const T* sv = t.node_values(self).data();
            T* gx = t.grad_accum(xi);
#pragma omp parallel for if (rows * D > detail::kPar)
            for (int64_t r = 0; r < rows; ++r) {
                const T* grow = g + r * D;
                const T* srow = sv + r * D;
                T dot = 0;
                for (int64_t d = 0; d < D; ++d) dot += grow[d] * srow[d];
                T* gxr = gx + r * D;
                for (int64_t d = 0; d < D; ++d) gxr[d] += srow[d] * (grow[d] - dot);
            }
        };
    }
    return tp.handle(n);
}

}  // namespace ops
}  // namespace humus
