#pragma once

#include <deque>
#include <functional>
#include <memory>

#include "humus/tensor.hpp"

namespace humus {

template <class T>
class Tape;

// Trainable parameter. Lives outside any tape; gradients accumulate into
// `grad` across backward passes until the optimizer clears them.
template <class T>
struct Param {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;

    Param() = default;
    explicit Param(Shape s)
        : shape(std::move(s)), value(size_t(numel(shape)), T(0)), grad(size_t(numel(shape)), T(0)) {}
    Param(Shape s, std::vector<T> v) : shape(std::move(s)), value(std::move(v)) {
        if (int64_t(value.size()) != numel(shape))
            throw ShapeError(sstr("param data length ", value.size(), " != numel of ", shape_str(shape)));
        grad.assign(value.size(), T(0));
    }

    int64_t size() const { return int64_t(value.size()); }
    void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }
    Tensor<T> tensor_like() const { return Tensor<T>(shape, value); }
};

// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
template <class T>
class Var {
  public:
    Var() = default;

    const Shape& shape() const { return tape_->node_shape(id_); }
    std::span<const T> values() const { return tape_->node_values(id_); }
    std::span<const T> grad() const { return tape_->node_grad(id_); }
    bool requires_grad() const { return tape_->node_requires(id_); }
    int64_t size() const { return int64_t(values().size()); }

    T scalar() const {
        if (size() != 1) throw ShapeError(sstr("scalar() on tensor of shape ", shape_str(shape())));
        return values()[0];
    }

    Tensor<T> tensor() const {
        auto v = values();
        return Tensor<T>(shape(), std::vector<T>(v.begin(), v.end()));
    }

    int id() const { return id_; }
    Tape<T>& tape() const { return *tape_; }
    bool valid() const { return tape_ != nullptr; }

  private:
    friend class Tape<T>;
    Var(Tape<T>* t, int id) : tape_(t), id_(id) {}
    Tape<T>* tape_ = nullptr;
    int id_ = -1;
};

// Reverse-mode tape. Nodes are appended in construction order, which is a
// valid topological order because graph building is single-threaded; backward
// walks the list in reverse. Values are computed eagerly at op creation and
// are immutable afterwards. One backward pass per tape.
template <class T>
class Tape {
  public:
    using BackFn = std::function<void(Tape&)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Leaf holding a copy of `t`.
    Var<T> leaf(const Tensor<T>& t, bool requires_grad = false) {
        Node& n = append(t.shape, requires_grad && grad_enabled_);
        n.store.reset(new T[n.n]);
        std::copy(t.data.begin(), t.data.end(), n.store.get());
        n.val = n.store.get();
        if (n.needs) materialize_grad(n);
        return Var<T>(this, n.id);
    }

    // Leaf viewing external parameter storage; gradients accumulate into
    // p.grad and persist across tapes.
    Var<T> param(Param<T>& p) {
        Node& n = append(p.shape, grad_enabled_);
        n.val = p.value.data();
        n.n = p.value.size();
        if (grad_enabled_) n.grd = p.grad.data();
        return Var<T>(this, n.id);
    }

    // inference-only tapes skip all gradient bookkeeping
    void set_grad_enabled(bool enabled) { grad_enabled_ = enabled; }
    bool grad_enabled() const { return grad_enabled_; }

    Var<T> constant(const Tensor<T>& t) {
        Node& n = append(t.shape, false);
        n.store.reset(new T[n.n]);
        std::copy(t.data.begin(), t.data.end(), n.store.get());
        n.val = n.store.get();
        return Var<T>(this, n.id);
    }

    // --- op-author interface -------------------------------------------------

    struct Node {
        Shape shape;
        std::unique_ptr<T[]> store;   // owned values (null for param leaves)
        const T* val = nullptr;
        size_t n = 0;
        std::unique_ptr<T[]> gstore;  // owned grad (null for param leaves)
        T* grd = nullptr;             // non-null once materialized
        bool needs = false;
        BackFn back;                  // empty for leaves/constants
        int id = -1;
    };

    // New op output node; the op must fill every element of values().
    Node& make(Shape shape, bool needs) {
        Node& n = append(std::move(shape), needs && grad_enabled_);
        n.store.reset(new T[n.n]);  // deliberately uninitialized
        n.val = n.store.get();
        return n;
    }

    std::span<T> mutable_values(Node& n) { return {n.store.get(), n.n}; }

    Var<T> handle(const Node& n) { return Var<T>(this, n.id); }

    const Shape& node_shape(int id) const { return nodes_[size_t(id)].shape; }
    std::span<const T> node_values(int id) const {
        const Node& n = nodes_[size_t(id)];
        return {n.val, n.n};
    }
    bool node_requires(int id) const { return nodes_[size_t(id)].needs; }

    std::span<const T> node_grad(int id) const {
        const Node& n = nodes_[size_t(id)];
        if (!n.grd) return {};
        return {n.grd, n.n};
    }

    // Materialized (zero-initialized) gradient buffer of a node; only valid
    // for nodes with needs==true.
    T* grad_accum(int id) {
        Node& n = nodes_[size_t(id)];
        if (!n.grd) materialize_grad(n);
        return n.grd;
    }

    size_t node_count() const { return nodes_.size(); }

    // --- backward -------------------------------------------------------------

    void backward(const Var<T>& loss) {
        if (backward_ran_) throw Error("backward() already ran on this tape");
        if (loss.size() != 1)
            throw Error(sstr("backward() requires a scalar loss, got shape ", shape_str(loss.shape())));
        if (!loss.requires_grad())
            throw Error("backward() loss does not depend on any differentiable input");
        backward_ran_ = true;
        *grad_accum(loss.id()) += T(1);
        for (size_t i = nodes_.size(); i-- > 0;) {
            Node& n = nodes_[i];
            if (n.back && n.grd) n.back(*this);
        }
    }

    bool backward_ran() const { return backward_ran_; }

  private:
    Node& append(Shape shape, bool needs) {
        nodes_.emplace_back();
        Node& n = nodes_.back();
        n.shape = std::move(shape);
        n.n = size_t(numel(n.shape));
        n.needs = needs;
        n.id = int(nodes_.size()) - 1;
        return n;
    }

    void materialize_grad(Node& n) {
        n.gstore.reset(new T[n.n]());  // zero-initialized: gradients accumulate
        n.grd = n.gstore.get();
    }

    std::deque<Node> nodes_;  // deque: stable references across growth
    bool backward_ran_ = false;
    bool grad_enabled_ = true;
};

}  // namespace humus
