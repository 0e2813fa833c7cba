#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "panoseg/common.hpp"

namespace panoseg {

/// Thread-local switch for graph recording. Inference wraps itself in a
/// NoGradGuard so forward passes stay allocation-light.
inline bool& autograd_enabled() {
    thread_local bool enabled = true;
    return enabled;
}

struct NoGradGuard {
    NoGradGuard() : prev_(autograd_enabled()) { autograd_enabled() = false; }
    ~NoGradGuard() { autograd_enabled() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

template <typename T>
struct TensorNode {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // allocated lazily, same length as data
    bool requires_grad = false;

    // Reverse-mode graph. backward_fn reads this->grad and accumulates into
    // the parents' grad buffers. Empty on leaves and outside recorded regions.
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backward_fn;

    bool on_tape() const { return requires_grad || static_cast<bool>(backward_fn); }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    }
};

/// Shared handle to a dense n-d array. Values are written once by the op
/// that creates them; downstream ops only read.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    static Tensor zeros(Shape shape) {
        Tensor t;
        t.node_ = std::make_shared<TensorNode<T>>();
        t.node_->shape = std::move(shape);
        t.node_->data.assign(static_cast<size_t>(::panoseg::numel(t.node_->shape)), T(0));
        return t;
    }

    static Tensor full(Shape shape, T value) {
        Tensor t = zeros(std::move(shape));
        std::fill(t.node_->data.begin(), t.node_->data.end(), value);
        return t;
    }

    static Tensor from(Shape shape, std::vector<T> values) {
        require(static_cast<std::int64_t>(values.size()) == ::panoseg::numel(shape),
                "tensor data length " + std::to_string(values.size()) +
                    " does not match shape " + shape_str(shape));
        Tensor t;
        t.node_ = std::make_shared<TensorNode<T>>();
        t.node_->shape = std::move(shape);
        t.node_->data = std::move(values);
        return t;
    }

    static Tensor scalar(T value) { return from({1}, {value}); }

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
    std::int64_t numel() const { return static_cast<std::int64_t>(node_->data.size()); }

    const T* data() const { return node_->data.data(); }
    T* mutable_data() { return node_->data.data(); }
    const std::vector<T>& values() const { return node_->data; }

    /// Scalar read; requires numel() == 1.
    T item() const {
        require(node_->data.size() == 1, "item() on non-scalar tensor " + shape_str(shape()));
        return node_->data[0];
    }

    T at(int c, int y, int x) const {
        const Shape& s = node_->shape;
        return node_->data[(static_cast<size_t>(c) * s[1] + y) * s[2] + x];
    }

    void set_requires_grad(bool flag) { node_->requires_grad = flag; }
    bool requires_grad() const { return node_->requires_grad; }

    const std::vector<T>& grad() const { return node_->grad; }
    void zero_grad() {
        if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
    }

    std::shared_ptr<TensorNode<T>> node() const { return node_; }

    bool all_finite() const {
        for (T v : node_->data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

private:
    std::shared_ptr<TensorNode<T>> node_;
};

namespace detail {

template <typename T>
bool any_on_tape(std::initializer_list<const Tensor<T>*> inputs) {
    if (!autograd_enabled()) return false;
    for (const Tensor<T>* t : inputs)
        if (t->node()->on_tape()) return true;
    return false;
}

template <typename T, typename F>
void attach(Tensor<T>& out, std::vector<std::shared_ptr<TensorNode<T>>> parents, F&& backward) {
    out.node()->parents = std::move(parents);
    out.node()->backward_fn = std::forward<F>(backward);
}

}  // namespace detail

/// Reverse-mode sweep from a scalar loss. Accumulates d loss / d leaf into
/// every requires_grad leaf reachable from `loss`; repeated calls on fresh
/// graphs keep accumulating until zero_grad. The traversed graph is released.
template <typename T>
void backward(const Tensor<T>& loss) {
    require(loss.numel() == 1, "backward expects a scalar loss, got " + shape_str(loss.shape()));

    // Reverse DFS postorder = topological order (consumers before producers).
    std::vector<TensorNode<T>*> order;
    std::unordered_set<TensorNode<T>*> visited;
    std::vector<std::pair<TensorNode<T>*, size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    visited.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            TensorNode<T>* parent = node->parents[next++].get();
            if (parent->on_tape() && visited.insert(parent).second)
                stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    loss.node()->ensure_grad();
    loss.node()->grad[0] += T(1);

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode<T>* node = *it;
        if (node->backward_fn) {
            for (auto& p : node->parents)
                if (p->on_tape()) p->ensure_grad();
            node->backward_fn(*node);
        }
    }

    // Release closures and scratch grads so activation memory is freed as
    // soon as the output tensors go out of scope.
    for (TensorNode<T>* node : order) {
        node->backward_fn = nullptr;
        node->parents.clear();
        if (!node->requires_grad) {
            node->grad.clear();
            node->grad.shrink_to_fit();
        }
    }
}

// ---------------------------------------------------------------------------
// Elementwise and reduction ops
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " +
                                        shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape(a, b, "add");
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.mutable_data();
    const std::int64_t n = a.numel();
    for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
    if (detail::any_on_tape<T>({&a, &b})) {
        auto an = a.node(), bn = b.node();
        detail::attach(out, {an, bn}, [an, bn](TensorNode<T>& self) {
            const size_t n = self.grad.size();
            if (an->on_tape())
                for (size_t i = 0; i < n; ++i) an->grad[i] += self.grad[i];
            if (bn->on_tape())
                for (size_t i = 0; i < n; ++i) bn->grad[i] += self.grad[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape(a, b, "sub");
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.mutable_data();
    const std::int64_t n = a.numel();
    for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
    if (detail::any_on_tape<T>({&a, &b})) {
        auto an = a.node(), bn = b.node();
        detail::attach(out, {an, bn}, [an, bn](TensorNode<T>& self) {
            const size_t n = self.grad.size();
            if (an->on_tape())
                for (size_t i = 0; i < n; ++i) an->grad[i] += self.grad[i];
            if (bn->on_tape())
                for (size_t i = 0; i < n; ++i) bn->grad[i] -= self.grad[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape(a, b, "mul");
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.mutable_data();
    const std::int64_t n = a.numel();
    for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
    if (detail::any_on_tape<T>({&a, &b})) {
        auto an = a.node(), bn = b.node();
        detail::attach(out, {an, bn}, [an, bn](TensorNode<T>& self) {
            const size_t n = self.grad.size();
            if (an->on_tape())
                for (size_t i = 0; i < n; ++i) an->grad[i] += self.grad[i] * bn->data[i];
            if (bn->on_tape())
                for (size_t i = 0; i < n; ++i) bn->grad[i] += self.grad[i] * an->data[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape(a, b, "div");
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.mutable_data();
    const std::int64_t n = a.numel();
    for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] / pb[i];
    if (detail::any_on_tape<T>({&a, &b})) {
        auto an = a.node(), bn = b.node();
        detail::attach(out, {an, bn}, [an, bn](TensorNode<T>& self) {
            const size_t n = self.grad.size();
            for (size_t i = 0; i < n; ++i) {
                const T inv = T(1) / bn->data[i];
                if (an->on_tape()) an->grad[i] += self.grad[i] * inv;
                if (bn->on_tape()) bn->grad[i] -= self.grad[i] * an->data[i] * inv * inv;
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T c) {
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    const T* pa = a.data();
    T* po = out.mutable_data();
    const std::int64_t n = a.numel();
    for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] + c;
    if (detail::any_on_tape<T>({&a})) {
        auto an = a.node();
        detail::attach(out, {an}, [an](TensorNode<T>& self) {
            for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, T c) {
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    const T* pa = a.data();
    T* po = out.mutable_data();
    const std::int64_t n = a.numel();
    for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] * c;
    if (detail::any_on_tape<T>({&a})) {
        auto an = a.node();
        detail::attach(out, {an}, [an, c](TensorNode<T>& self) {
            for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] * c;
        });
    }
    return out;
}

/// c - a, elementwise.
template <typename T>
Tensor<T> rsub_scalar(T c, const Tensor<T>& a) {
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    const T* pa = a.data();
    T* po = out.mutable_data();
    const std::int64_t n = a.numel();
    for (std::int64_t i = 0; i < n; ++i) po[i] = c - pa[i];
    if (detail::any_on_tape<T>({&a})) {
        auto an = a.node();
        detail::attach(out, {an}, [an](TensorNode<T>& self) {
            for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] -= self.grad[i];
        });
    }
    return out;
}

/// a^p for a >= 0 (p any real). Caller guarantees the domain.
template <typename T>
Tensor<T> pow_scalar(const Tensor<T>& a, T p) {
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    const T* pa = a.data();
    T* po = out.mutable_data();
    const std::int64_t n = a.numel();
    for (std::int64_t i = 0; i < n; ++i) po[i] = std::pow(pa[i], p);
    if (detail::any_on_tape<T>({&a})) {
        auto an = a.node();
        detail::attach(out, {an}, [an, p](TensorNode<T>& self) {
            for (size_t i = 0; i < self.grad.size(); ++i)
                an->grad[i] += self.grad[i] * p * std::pow(an->data[i], p - T(1));
        });
    }
    return out;
}

template <typename T>
Tensor<T> log(const Tensor<T>& a) {
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    const T* pa = a.data();
    T* po = out.mutable_data();
    const std::int64_t n = a.numel();
    for (std::int64_t i = 0; i < n; ++i) po[i] = std::log(pa[i]);
    if (detail::any_on_tape<T>({&a})) {
        auto an = a.node();
        detail::attach(out, {an}, [an](TensorNode<T>& self) {
            for (size_t i = 0; i < self.grad.size(); ++i)
                an->grad[i] += self.grad[i] / an->data[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> clamp(const Tensor<T>& a, T lo, T hi) {
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    const T* pa = a.data();
    T* po = out.mutable_data();
    const std::int64_t n = a.numel();
    for (std::int64_t i = 0; i < n; ++i) po[i] = std::min(hi, std::max(lo, pa[i]));
    if (detail::any_on_tape<T>({&a})) {
        auto an = a.node();
        detail::attach(out, {an}, [an, lo, hi](TensorNode<T>& self) {
            for (size_t i = 0; i < self.grad.size(); ++i) {
                const T v = an->data[i];
                if (v > lo && v < hi) an->grad[i] += self.grad[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    const T* pa = a.data();
    T* po = out.mutable_data();
    const std::int64_t n = a.numel();
    for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] > T(0) ? pa[i] : T(0);
    if (detail::any_on_tape<T>({&a})) {
        auto an = a.node();
        detail::attach(out, {an}, [an](TensorNode<T>& self) {
            for (size_t i = 0; i < self.grad.size(); ++i)
                if (an->data[i] > T(0)) an->grad[i] += self.grad[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    const T* pa = a.data();
    T* po = out.mutable_data();
    const std::int64_t n = a.numel();
    for (std::int64_t i = 0; i < n; ++i) {
        const T x = pa[i];
        if (x >= T(0)) {
            po[i] = T(1) / (T(1) + std::exp(-x));
        } else {
            const T e = std::exp(x);
            po[i] = e / (T(1) + e);
        }
    }
    if (detail::any_on_tape<T>({&a})) {
        auto an = a.node();
        detail::attach(out, {an}, [an](TensorNode<T>& self) {
            for (size_t i = 0; i < self.grad.size(); ++i) {
                const T s = self.data[i];
                an->grad[i] += self.grad[i] * s * (T(1) - s);
            }
        });
    }
    return out;
}

/// Full reduction to a scalar tensor of shape [1].
template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
    T acc = T(0);
    const T* pa = a.data();
    const std::int64_t n = a.numel();
    for (std::int64_t i = 0; i < n; ++i) acc += pa[i];
    Tensor<T> out = Tensor<T>::scalar(acc);
    if (detail::any_on_tape<T>({&a})) {
        auto an = a.node();
        detail::attach(out, {an}, [an](TensorNode<T>& self) {
            const T g = self.grad[0];
            for (size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += g;
        });
    }
    return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
    return mul_scalar(sum(a), T(1) / static_cast<T>(a.numel()));
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
    require(::panoseg::numel(shape) == a.numel(),
            "reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
    Tensor<T> out = Tensor<T>::from(std::move(shape), a.values());
    if (detail::any_on_tape<T>({&a})) {
        auto an = a.node();
        detail::attach(out, {an}, [an](TensorNode<T>& self) {
            for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
        });
    }
    return out;
}

/// Concatenate along the channel axis of [C,H,W] tensors.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
    require(a.shape().size() == 3 && b.shape().size() == 3, "concat_channels expects [C,H,W]");
    require(a.dim(1) == b.dim(1) && a.dim(2) == b.dim(2),
            "concat_channels: spatial mismatch " + shape_str(a.shape()) + " vs " +
                shape_str(b.shape()));
    const int ca = a.dim(0), cb = b.dim(0), h = a.dim(1), w = a.dim(2);
    Tensor<T> out = Tensor<T>::zeros({ca + cb, h, w});
    T* po = out.mutable_data();
    std::memcpy(po, a.data(), sizeof(T) * static_cast<size_t>(a.numel()));
    std::memcpy(po + a.numel(), b.data(), sizeof(T) * static_cast<size_t>(b.numel()));
    if (detail::any_on_tape<T>({&a, &b})) {
        auto an = a.node(), bn = b.node();
        const size_t na = static_cast<size_t>(a.numel());
        detail::attach(out, {an, bn}, [an, bn, na](TensorNode<T>& self) {
            if (an->on_tape())
                for (size_t i = 0; i < na; ++i) an->grad[i] += self.grad[i];
            if (bn->on_tape())
                for (size_t i = na; i < self.grad.size(); ++i) bn->grad[i - na] += self.grad[i];
        });
    }
    return out;
}

/// Channels [c0, c1) of a [C,H,W] tensor, copied out.
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& a, int c0, int c1) {
    require(a.shape().size() == 3, "slice_channels expects [C,H,W]");
    require(0 <= c0 && c0 < c1 && c1 <= a.dim(0), "slice_channels: bad range");
    const int h = a.dim(1), w = a.dim(2);
    const size_t plane = static_cast<size_t>(h) * w;
    Tensor<T> out = Tensor<T>::zeros({c1 - c0, h, w});
    std::memcpy(out.mutable_data(), a.data() + c0 * plane,
                sizeof(T) * static_cast<size_t>(out.numel()));
    if (detail::any_on_tape<T>({&a})) {
        auto an = a.node();
        const size_t off = static_cast<size_t>(c0) * plane;
        detail::attach(out, {an}, [an, off](TensorNode<T>& self) {
            for (size_t i = 0; i < self.grad.size(); ++i) an->grad[off + i] += self.grad[i];
        });
    }
    return out;
}

/// Per-position channel vectors of a [C,H,W] map at (x, y) sites -> [n, C].
template <typename T>
Tensor<T> gather_vectors(const Tensor<T>& map, const std::vector<std::pair<int, int>>& xy) {
    require(map.shape().size() == 3, "gather_vectors expects [C,H,W]");
    const int c = map.dim(0), h = map.dim(1), w = map.dim(2);
    const int n = static_cast<int>(xy.size());
    Tensor<T> out = Tensor<T>::zeros({n, c});
    T* po = out.mutable_data();
    const T* pm = map.data();
    for (int i = 0; i < n; ++i) {
        const auto [x, y] = xy[static_cast<size_t>(i)];
        require(0 <= x && x < w && 0 <= y && y < h, "gather_vectors: position out of bounds");
        for (int ch = 0; ch < c; ++ch)
            po[i * c + ch] = pm[(static_cast<size_t>(ch) * h + y) * w + x];
    }
    if (detail::any_on_tape<T>({&map})) {
        auto mn = map.node();
        auto sites = xy;
        detail::attach(out, {mn}, [mn, sites, c, h, w](TensorNode<T>& self) {
            for (size_t i = 0; i < sites.size(); ++i) {
                const auto [x, y] = sites[i];
                for (int ch = 0; ch < c; ++ch)
                    mn->grad[(static_cast<size_t>(ch) * h + y) * w + x] +=
                        self.grad[i * static_cast<size_t>(c) + ch];
            }
        });
    }
    return out;
}

/// Row i of a [N,C] matrix as a [C] tensor.
template <typename T>
Tensor<T> select_row(const Tensor<T>& m, int row) {
    require(m.shape().size() == 2, "select_row expects [N,C]");
    require(0 <= row && row < m.dim(0), "select_row: row out of range");
    const int c = m.dim(1);
    std::vector<T> vals(m.data() + static_cast<size_t>(row) * c,
                        m.data() + static_cast<size_t>(row + 1) * c);
    Tensor<T> out = Tensor<T>::from({c}, std::move(vals));
    if (detail::any_on_tape<T>({&m})) {
        auto mn = m.node();
        const size_t off = static_cast<size_t>(row) * c;
        detail::attach(out, {mn}, [mn, off](TensorNode<T>& self) {
            for (size_t i = 0; i < self.grad.size(); ++i) mn->grad[off + i] += self.grad[i];
        });
    }
    return out;
}

/// Scalar element (i, j) of a [N,C] matrix.
template <typename T>
Tensor<T> select_item(const Tensor<T>& m, int i, int j) {
    require(m.shape().size() == 2, "select_item expects [N,C]");
    const size_t off = static_cast<size_t>(i) * m.dim(1) + static_cast<size_t>(j);
    Tensor<T> out = Tensor<T>::scalar(m.data()[off]);
    if (detail::any_on_tape<T>({&m})) {
        auto mn = m.node();
        detail::attach(out, {mn}, [mn, off](TensorNode<T>& self) {
            mn->grad[off] += self.grad[0];
        });
    }
    return out;
}

/// Plain matrix product [m,k] x [k,n] -> [m,n].
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    require(a.shape().size() == 2 && b.shape().size() == 2, "matmul expects rank-2 tensors");
    require(a.dim(1) == b.dim(0), "matmul: inner dims " + shape_str(a.shape()) + " vs " +
                                      shape_str(b.shape()));
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor<T> out = Tensor<T>::zeros({m, n});
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.mutable_data();
    for (int i = 0; i < m; ++i)
        for (int l = 0; l < k; ++l) {
            const T av = pa[i * k + l];
            const T* brow = pb + static_cast<size_t>(l) * n;
            T* orow = po + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    if (detail::any_on_tape<T>({&a, &b})) {
        auto an = a.node(), bn = b.node();
        detail::attach(out, {an, bn}, [an, bn, m, k, n](TensorNode<T>& self) {
            const T* g = self.grad.data();
            if (an->on_tape()) {
                // dA = G * B^T
                for (int i = 0; i < m; ++i)
                    for (int l = 0; l < k; ++l) {
                        T acc = T(0);
                        const T* grow = g + static_cast<size_t>(i) * n;
                        const T* brow = bn->data.data() + static_cast<size_t>(l) * n;
                        for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
                        an->grad[static_cast<size_t>(i) * k + l] += acc;
                    }
            }
            if (bn->on_tape()) {
                // dB = A^T * G
                for (int i = 0; i < m; ++i)
                    for (int l = 0; l < k; ++l) {
                        const T av = an->data[static_cast<size_t>(i) * k + l];
                        const T* grow = g + static_cast<size_t>(i) * n;
                        T* brow = bn->grad.data() + static_cast<size_t>(l) * n;
                        for (int j = 0; j < n; ++j) brow[j] += av * grow[j];
                    }
            }
        });
    }
    return out;
}

}  // namespace panoseg
