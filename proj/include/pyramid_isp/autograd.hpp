#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "pyramid_isp/tensor.hpp"

namespace pyramid_isp {

/// A value in the reverse-mode tape. Nodes that do not require gradients
/// keep neither parents nor a backward closure, so inference builds no graph.
template <typename T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    Tensor<T>& grad_ref() {
        if (grad.empty()) grad = Tensor<T>(value.shape(), T(0));
        return grad;
    }
};

template <typename T>
class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

    static Var constant(Tensor<T> v) {
        auto n = std::make_shared<Node<T>>();
        n->value = std::move(v);
        return Var(std::move(n));
    }
    static Var leaf(Tensor<T> v, bool requires_grad) {
        auto n = std::make_shared<Node<T>>();
        n->value = std::move(v);
        n->requires_grad = requires_grad;
        return Var(std::move(n));
    }

    const Tensor<T>& value() const { return node_->value; }
    Tensor<T>& mutable_value() { return node_->value; }
    const Tensor<T>& grad() const { return node_->grad; }
    Tensor<T>& grad_ref() { return node_->grad_ref(); }
    void zero_grad() { node_->grad = Tensor<T>(); }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    void set_requires_grad(bool r) { node_->requires_grad = r; }
    const Shape& shape() const { return node_->value.shape(); }
    Node<T>* node() const { return node_.get(); }
    const std::shared_ptr<Node<T>>& shared() const { return node_; }
    explicit operator bool() const { return static_cast<bool>(node_); }

    /// Scalar value of a one-element variable.
    T item() const {
        if (node_->value.size() != 1) throw ContractError("item() on non-scalar " + shape_str(shape()));
        return node_->value[0];
    }

private:
    std::shared_ptr<Node<T>> node_;
};

namespace detail {

template <typename T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> inputs, std::function<void(Node<T>&)> fn) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    const bool any = std::any_of(inputs.begin(), inputs.end(), [](const Var<T>& v) { return v.requires_grad(); });
    if (any) {
        n->requires_grad = true;
        n->parents.reserve(inputs.size());
        for (auto& v : inputs) n->parents.push_back(v.shared());
        n->backward_fn = std::move(fn);
    }
    return Var<T>(std::move(n));
}

}  // namespace detail

/// Runs reverse accumulation from `root`, which must be a scalar. Gradients
/// of leaves accumulate (callers zero them between steps); intermediate
/// gradients are released as soon as they have been propagated.
template <typename T>
void backward(const Var<T>& root) {
    if (!root.requires_grad()) return;
    if (root.value().size() != 1) throw ContractError("backward() needs a scalar root");

    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.node(), 0}};
    seen.insert(root.node());
    while (!stack.empty()) {
        auto& [n, i] = stack.back();
        if (i < n->parents.size()) {
            Node<T>* p = n->parents[i++].get();
            if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    root.node()->grad_ref()[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* n = *it;
        if (!n->backward_fn || n->grad.empty()) continue;
        n->backward_fn(*n);
        n->grad = Tensor<T>();
    }
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    a.value().require_same_shape(b.value(), "add");
    Tensor<T> out = a.value();
    out += b.value();
    return detail::make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
        for (auto& p : self.parents)
            if (p->requires_grad) p->grad_ref() += self.grad;
    });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    a.value().require_same_shape(b.value(), "sub");
    Tensor<T> out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
    return detail::make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
        if (self.parents[0]->requires_grad) self.parents[0]->grad_ref() += self.grad;
        if (self.parents[1]->requires_grad) {
            auto& g = self.parents[1]->grad_ref();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
        }
    });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    a.value().require_same_shape(b.value(), "mul");
    Tensor<T> out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
    return detail::make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad) {
            auto& g = pa.grad_ref();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.value[i];
        }
        if (pb.requires_grad) {
            auto& g = pb.grad_ref();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.value[i];
        }
    });
}

template <typename T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
    a.value().require_same_shape(b.value(), "div");
    Tensor<T> out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] /= b.value()[i];
    return detail::make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad) {
            auto& g = pa.grad_ref();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / pb.value[i];
        }
        if (pb.requires_grad) {
            auto& g = pb.grad_ref();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i] * self.value[i] / pb.value[i];
        }
    });
}

/// a * s + c
template <typename T>
Var<T> affine(const Var<T>& a, T s, T c = T(0)) {
    Tensor<T> out = a.value();
    for (auto& v : out.vec()) v = v * s + c;
    return detail::make_result<T>(std::move(out), {a}, [s](Node<T>& self) {
        auto& g = self.parents[0]->grad_ref();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * s;
    });
}

template <typename T>
Var<T> square(const Var<T>& a) {
    return mul(a, a);
}

template <typename T>
Var<T> sum(const Var<T>& a) {
    T s = 0;
    for (T v : a.value().vec()) s += v;
    return detail::make_result<T>(Tensor<T>(Shape{1}, s), {a}, [](Node<T>& self) {
        auto& g = self.parents[0]->grad_ref();
        const T d = self.grad[0];
        for (auto& v : g.vec()) v += d;
    });
}

template <typename T>
Var<T> mean(const Var<T>& a) {
    const T n = static_cast<T>(a.value().size());
    return affine(sum(a), T(1) / n);
}

// ---------------------------------------------------------------------------
// Activations

template <typename T>
Var<T> leaky_relu(const Var<T>& a, T slope) {
    Tensor<T> out = a.value();
    for (auto& v : out.vec()) v = v > T(0) ? v : v * slope;
    return detail::make_result<T>(std::move(out), {a}, [slope](Node<T>& self) {
        auto& p = *self.parents[0];
        auto& g = p.grad_ref();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += p.value[i] > T(0) ? self.grad[i] : self.grad[i] * slope;
    });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
    return leaky_relu(a, T(0));
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
    Tensor<T> out = a.value();
    for (auto& v : out.vec()) v = T(1) / (T(1) + std::exp(-v));
    return detail::make_result<T>(std::move(out), {a}, [](Node<T>& self) {
        auto& g = self.parents[0]->grad_ref();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const T s = self.value[i];
            g[i] += self.grad[i] * s * (T(1) - s);
        }
    });
}

template <typename T>
Var<T> tanh(const Var<T>& a) {
    Tensor<T> out = a.value();
    for (auto& v : out.vec()) v = std::tanh(v);
    return detail::make_result<T>(std::move(out), {a}, [](Node<T>& self) {
        auto& g = self.parents[0]->grad_ref();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const T t = self.value[i];
            g[i] += self.grad[i] * (T(1) - t * t);
        }
    });
}

/// max(x, 0)^p elementwise, with zero derivative where x <= 0.
template <typename T>
Var<T> relu_pow(const Var<T>& a, T p) {
    Tensor<T> out = a.value();
    for (auto& v : out.vec()) v = v > T(0) ? std::pow(v, p) : T(0);
    return detail::make_result<T>(std::move(out), {a}, [p](Node<T>& self) {
        auto& par = *self.parents[0];
        auto& g = par.grad_ref();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const T x = par.value[i];
            if (x > T(0)) g[i] += self.grad[i] * p * std::pow(x, p - T(1));
        }
    });
}

// ---------------------------------------------------------------------------
// Channel-structured ops on (C, H, W) maps

template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& parts) {
    if (parts.empty()) throw ContractError("concat_channels of nothing");
    const int h = parts[0].value().height();
    const int w = parts[0].value().width();
    int c = 0;
    for (const auto& p : parts) {
        if (p.value().rank() != 3 || p.value().height() != h || p.value().width() != w)
            throw DimensionError("concat_channels: spatial mismatch " + shape_str(p.shape()) + " vs " +
                                 shape_str(parts[0].shape()));
        c += p.value().channels();
    }
    Tensor<T> out = Tensor<T>::chw(c, h, w);
    std::size_t off = 0;
    for (const auto& p : parts) {
        std::copy(p.value().vec().begin(), p.value().vec().end(), out.data() + off);
        off += p.value().size();
    }
    return detail::make_result<T>(std::move(out), parts, [](Node<T>& self) {
        std::size_t o = 0;
        for (auto& p : self.parents) {
            const std::size_t n = p->value.size();
            if (p->requires_grad) {
                auto& g = p->grad_ref();
                for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[o + i];
            }
            o += n;
        }
    });
}

/// Per-channel spatial mean: (C, H, W) -> (C, 1, 1).
template <typename T>
Var<T> channel_mean(const Var<T>& a) {
    const auto& x = a.value();
    const int c = x.channels();
    const std::size_t n = x.plane();
    Tensor<T> out = Tensor<T>::chw(c, 1, 1);
    for (int ch = 0; ch < c; ++ch) {
        const T* p = x.channel_ptr(ch);
        T s = 0;
        for (std::size_t i = 0; i < n; ++i) s += p[i];
        out[static_cast<std::size_t>(ch)] = s / static_cast<T>(n);
    }
    return detail::make_result<T>(std::move(out), {a}, [](Node<T>& self) {
        auto& g = self.parents[0]->grad_ref();
        const std::size_t n = g.plane();
        for (int ch = 0; ch < g.channels(); ++ch) {
            const T d = self.grad[static_cast<std::size_t>(ch)] / static_cast<T>(n);
            T* gp = g.channel_ptr(ch);
            for (std::size_t i = 0; i < n; ++i) gp[i] += d;
        }
    });
}

/// x * gate, where gate is (C, 1, 1).
template <typename T>
Var<T> channel_scale(const Var<T>& x, const Var<T>& gate) {
    const int c = x.value().channels();
    if (gate.value().size() != static_cast<std::size_t>(c))
        throw DimensionError("channel_scale: gate " + shape_str(gate.shape()) + " for " + shape_str(x.shape()));
    Tensor<T> out = x.value();
    const std::size_t n = out.plane();
    for (int ch = 0; ch < c; ++ch) {
        const T s = gate.value()[static_cast<std::size_t>(ch)];
        T* p = out.channel_ptr(ch);
        for (std::size_t i = 0; i < n; ++i) p[i] *= s;
    }
    return detail::make_result<T>(std::move(out), {x, gate}, [](Node<T>& self) {
        auto& px = *self.parents[0];
        auto& pg = *self.parents[1];
        const std::size_t n = px.value.plane();
        const int c = px.value.channels();
        if (px.requires_grad) {
            auto& g = px.grad_ref();
            for (int ch = 0; ch < c; ++ch) {
                const T s = pg.value[static_cast<std::size_t>(ch)];
                T* gp = g.channel_ptr(ch);
                const T* up = self.grad.channel_ptr(ch);
                for (std::size_t i = 0; i < n; ++i) gp[i] += up[i] * s;
            }
        }
        if (pg.requires_grad) {
            auto& g = pg.grad_ref();
            for (int ch = 0; ch < c; ++ch) {
                const T* xp = px.value.channel_ptr(ch);
                const T* up = self.grad.channel_ptr(ch);
                T acc = 0;
                for (std::size_t i = 0; i < n; ++i) acc += up[i] * xp[i];
                g[static_cast<std::size_t>(ch)] += acc;
            }
        }
    });
}

}  // namespace pyramid_isp
