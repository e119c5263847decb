#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "osad/kernels.hpp"
#include "osad/tensor.hpp"

namespace osad {

class AutogradError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

template <typename T>
class Tape;

/// Handle to a value recorded on a Tape.
template <typename T>
class Var {
public:
    Var() = default;
    Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape<T>& tape() const { return *tape_; }
    std::size_t id() const noexcept { return id_; }
    bool valid() const noexcept { return tape_ != nullptr; }

    const Tensor<T>& value() const { return tape_->value(id_); }
    const Shape& shape() const { return value().shape(); }
    const Tensor<T>& grad() const { return tape_->grad(id_); }
    bool requires_grad() const { return tape_->requires_grad(id_); }

private:
    Tape<T>* tape_ = nullptr;
    std::size_t id_ = 0;
};

/// Records one forward pass. Node ids are assigned in creation order, so the
/// record graph is acyclic and reverse id order is a valid topological order.
template <typename T>
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, std::size_t)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var<T> constant(Tensor<T> v) { return push(std::move(v), false, {}, nullptr); }
    Var<T> leaf(Tensor<T> v, bool requires_grad = true) { return push(std::move(v), requires_grad, {}, nullptr); }

    /// Binds a model parameter; repeated binds of the same unchanged storage return the same node.
    Var<T> parameter(const Tensor<T>& p) {
        auto it = params_.find(&p);
        if (it != params_.end() && value(it->second) == p) return Var<T>(this, it->second);
        auto v = push(p, true, {}, nullptr);
        params_[&p] = v.id();
        return v;
    }

    /// Gradient of a bound parameter (zeros if unreachable), or nullptr if it was never bound.
    const Tensor<T>* parameter_grad(const Tensor<T>& p) const {
        auto it = params_.find(&p);
        if (it == params_.end()) return nullptr;
        return &grad(it->second);
    }

    Var<T> record(Tensor<T> v, std::vector<std::size_t> inputs, BackwardFn fn) {
        bool rg = false;
        for (auto i : inputs) rg = rg || nodes_[i].requires_grad;
        return push(std::move(v), rg, std::move(inputs), rg ? std::move(fn) : nullptr);
    }

    const Tensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
    bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

    const Tensor<T>& grad(std::size_t id) const {
        auto& n = nodes_.at(id);
        if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
        return n.grad;
    }

    /// Mutable gradient buffer, allocated on first touch.
    Tensor<T>& grad_ref(std::size_t id) {
        auto& n = nodes_[id];
        if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
        return n.grad;
    }

    void accumulate(std::size_t id, const Tensor<T>& g) {
        if (!nodes_[id].requires_grad) return;
        auto& dst = grad_ref(id);
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
    }

    void backward(const Var<T>& root) {
        if (root.value().size() != 1)
            throw AutogradError("backward: root must be scalar, got " + shape_str(root.shape()));
        if (!nodes_[root.id()].requires_grad) throw AutogradError("backward: root is detached from any gradient source");
        if (backward_done_) throw AutogradError("backward: already run on this tape; call reset_grads() first");
        backward_done_ = true;
        grad_ref(root.id())[0] = T(1);
        for (std::size_t id = root.id() + 1; id-- > 0;) {
            auto& n = nodes_[id];
            if (!n.requires_grad || !n.backward || n.grad.empty()) continue;
            n.backward(*this, id);
        }
    }

    void reset_grads() {
        for (auto& n : nodes_) n.grad.storage().clear();
        backward_done_ = false;
    }

    std::size_t size() const noexcept { return nodes_.size(); }
    const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_.at(id).inputs; }

private:
    struct Node {
        Tensor<T> value;
        mutable Tensor<T> grad;
        bool requires_grad = false;
        std::vector<std::size_t> inputs;
        BackwardFn backward;
    };

    Var<T> push(Tensor<T> v, bool rg, std::vector<std::size_t> inputs, BackwardFn fn) {
        Node n;
        n.value = std::move(v);
        n.grad.storage().clear();
        n.requires_grad = rg;
        n.inputs = std::move(inputs);
        n.backward = std::move(fn);
        nodes_.push_back(std::move(n));
        return Var<T>(this, nodes_.size() - 1);
    }

    std::vector<Node> nodes_;
    std::unordered_map<const Tensor<T>*, std::size_t> params_;
    bool backward_done_ = false;
};

namespace detail {
template <typename T>
Tape<T>& same_tape(const Var<T>& a, const Var<T>& b) {
    if (&a.tape() != &b.tape()) throw AutogradError("operands recorded on different tapes");
    return a.tape();
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Differentiable operations

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
    auto& tape = detail::same_tape(a, b);
    const std::size_t ia = a.id(), ib = b.id();
    return tape.record(kernels::matmul(a.value(), b.value()), {ia, ib}, [ia, ib](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        if (t.requires_grad(ia)) t.accumulate(ia, kernels::matmul(g, kernels::transpose(t.value(ib))));
        if (t.requires_grad(ib)) t.accumulate(ib, kernels::matmul(kernels::transpose(t.value(ia)), g));
    });
}

template <typename T>
Var<T> transpose(const Var<T>& a) {
    const std::size_t ia = a.id();
    return a.tape().record(kernels::transpose(a.value()), {ia}, [ia](Tape<T>& t, std::size_t self) {
        t.accumulate(ia, kernels::transpose(t.grad(self)));
    });
}

template <typename T>
Var<T> reshape(const Var<T>& a, Shape s) {
    const std::size_t ia = a.id();
    return a.tape().record(a.value().reshaped(std::move(s)), {ia}, [ia](Tape<T>& t, std::size_t self) {
        auto& dst = t.grad_ref(ia);
        const auto& g = t.grad(self);
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
    });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    auto& tape = detail::same_tape(a, b);
    require_same_shape(a.shape(), b.shape(), "add");
    Tensor<T> out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
    const std::size_t ia = a.id(), ib = b.id();
    return tape.record(std::move(out), {ia, ib}, [ia, ib](Tape<T>& t, std::size_t self) {
        const Tensor<T> g = t.grad(self);
        t.accumulate(ia, g);
        t.accumulate(ib, g);
    });
}

template <typename T>
Var<T> operator+(const Var<T>& a, const Var<T>& b) {
    return add(a, b);
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    auto& tape = detail::same_tape(a, b);
    require_same_shape(a.shape(), b.shape(), "mul");
    Tensor<T> out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
    const std::size_t ia = a.id(), ib = b.id();
    return tape.record(std::move(out), {ia, ib}, [ia, ib](Tape<T>& t, std::size_t self) {
        const Tensor<T> g = t.grad(self);
        const Tensor<T> av = t.value(ia), bv = t.value(ib);
        if (t.requires_grad(ia)) {
            auto& d = t.grad_ref(ia);
            for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * bv[i];
        }
        if (t.requires_grad(ib)) {
            auto& d = t.grad_ref(ib);
            for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * av[i];
        }
    });
}

template <typename T>
Var<T> operator*(const Var<T>& a, const Var<T>& b) {
    return mul(a, b);
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
    Tensor<T> out = a.value();
    for (auto& v : out.data()) v *= s;
    const std::size_t ia = a.id();
    return a.tape().record(std::move(out), {ia}, [ia, s](Tape<T>& t, std::size_t self) {
        auto& d = t.grad_ref(ia);
        const auto& g = t.grad(self);
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += s * g[i];
    });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
    T s = 0;
    for (auto v : a.value().data()) s += v;
    const std::size_t ia = a.id();
    return a.tape().record(Tensor<T>::scalar(s), {ia}, [ia](Tape<T>& t, std::size_t self) {
        const T g = t.grad(self)[0];
        auto& d = t.grad_ref(ia);
        for (auto& v : d.data()) v += g;
    });
}

template <typename T>
Var<T> softmax(const Var<T>& x, std::size_t axis) {
    const std::size_t ix = x.id();
    return x.tape().record(kernels::softmax(x.value(), axis), {ix}, [ix, axis](Tape<T>& t, std::size_t self) {
        const auto& s = t.value(self);
        const auto& g = t.grad(self);
        auto& d = t.grad_ref(ix);
        const auto [outer, len, inner] = kernels::split_axis(s.shape(), axis);
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t in = 0; in < inner; ++in) {
                const std::size_t base = o * len * inner + in;
                T dot = 0;
                for (std::size_t l = 0; l < len; ++l) dot += g[base + l * inner] * s[base + l * inner];
                for (std::size_t l = 0; l < len; ++l) {
                    const std::size_t k = base + l * inner;
                    d[k] += s[k] * (g[k] - dot);
                }
            }
    });
}

/// Same-padded cross-correlation; pass an invalid Var for a bias-free convolution.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& bias = Var<T>{}) {
    auto& tape = detail::same_tape(x, w);
    const bool has_bias = bias.valid();
    Tensor<T> out = kernels::conv2d(x.value(), w.value(), has_bias ? &bias.value() : nullptr);
    const std::size_t ix = x.id(), iw = w.id(), ib = has_bias ? bias.id() : 0;
    std::vector<std::size_t> inputs{ix, iw};
    if (has_bias) inputs.push_back(ib);
    return tape.record(std::move(out), std::move(inputs), [ix, iw, ib, has_bias](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        Tensor<T>* gx = t.requires_grad(ix) ? &t.grad_ref(ix) : nullptr;
        Tensor<T>* gw = t.requires_grad(iw) ? &t.grad_ref(iw) : nullptr;
        kernels::conv2d_backward(t.value(ix), t.value(iw), g, gx, gw);
        if (has_bias && t.requires_grad(ib)) {
            auto& gb = t.grad_ref(ib);
            const std::size_t hw = g.dim(1) * g.dim(2);
            for (std::size_t c = 0; c < g.dim(0); ++c) {
                T acc = 0;
                for (std::size_t j = 0; j < hw; ++j) acc += g[c * hw + j];
                gb[c] += acc;
            }
        }
    });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
    Tensor<T> out = x.value();
    for (auto& v : out.data()) v = v < T(0) ? T(0) : v;  // NaN passes through
    const std::size_t ix = x.id();
    return x.tape().record(std::move(out), {ix}, [ix](Tape<T>& t, std::size_t self) {
        const auto& xv = t.value(ix);
        const auto& g = t.grad(self);
        auto& d = t.grad_ref(ix);
        for (std::size_t i = 0; i < g.size(); ++i)
            if (xv[i] > T(0)) d[i] += g[i];
    });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
    Tensor<T> out = x.value();
    for (auto& v : out.data()) v = v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
    const std::size_t ix = x.id();
    return x.tape().record(std::move(out), {ix}, [ix](Tape<T>& t, std::size_t self) {
        const auto& s = t.value(self);
        const auto& g = t.grad(self);
        auto& d = t.grad_ref(ix);
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * s[i] * (T(1) - s[i]);
    });
}

/// Keeps every second row and column, starting at (0, 0). Spatial extents must be even.
/// Applied after a same-padded convolution this is a stride-2 convolution.
template <typename T>
Var<T> subsample2(const Var<T>& x) {
    const auto& xv = x.value();
    require_rank(xv.shape(), 3, "subsample2");
    const std::size_t C = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
    if (H % 2 || W % 2) throw DimensionError("subsample2: odd spatial extent in " + shape_str(xv.shape()));
    Tensor<T> out({C, H / 2, W / 2});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < H / 2; ++y)
            for (std::size_t q = 0; q < W / 2; ++q) out.at(c, y, q) = xv.at(c, 2 * y, 2 * q);
    const std::size_t ix = x.id();
    return x.tape().record(std::move(out), {ix}, [ix](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        auto& d = t.grad_ref(ix);
        for (std::size_t c = 0; c < g.dim(0); ++c)
            for (std::size_t y = 0; y < g.dim(1); ++y)
                for (std::size_t q = 0; q < g.dim(2); ++q) d.at(c, 2 * y, 2 * q) += g.at(c, y, q);
    });
}

/// Per-channel spatial maximum; the gradient goes to the first maximiser in row-major order.
template <typename T>
Var<T> global_max_pool(const Var<T>& x) {
    std::vector<std::size_t> arg;
    Tensor<T> out = kernels::global_max_pool(x.value(), &arg);
    const std::size_t ix = x.id();
    const std::size_t n = x.value().dim(1) * x.value().dim(2);
    return x.tape().record(std::move(out), {ix}, [ix, arg = std::move(arg), n](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        auto& d = t.grad_ref(ix);
        for (std::size_t c = 0; c < arg.size(); ++c) d[c * n + arg[c]] += g[c];
    });
}

template <typename T>
Var<T> resize_bilinear(const Var<T>& x, std::size_t out_h, std::size_t out_w) {
    const std::size_t ix = x.id();
    return x.tape().record(kernels::resize_bilinear(x.value(), out_h, out_w), {ix},
                           [ix](Tape<T>& t, std::size_t self) {
                               kernels::resize_bilinear_backward(t.grad(self), t.grad_ref(ix));
                           });
}

/// Doubles both spatial extents with align-corners-false bilinear interpolation.
template <typename T>
Var<T> bilinear_upsample(const Var<T>& x) {
    require_rank(x.shape(), 3, "bilinear_upsample");
    return resize_bilinear(x, 2 * x.shape()[1], 2 * x.shape()[2]);
}

/// Spatial crop [y0,y1) x [x0,x1) of a C x H x W tensor.
template <typename T>
Var<T> crop(const Var<T>& x, std::size_t y0, std::size_t y1, std::size_t x0, std::size_t x1) {
    const auto& xv = x.value();
    require_rank(xv.shape(), 3, "crop");
    if (!(y0 < y1 && y1 <= xv.dim(1) && x0 < x1 && x1 <= xv.dim(2)))
        throw DimensionError("crop window out of range for " + shape_str(xv.shape()));
    const std::size_t C = xv.dim(0);
    Tensor<T> out({C, y1 - y0, x1 - x0});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = y0; y < y1; ++y)
            for (std::size_t q = x0; q < x1; ++q) out.at(c, y - y0, q - x0) = xv.at(c, y, q);
    const std::size_t ix = x.id();
    return x.tape().record(std::move(out), {ix}, [ix, y0, x0](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        auto& d = t.grad_ref(ix);
        for (std::size_t c = 0; c < g.dim(0); ++c)
            for (std::size_t y = 0; y < g.dim(1); ++y)
                for (std::size_t q = 0; q < g.dim(2); ++q) d.at(c, y + y0, q + x0) += g.at(c, y, q);
    });
}

/// out[c,j] = x[c,j] * f[c]  (channel-broadcast product).
template <typename T>
Var<T> channel_scale(const Var<T>& x, const Var<T>& f) {
    auto& tape = detail::same_tape(x, f);
    const auto& xv = x.value();
    require_rank(xv.shape(), 3, "channel_scale");
    const std::size_t C = xv.dim(0), N = xv.dim(1) * xv.dim(2);
    if (f.value().size() != C)
        throw DimensionError("channel_scale: vector " + shape_str(f.shape()) + " vs map " + shape_str(xv.shape()));
    Tensor<T> out = xv;
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t j = 0; j < N; ++j) out[c * N + j] *= f.value()[c];
    const std::size_t ix = x.id(), ifv = f.id();
    return tape.record(std::move(out), {ix, ifv}, [ix, ifv, C, N](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        const Tensor<T> xv = t.value(ix), fv = t.value(ifv);
        if (t.requires_grad(ix)) {
            auto& d = t.grad_ref(ix);
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t j = 0; j < N; ++j) d[c * N + j] += g[c * N + j] * fv[c];
        }
        if (t.requires_grad(ifv)) {
            auto& d = t.grad_ref(ifv);
            for (std::size_t c = 0; c < C; ++c) {
                T acc = 0;
                for (std::size_t j = 0; j < N; ++j) acc += g[c * N + j] * xv[c * N + j];
                d[c] += acc;
            }
        }
    });
}

/// out[c,j] = x[c,j] * w[j]; `w` holds one weight per spatial position (any shape with H*W elements).
template <typename T>
Var<T> position_scale(const Var<T>& x, const Var<T>& w) {
    auto& tape = detail::same_tape(x, w);
    const auto& xv = x.value();
    require_rank(xv.shape(), 3, "position_scale");
    const std::size_t C = xv.dim(0), N = xv.dim(1) * xv.dim(2);
    if (w.value().size() != N)
        throw DimensionError("position_scale: weights " + shape_str(w.shape()) + " vs map " + shape_str(xv.shape()));
    Tensor<T> out = xv;
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t j = 0; j < N; ++j) out[c * N + j] *= w.value()[j];
    const std::size_t ix = x.id(), iw = w.id();
    return tape.record(std::move(out), {ix, iw}, [ix, iw, C, N](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        const Tensor<T> xv = t.value(ix), wv = t.value(iw);
        if (t.requires_grad(ix)) {
            auto& d = t.grad_ref(ix);
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t j = 0; j < N; ++j) d[c * N + j] += g[c * N + j] * wv[j];
        }
        if (t.requires_grad(iw)) {
            auto& d = t.grad_ref(iw);
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t j = 0; j < N; ++j) d[j] += g[c * N + j] * xv[c * N + j];
        }
    });
}

/// Mean binary cross-entropy of probabilities `p` against a {0,1} target, p clamped to [eps, 1-eps].
template <typename T>
Var<T> binary_cross_entropy(const Var<T>& p, const Tensor<T>& target, T eps) {
    require_same_shape(p.shape(), target.shape(), "binary_cross_entropy");
    const auto& pv = p.value();
    const std::size_t n = pv.size();
    T acc = 0;
    for (std::size_t j = 0; j < n; ++j) {
        const T q = std::clamp(pv[j], eps, T(1) - eps);
        acc += target[j] > T(0.5) ? std::log(q) : std::log(T(1) - q);
    }
    const std::size_t ip = p.id();
    return p.tape().record(Tensor<T>::scalar(-acc / static_cast<T>(n)), {ip},
                           [ip, target, eps, n](Tape<T>& t, std::size_t self) {
                               const T g = t.grad(self)[0] / static_cast<T>(n);
                               const auto& pv = t.value(ip);
                               auto& d = t.grad_ref(ip);
                               for (std::size_t j = 0; j < n; ++j) {
                                   const T q = pv[j];
                                   if (q < eps || q > T(1) - eps) continue;
                                   d[j] += target[j] > T(0.5) ? -g / q : g / (T(1) - q);
                               }
                           });
}

}  // namespace osad
