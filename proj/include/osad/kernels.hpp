#pragma once

// Value-level numeric kernels. The differentiable wrappers in autograd.hpp
// call into these for both forward and backward passes.

#include <cmath>
#include <limits>

#include "osad/tensor.hpp"

namespace osad::kernels {

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    require_rank(a.shape(), 2, "matmul");
    require_rank(b.shape(), 2, "matmul");
    const std::size_t m = a.dim(0), k = a.dim(1), p = b.dim(1);
    if (b.dim(0) != k)
        throw DimensionError("matmul: inner extents disagree " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    Tensor<T> out({m, p});
    const T* A = a.data().data();
    const T* B = b.data().data();
    T* O = out.data().data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t q = 0; q < k; ++q) {
            const T av = A[i * k + q];
            const T* brow = B + q * p;
            T* orow = O + i * p;
            for (std::size_t j = 0; j < p; ++j) orow[j] += av * brow[j];
        }
    return out;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
    require_rank(a.shape(), 2, "transpose");
    const std::size_t r = a.dim(0), c = a.dim(1);
    Tensor<T> out({c, r});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out.at(j, i) = a.at(i, j);
    return out;
}

struct AxisSplit {
    std::size_t outer, len, inner;
};

inline AxisSplit split_axis(const Shape& s, std::size_t axis) {
    if (axis >= s.size())
        throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
    AxisSplit r{1, s[axis], 1};
    for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
    return r;
}

/// Numerically stable softmax; every slice along `axis` has its max subtracted first.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
    const auto [outer, len, inner] = split_axis(x.shape(), axis);
    Tensor<T> out(x.shape());
    const T* X = x.data().data();
    T* O = out.data().data();
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * len * inner + in;
            T mx = X[base];
            for (std::size_t l = 1; l < len; ++l) mx = std::max(mx, X[base + l * inner]);
            T sum = 0;
            for (std::size_t l = 0; l < len; ++l) {
                const T e = std::exp(X[base + l * inner] - mx);
                O[base + l * inner] = e;
                sum += e;
            }
            for (std::size_t l = 0; l < len; ++l) O[base + l * inner] /= sum;
        }
    return out;
}

inline std::size_t conv_pad(std::size_t k) {
    if (k != 1 && k != 3) throw DimensionError("conv2d: kernel size must be 1 or 3, got " + std::to_string(k));
    return k / 2;
}

inline void check_conv_shapes(const Shape& x, const Shape& w, const char* op) {
    require_rank(x, 3, op);
    require_rank(w, 4, op);
    if (w[1] != x[0])
        throw DimensionError(std::string(op) + ": kernel " + shape_str(w) + " expects " + std::to_string(w[1]) +
                             " input channels, input is " + shape_str(x));
    if (w[2] != w[3]) throw DimensionError(std::string(op) + ": kernel must be square, got " + shape_str(w));
}

// Iterates the valid (output, input) overlap for one kernel tap.
template <typename F>
inline void for_each_tap_row(std::size_t H, std::size_t W, long dy, long dx, F&& f) {
    const long h = static_cast<long>(H), w = static_cast<long>(W);
    const long y_lo = std::max(0L, -dy), y_hi = std::min(h, h - dy);
    const long x_lo = std::max(0L, -dx), x_hi = std::min(w, w - dx);
    if (x_lo >= x_hi) return;
    for (long y = y_lo; y < y_hi; ++y)
        f(static_cast<std::size_t>(y * w + x_lo), static_cast<std::size_t>((y + dy) * w + x_lo + dx),
          static_cast<std::size_t>(x_hi - x_lo));
}

/// Same-padded stride-1 cross-correlation. `bias` may be null.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias) {
    check_conv_shapes(x.shape(), w.shape(), "conv2d");
    const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2), CO = w.dim(0), K = w.dim(2);
    const long pad = static_cast<long>(conv_pad(K));
    if (bias && bias->size() != CO)
        throw DimensionError("conv2d: bias " + shape_str(bias->shape()) + " for " + std::to_string(CO) + " outputs");
    Tensor<T> out({CO, H, W});
    const std::size_t HW = H * W;
    const T* X = x.data().data();
    const T* Wt = w.data().data();
    T* O = out.data().data();
    for (std::size_t co = 0; co < CO; ++co) {
        T* oc = O + co * HW;
        if (bias) std::fill(oc, oc + HW, (*bias)[co]);
        for (std::size_t ci = 0; ci < C; ++ci) {
            const T* xc = X + ci * HW;
            for (std::size_t ky = 0; ky < K; ++ky)
                for (std::size_t kx = 0; kx < K; ++kx) {
                    const T wv = Wt[((co * C + ci) * K + ky) * K + kx];
                    if (wv == T(0)) continue;
                    for_each_tap_row(H, W, static_cast<long>(ky) - pad, static_cast<long>(kx) - pad,
                                     [&](std::size_t o, std::size_t i, std::size_t n) {
                                         T* dst = oc + o;
                                         const T* src = xc + i;
                                         for (std::size_t t = 0; t < n; ++t) dst[t] += wv * src[t];
                                     });
                }
        }
    }
    return out;
}

/// Accumulates conv2d input and kernel gradients; either output pointer may be null.
template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& gout, Tensor<T>* gx, Tensor<T>* gw) {
    const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2), CO = w.dim(0), K = w.dim(2);
    const long pad = static_cast<long>(conv_pad(K));
    const std::size_t HW = H * W;
    const T* X = x.data().data();
    const T* Wt = w.data().data();
    const T* G = gout.data().data();
    for (std::size_t co = 0; co < CO; ++co) {
        const T* gc = G + co * HW;
        for (std::size_t ci = 0; ci < C; ++ci) {
            const T* xc = X + ci * HW;
            for (std::size_t ky = 0; ky < K; ++ky)
                for (std::size_t kx = 0; kx < K; ++kx) {
                    const std::size_t widx = ((co * C + ci) * K + ky) * K + kx;
                    const T wv = Wt[widx];
                    T acc = 0;
                    T* gxc = gx ? gx->data().data() + ci * HW : nullptr;
                    for_each_tap_row(H, W, static_cast<long>(ky) - pad, static_cast<long>(kx) - pad,
                                     [&](std::size_t o, std::size_t i, std::size_t n) {
                                         const T* g = gc + o;
                                         if (gw) {
                                             const T* src = xc + i;
                                             for (std::size_t t = 0; t < n; ++t) acc += g[t] * src[t];
                                         }
                                         if (gxc) {
                                             T* dst = gxc + i;
                                             for (std::size_t t = 0; t < n; ++t) dst[t] += wv * g[t];
                                         }
                                     });
                    if (gw) (*gw)[widx] += acc;
                }
        }
    }
}

/// Per-axis source indices and weights for align-corners-false bilinear resampling.
struct LerpTable {
    std::vector<std::size_t> lo, hi;
    std::vector<double> frac;
};

inline LerpTable lerp_table(std::size_t in, std::size_t out) {
    LerpTable t;
    t.lo.resize(out);
    t.hi.resize(out);
    t.frac.resize(out);
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t d = 0; d < out; ++d) {
        double src = (static_cast<double>(d) + 0.5) * scale - 0.5;
        if (src < 0) src = 0;
        std::size_t i0 = static_cast<std::size_t>(src);
        if (i0 > in - 1) i0 = in - 1;
        t.lo[d] = i0;
        t.hi[d] = std::min(i0 + 1, in - 1);
        t.frac[d] = src - static_cast<double>(i0);
    }
    return t;
}

template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& x, std::size_t out_h, std::size_t out_w) {
    require_rank(x.shape(), 3, "resize_bilinear");
    const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    const auto ty = lerp_table(H, out_h);
    const auto tx = lerp_table(W, out_w);
    Tensor<T> out({C, out_h, out_w});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < out_h; ++y) {
            const T fy = static_cast<T>(ty.frac[y]);
            for (std::size_t xx = 0; xx < out_w; ++xx) {
                const T fx = static_cast<T>(tx.frac[xx]);
                const T a = x.at(c, ty.lo[y], tx.lo[xx]), b = x.at(c, ty.lo[y], tx.hi[xx]);
                const T d = x.at(c, ty.hi[y], tx.lo[xx]), e = x.at(c, ty.hi[y], tx.hi[xx]);
                out.at(c, y, xx) = (1 - fy) * ((1 - fx) * a + fx * b) + fy * ((1 - fx) * d + fx * e);
            }
        }
    return out;
}

template <typename T>
void resize_bilinear_backward(const Tensor<T>& gout, Tensor<T>& gx) {
    const std::size_t C = gx.dim(0), H = gx.dim(1), W = gx.dim(2);
    const std::size_t out_h = gout.dim(1), out_w = gout.dim(2);
    const auto ty = lerp_table(H, out_h);
    const auto tx = lerp_table(W, out_w);
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < out_h; ++y) {
            const T fy = static_cast<T>(ty.frac[y]);
            for (std::size_t xx = 0; xx < out_w; ++xx) {
                const T fx = static_cast<T>(tx.frac[xx]);
                const T g = gout.at(c, y, xx);
                gx.at(c, ty.lo[y], tx.lo[xx]) += g * (1 - fy) * (1 - fx);
                gx.at(c, ty.lo[y], tx.hi[xx]) += g * (1 - fy) * fx;
                gx.at(c, ty.hi[y], tx.lo[xx]) += g * fy * (1 - fx);
                gx.at(c, ty.hi[y], tx.hi[xx]) += g * fy * fx;
            }
        }
}

/// Per-channel spatial max; `argmax` receives the first row-major maximiser of each channel.
template <typename T>
Tensor<T> global_max_pool(const Tensor<T>& x, std::vector<std::size_t>* argmax = nullptr) {
    require_rank(x.shape(), 3, "global_max_pool");
    const std::size_t C = x.dim(0), N = x.dim(1) * x.dim(2);
    Tensor<T> out({C});
    if (argmax) argmax->assign(C, 0);
    for (std::size_t c = 0; c < C; ++c) {
        const T* xc = x.data().data() + c * N;
        std::size_t best = 0;
        for (std::size_t j = 1; j < N; ++j)
            if (xc[j] > xc[best]) best = j;
        out[c] = xc[best];
        if (argmax) (*argmax)[c] = best;
    }
    return out;
}

/// Row-wise L2 normalisation of a rank-2 tensor; zero rows stay zero.
template <typename T>
Tensor<T> l2_normalize_rows(const Tensor<T>& a) {
    require_rank(a.shape(), 2, "l2_normalize_rows");
    Tensor<T> out = a;
    const std::size_t r = a.dim(0), c = a.dim(1);
    for (std::size_t i = 0; i < r; ++i) {
        T ss = 0;
        for (std::size_t j = 0; j < c; ++j) ss += a.at(i, j) * a.at(i, j);
        const T n = std::sqrt(ss);
        if (n > T(0))
            for (std::size_t j = 0; j < c; ++j) out.at(i, j) = a.at(i, j) / n;
    }
    return out;
}

}  // namespace osad::kernels
