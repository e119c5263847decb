#pragma once

// Collaboration enhancement: K bases shared by the whole query set, fitted by
// alternating soft assignment (E) and responsibility-weighted means (M), then
// used to reconstruct every query map.

#include <algorithm>
#include <numeric>
#include <vector>

#include "osad/layers.hpp"

namespace osad::cem {

/// Row-softmax of F_i mu^T for every image: Z_ijk = exp(f_ij . mu_k) / sum_l exp(f_ij . mu_l).
template <typename T>
std::vector<Tensor<T>> e_step(const std::vector<Tensor<T>>& features, const Tensor<T>& mu) {
    std::vector<Tensor<T>> z;
    z.reserve(features.size());
    const auto mu_t = kernels::transpose(mu);
    for (const auto& f : features) {
        if (f.rank() != 2 || f.dim(1) != mu.dim(1))
            throw DimensionError("e_step: features " + shape_str(f.shape()) + " vs bases " + shape_str(mu.shape()));
        z.push_back(kernels::softmax(kernels::matmul(f, mu_t), 1));
    }
    return z;
}

/// Responsibility-weighted mean of all rows of all images, before normalisation.
///
/// Rows are accumulated in lexicographic order of their feature values, so the
/// result is bitwise independent of image order and of position order within
/// an image.
template <typename T>
Tensor<T> m_step_unnormalized(const std::vector<Tensor<T>>& features, const std::vector<Tensor<T>>& z) {
    if (features.empty() || features.size() != z.size()) throw DimensionError("m_step: image count mismatch");
    const std::size_t K = z.front().dim(1), C = features.front().dim(1);
    struct RowRef {
        std::size_t image, row;
    };
    std::vector<RowRef> rows;
    for (std::size_t i = 0; i < features.size(); ++i) {
        if (features[i].dim(1) != C || z[i].dim(1) != K || z[i].dim(0) != features[i].dim(0))
            throw DimensionError("m_step: inconsistent shapes for image " + std::to_string(i));
        for (std::size_t j = 0; j < features[i].dim(0); ++j) rows.push_back({i, j});
    }
    std::stable_sort(rows.begin(), rows.end(), [&](const RowRef& a, const RowRef& b) {
        const T* ra = features[a.image].data().data() + a.row * C;
        const T* rb = features[b.image].data().data() + b.row * C;
        return std::lexicographical_compare(ra, ra + C, rb, rb + C);
    });

    Tensor<T> num({K, C});
    std::vector<T> den(K, T(0));
    for (const auto& r : rows) {
        const T* f = features[r.image].data().data() + r.row * C;
        const T* zr = z[r.image].data().data() + r.row * K;
        for (std::size_t k = 0; k < K; ++k) {
            den[k] += zr[k];
            T* dst = num.data().data() + k * C;
            for (std::size_t c = 0; c < C; ++c) dst[c] += zr[k] * f[c];
        }
    }
    for (std::size_t k = 0; k < K; ++k)
        for (std::size_t c = 0; c < C; ++c) num.at(k, c) /= den[k];
    return num;
}

/// M-step followed by row L2 normalisation.
template <typename T>
Tensor<T> m_step(const std::vector<Tensor<T>>& features, const std::vector<Tensor<T>>& z) {
    return kernels::l2_normalize_rows(m_step_unnormalized(features, z));
}

template <typename T>
struct Params {
    ConvLayer<T> project;  // C -> C', 1x1
    Tensor<T> bases;       // K x C' initial bases
    ConvLayer<T> output;   // C' -> C, 1x1

    static Params init(std::size_t channels, std::size_t basis_dim, std::size_t num_bases, Rng& rng) {
        Params p;
        p.project = ConvLayer<T>::init(channels, basis_dim, 1, rng);
        p.bases = Tensor<T>({num_bases, basis_dim});
        // Box-Muller normal init, then unit rows.
        for (auto& v : p.bases.data()) {
            const double u1 = 1.0 - rng.uniform(), u2 = rng.uniform();
            v = static_cast<T>(std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2));
        }
        p.bases = kernels::l2_normalize_rows(p.bases);
        p.output = ConvLayer<T>::init(basis_dim, channels, 1, rng);
        return p;
    }

    std::size_t num_bases() const { return bases.dim(0); }

    template <typename F>
    void visit(F&& f) {
        project.visit("cem.project", f);
        f("cem.bases", bases);
        output.visit("cem.output", f);
    }

    template <typename U>
    Params<U> cast() const {
        return {project.template cast<U>(), bases.template cast<U>(), output.template cast<U>()};
    }
};

/// 1x1 projection flattened to N x C' (row j = position j).
template <typename T>
Var<T> project(const ConvLayer<T>& conv, const Var<T>& x) {
    require_rank(x.shape(), 3, "cem::project");
    auto f = conv(x);
    const std::size_t C = f.shape()[0], N = f.shape()[1] * f.shape()[2];
    return transpose(reshape(f, {C, N}));
}

template <typename T>
struct Result {
    std::vector<Var<T>> outputs;      // X-hat per image, C x H x W
    std::vector<Var<T>> reconstructed;  // F-tilde per image, N x C'
    Tensor<T> bases;                  // final (normalised) bases
    std::vector<Tensor<T>> responsibilities;
};

/// Differentiable read-out with fixed bases: Z_i = softmax(F_i mu_prev^T),
/// F-tilde_i = Z_i mu, X-hat_i = X_i + output(F-tilde_i).
template <typename T>
void readout(const Params<T>& params, const std::vector<Var<T>>& inputs, const std::vector<Var<T>>& feats,
             const Tensor<T>& mu_prev, const Tensor<T>& mu, Result<T>& r) {
    auto& tape = inputs.front().tape();
    auto mu_prev_t = tape.constant(kernels::transpose(mu_prev));
    auto mu_const = tape.constant(mu);
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        auto zi = softmax(matmul(feats[i], mu_prev_t), 1);
        auto rec = matmul(zi, mu_const);
        const auto& s = inputs[i].shape();
        auto rec_map = reshape(transpose(rec), {rec.shape()[1], s[1], s[2]});
        r.reconstructed.push_back(rec);
        r.outputs.push_back(inputs[i] + params.output(rec_map));
    }
}

/// Runs `iterations` E/M alternations from the row-normalised initial bases.
/// The iterations are not differentiated; gradients reach the projection
/// through the final responsibilities and the output convolution through F-tilde.
template <typename T>
Result<T> forward(const Params<T>& params, const std::vector<Var<T>>& inputs, std::size_t iterations) {
    if (inputs.empty()) throw std::invalid_argument("cem::forward needs at least one query map");
    if (iterations == 0) throw std::invalid_argument("cem::forward needs at least one E-M iteration");

    std::vector<Var<T>> feats;
    std::vector<Tensor<T>> feat_values;
    for (const auto& x : inputs) {
        feats.push_back(project(params.project, x));
        feat_values.push_back(feats.back().value());
    }

    Tensor<T> mu = kernels::l2_normalize_rows(params.bases);
    Tensor<T> mu_prev = mu;
    std::vector<Tensor<T>> z;
    for (std::size_t it = 0; it < iterations; ++it) {
        z = e_step(feat_values, mu);
        mu_prev = mu;
        mu = m_step(feat_values, z);
    }

    Result<T> r;
    readout(params, inputs, feats, mu_prev, mu, r);
    r.bases = std::move(mu);
    r.responsibilities = std::move(z);
    return r;
}

}  // namespace osad::cem
