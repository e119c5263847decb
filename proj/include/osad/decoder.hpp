#pragma once

#include <array>

#include "osad/encoder.hpp"

namespace osad::decoder {

/// Per-image decoder outputs. probs[m-1] is D^m (1 x H x W at input resolution),
/// features[m-1] is P^m at the stride of pyramid level m.
template <typename T>
struct PredictionStack {
    std::array<Var<T>, kPyramidLevels> probs;
    std::array<Var<T>, kPyramidLevels> features;

    const Var<T>& final_prediction() const { return probs[0]; }
};

template <typename T>
struct Params {
    ConvLayer<T> top;                                   // level-5 channels -> width, 3x3
    std::array<ConvLayer<T>, kPyramidLevels - 1> lateral;  // level-m channels -> width, 1x1 (m = 1..4)
    std::array<ConvLayer<T>, kPyramidLevels - 1> smooth;   // width -> width, 3x3 (m = 1..4)
    std::array<ConvLayer<T>, kPyramidLevels> heads;        // width -> 1, 1x1 (m = 1..5)

    static Params init(const std::vector<std::size_t>& channels, std::size_t width, Rng& rng) {
        if (channels.size() != kPyramidLevels) throw std::invalid_argument("decoder needs 5 level widths");
        Params p;
        p.top = ConvLayer<T>::init(channels[4], width, 3, rng);
        for (std::size_t m = 0; m + 1 < kPyramidLevels; ++m) {
            p.lateral[m] = ConvLayer<T>::init(channels[m], width, 1, rng);
            p.smooth[m] = ConvLayer<T>::init(width, width, 3, rng);
        }
        for (auto& h : p.heads) h = ConvLayer<T>::init(width, 1, 1, rng);
        return p;
    }

    template <typename F>
    void visit(F&& f) {
        top.visit("decoder.top", f);
        for (std::size_t m = 0; m + 1 < kPyramidLevels; ++m) {
            lateral[m].visit("decoder.lateral" + std::to_string(m + 1), f);
            smooth[m].visit("decoder.smooth" + std::to_string(m + 1), f);
        }
        for (std::size_t m = 0; m < kPyramidLevels; ++m) heads[m].visit("decoder.head" + std::to_string(m + 1), f);
    }

    template <typename U>
    Params<U> cast() const {
        Params<U> p;
        p.top = top.template cast<U>();
        for (std::size_t m = 0; m + 1 < kPyramidLevels; ++m) {
            p.lateral[m] = lateral[m].template cast<U>();
            p.smooth[m] = smooth[m].template cast<U>();
        }
        for (std::size_t m = 0; m < kPyramidLevels; ++m) p.heads[m] = heads[m].template cast<U>();
        return p;
    }
};

/// Top-down decoding: P^5 = relu(top(X^5)); P^m = relu(smooth(up2(P^{m+1}) + lateral(X^m)));
/// D^m = resize(sigmoid(head(P^m))) to out_h x out_w.
template <typename T>
PredictionStack<T> decode(const Params<T>& p, const FeaturePyramid<T>& pyramid, std::size_t out_h,
                          std::size_t out_w) {
    for (std::size_t m = 1; m <= kPyramidLevels; ++m) {
        const auto expected = m == kPyramidLevels ? p.top.in_channels() : p.lateral[m - 1].in_channels();
        if (pyramid.level(m).shape()[0] != expected)
            throw DimensionError("decode: level " + std::to_string(m) + " has " +
                                 std::to_string(pyramid.level(m).shape()[0]) + " channels, decoder expects " +
                                 std::to_string(expected));
    }
    PredictionStack<T> out;
    out.features[4] = relu(p.top(pyramid.level(5)));
    for (std::size_t m = kPyramidLevels - 1; m >= 1; --m) {
        auto up = bilinear_upsample(out.features[m]);
        out.features[m - 1] = relu(p.smooth[m - 1](up + p.lateral[m - 1](pyramid.level(m))));
    }
    for (std::size_t m = 0; m < kPyramidLevels; ++m) {
        auto d = sigmoid(p.heads[m](out.features[m]));
        const auto& s = d.shape();
        out.probs[m] = (s[1] == out_h && s[2] == out_w) ? d : resize_bilinear(d, out_h, out_w);
    }
    return out;
}

/// Validates that a mask holds only 0 and 1.
template <typename T>
void require_binary_mask(const Tensor<T>& mask, std::size_t index) {
    for (auto v : mask.data())
        if (v != T(0) && v != T(1))
            throw std::invalid_argument("mask " + std::to_string(index) + " has non-binary value " +
                                        std::to_string(static_cast<double>(v)));
}

inline constexpr double kProbabilityEpsilon = 1e-7;

/// Deep supervision objective: sum over images and the five levels of the
/// per-map mean binary cross-entropy. Summation order is image-major, level-minor.
template <typename T>
Var<T> deep_supervision_loss(const std::vector<PredictionStack<T>>& preds, const std::vector<Tensor<T>>& masks) {
    if (preds.size() != masks.size() || preds.empty())
        throw std::invalid_argument("deep_supervision_loss: need one mask per prediction stack");
    Var<T> total;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        require_binary_mask(masks[i], i);
        for (std::size_t m = 0; m < kPyramidLevels; ++m) {
            auto l = binary_cross_entropy(preds[i].probs[m], masks[i], static_cast<T>(kProbabilityEpsilon));
            total = total.valid() ? total + l : l;
        }
    }
    return total;
}

}  // namespace osad::decoder
