#pragma once

#include <array>
#include <vector>

#include "osad/layers.hpp"

namespace osad {

inline constexpr std::size_t kPyramidLevels = 5;

/// Input normalisation applied to [0, 1] images before encoding: (x - mean) / std.
inline constexpr double kPixelMean = 0.5;
inline constexpr double kPixelStd = 0.25;

template <typename T>
Tensor<T> normalize_pixels(Tensor<T> image) {
    for (auto& v : image.data()) v = static_cast<T>((v - kPixelMean) / kPixelStd);
    return image;
}

/// Five feature maps X^1..X^5 at strides 2, 4, 8, 16, 32 of the input.
template <typename T>
struct FeaturePyramid {
    std::array<Var<T>, kPyramidLevels> levels;

    const Var<T>& level(std::size_t m) const { return levels.at(m - 1); }  // 1-based, as X^m
    Var<T>& level(std::size_t m) { return levels.at(m - 1); }
};

/// Shared-weight convolutional encoder: five stride-2 conv3x3 -> ReLU stages.
template <typename T>
class Encoder {
public:
    Encoder() = default;

    Encoder(const std::vector<std::size_t>& channels, Rng& rng) {
        if (channels.size() != kPyramidLevels)
            throw std::invalid_argument("encoder channel profile needs exactly 5 widths");
        std::size_t in = 3;
        for (std::size_t m = 0; m < kPyramidLevels; ++m) {
            stages_[m] = ConvLayer<T>::init(in, channels[m], 3, rng);
            in = channels[m];
        }
    }

    std::size_t channels(std::size_t m) const { return stages_.at(m - 1).out_channels(); }

    FeaturePyramid<T> encode(const Var<T>& image) const {
        const auto& s = image.shape();
        if (s.size() != 3 || s[0] != 3)
            throw DimensionError("encode: expected a 3 x H x W image, got " + shape_str(s));
        if (s[1] % 32 || s[2] % 32)
            throw DimensionError("encode: image size " + shape_str(s) + " is not a multiple of 32");
        FeaturePyramid<T> out;
        Var<T> x = image;
        for (std::size_t m = 0; m < kPyramidLevels; ++m) {
            x = subsample2(relu(stages_[m](x)));
            out.levels[m] = x;
        }
        return out;
    }

    template <typename F>
    void visit(F&& f) {
        for (std::size_t m = 0; m < kPyramidLevels; ++m) stages_[m].visit("encoder.stage" + std::to_string(m + 1), f);
    }

    template <typename U>
    Encoder<U> cast() const {
        Encoder<U> e;
        for (std::size_t m = 0; m < kPyramidLevels; ++m) e.stage(m) = stages_[m].template cast<U>();
        return e;
    }

    ConvLayer<T>& stage(std::size_t i) { return stages_.at(i); }
    const ConvLayer<T>& stage(std::size_t i) const { return stages_.at(i); }

private:
    std::array<ConvLayer<T>, kPyramidLevels> stages_;
};

}  // namespace osad
