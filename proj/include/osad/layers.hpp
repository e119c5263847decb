#pragma once

#include <cmath>
#include <string>

#include "osad/autograd.hpp"
#include "osad/random.hpp"

namespace osad {

/// Trainable same-padded convolution (weights C_out x C_in x k x k, optional bias).
template <typename T>
struct ConvLayer {
    Tensor<T> weight;
    Tensor<T> bias;
    bool has_bias = true;

    /// Fan-in-scaled uniform weights in +-sqrt(6 / fan_in); zero bias.
    static ConvLayer init(std::size_t in, std::size_t out, std::size_t k, Rng& rng, bool with_bias = true) {
        kernels::conv_pad(k);
        ConvLayer l;
        l.weight = Tensor<T>({out, in, k, k});
        const double bound = std::sqrt(6.0 / static_cast<double>(in * k * k));
        for (auto& v : l.weight.data()) v = static_cast<T>(rng.uniform(-bound, bound));
        l.has_bias = with_bias;
        l.bias = Tensor<T>({out});
        return l;
    }

    std::size_t in_channels() const { return weight.dim(1); }
    std::size_t out_channels() const { return weight.dim(0); }

    Var<T> operator()(const Var<T>& x) const {
        auto& tape = x.tape();
        return conv2d(x, tape.parameter(weight), has_bias ? tape.parameter(bias) : Var<T>{});
    }

    template <typename F>
    void visit(const std::string& prefix, F&& f) {
        f(prefix + ".weight", weight);
        if (has_bias) f(prefix + ".bias", bias);
    }

    template <typename U>
    ConvLayer<U> cast() const {
        return ConvLayer<U>{weight.template cast<U>(), bias.template cast<U>(), has_bias};
    }
};

}  // namespace osad
