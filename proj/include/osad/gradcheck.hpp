#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "osad/autograd.hpp"

namespace osad {

struct GradCheckResult {
    double max_rel_error = 0;  ///< max over inputs of |analytic - numeric|_inf / max(|analytic|_inf, |numeric|_inf)
    std::size_t worst_input = 0;
};

using GradCheckFn = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

/// Central finite-difference check of every input's gradient. A non-scalar
/// output is reduced with fixed pseudo-random weights so that every output
/// element contributes.
inline GradCheckResult gradcheck(const GradCheckFn& f, const std::vector<Tensor<double>>& inputs,
                                 double step = 1e-5, std::uint64_t projection_seed = 7) {
    Tensor<double> projection;
    auto scalar_loss = [&](Tape<double>& tape, const std::vector<Var<double>>& vars) {
        Var<double> out = f(tape, vars);
        if (out.value().size() == 1) return out;
        if (projection.shape() != out.shape()) {
            projection = Tensor<double>(out.shape());
            std::mt19937_64 rng(projection_seed);
            for (auto& v : projection.data())
                v = 0.5 + static_cast<double>(rng() >> 11) * 0x1.0p-53;
        }
        return sum(mul(out, tape.constant(projection)));
    };

    std::vector<Tensor<double>> analytic;
    {
        Tape<double> tape;
        std::vector<Var<double>> vars;
        for (const auto& t : inputs) vars.push_back(tape.leaf(t));
        auto loss = scalar_loss(tape, vars);
        tape.backward(loss);
        for (const auto& v : vars) analytic.push_back(v.grad());
    }

    auto eval = [&](const std::vector<Tensor<double>>& xs) {
        Tape<double> tape;
        std::vector<Var<double>> vars;
        for (const auto& t : xs) vars.push_back(tape.leaf(t));
        return scalar_loss(tape, vars).value().item();
    };

    GradCheckResult result;
    std::vector<Tensor<double>> work = inputs;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        double diff = 0, scale_a = 0, scale_n = 0;
        for (std::size_t i = 0; i < inputs[k].size(); ++i) {
            const double orig = work[k][i];
            work[k][i] = orig + step;
            const double up = eval(work);
            work[k][i] = orig - step;
            const double down = eval(work);
            work[k][i] = orig;
            const double numeric = (up - down) / (2 * step);
            diff = std::max(diff, std::abs(numeric - analytic[k][i]));
            scale_a = std::max(scale_a, std::abs(analytic[k][i]));
            scale_n = std::max(scale_n, std::abs(numeric));
        }
        const double rel = diff / std::max({scale_a, scale_n, 1e-12});
        if (rel > result.max_rel_error) {
            result.max_rel_error = rel;
            result.worst_input = k;
        }
    }
    return result;
}

}  // namespace osad
