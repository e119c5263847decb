#pragma once

#include "osad/plm.hpp"

namespace osad::ptm {

/// X_T = x + alpha (.) x, alpha the softmax over positions of the purpose/feature dot product.
template <typename T>
Var<T> transfer(const Var<T>& x, const PurposeEncoding<T>& purpose) {
    return x + position_scale(x, plm::spatial_attention(purpose.f, x));
}

}  // namespace osad::ptm
