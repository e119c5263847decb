#pragma once

// Purpose learning: turn the support image's deepest feature map and the
// human / object boxes into a single purpose vector.

#include <string>

#include "osad/encoder.hpp"

namespace osad {

/// Pixel-space box, inclusive-exclusive: [x0, x1) x [y0, y1).
struct BBox {
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;

    int width() const noexcept { return x1 - x0; }
    int height() const noexcept { return y1 - y0; }
    bool valid_in(int w, int h) const noexcept { return 0 <= x0 && x0 < x1 && x1 <= w && 0 <= y0 && y0 < y1 && y1 <= h; }
    bool operator==(const BBox&) const = default;

    std::string str() const {
        return "[" + std::to_string(x0) + "," + std::to_string(y0) + "," + std::to_string(x1) + "," +
               std::to_string(y1) + "]";
    }
};

template <typename T>
struct SupportSample {
    Tensor<T> image;  // 3 x H x W, values in [0, 1]
    BBox human_box;
    BBox object_box;
};

/// Purpose vector F_sup, one entry per level-5 channel.
template <typename T>
struct PurposeEncoding {
    Var<T> f;
};

namespace plm {

/// Grid cells covered by a pixel box on a feature map of the given stride,
/// rounded outward and never smaller than one cell.
struct GridWindow {
    std::size_t y0, y1, x0, x1;
};

inline GridWindow project_box(const BBox& box, std::size_t grid_h, std::size_t grid_w, std::size_t image_h,
                              std::size_t image_w) {
    if (!box.valid_in(static_cast<int>(image_w), static_cast<int>(image_h)))
        throw std::invalid_argument("box " + box.str() + " outside " + std::to_string(image_w) + "x" +
                                    std::to_string(image_h) + " image");
    if (image_h % grid_h || image_w % grid_w)
        throw DimensionError("feature grid does not divide the image size");
    const std::size_t sy = image_h / grid_h, sx = image_w / grid_w;
    auto down = [](int v, std::size_t s) { return static_cast<std::size_t>(v) / s; };
    auto up = [](int v, std::size_t s) { return (static_cast<std::size_t>(v) + s - 1) / s; };
    GridWindow g{down(box.y0, sy), up(box.y1, sy), down(box.x0, sx), up(box.x1, sx)};
    g.y1 = std::min(std::max(g.y1, g.y0 + 1), grid_h);
    g.x1 = std::min(std::max(g.x1, g.x0 + 1), grid_w);
    return g;
}

template <typename T>
Var<T> extract_roi(const Var<T>& x_sup, const BBox& box, std::size_t image_h, std::size_t image_w) {
    require_rank(x_sup.shape(), 3, "extract_roi");
    const auto g = project_box(box, x_sup.shape()[1], x_sup.shape()[2], image_h, image_w);
    return crop(x_sup, g.y0, g.y1, g.x0, g.x1);
}

/// Spatial probability field alpha_j = softmax_j( sum_c f_c x_{c,j} ), returned as 1 x N.
template <typename T>
Var<T> spatial_attention(const Var<T>& f, const Var<T>& x) {
    require_rank(x.shape(), 3, "spatial_attention");
    const std::size_t C = x.shape()[0], N = x.shape()[1] * x.shape()[2];
    if (f.value().size() != C)
        throw DimensionError("spatial_attention: vector " + shape_str(f.shape()) + " vs map " + shape_str(x.shape()));
    auto scores = matmul(reshape(f, {1, C}), reshape(x, {C, N}));
    return softmax(scores, 1);
}

/// M = alpha (.) x, the feature map re-weighted by the purpose-driven spatial field.
template <typename T>
Var<T> guided_activation(const Var<T>& f, const Var<T>& x_sup) {
    return position_scale(x_sup, spatial_attention(f, x_sup));
}

/// Single-channel human-object interaction map, resized to the target grid.
template <typename T>
Var<T> interaction_map(const Var<T>& f_o, const Var<T>& x_h, const ConvLayer<T>& conv, std::size_t out_h,
                       std::size_t out_w) {
    if (conv.out_channels() != 1) throw DimensionError("interaction_map: conv must have one output channel");
    auto m = conv(channel_scale(x_h, f_o));
    if (m.shape()[1] == out_h && m.shape()[2] == out_w) return m;
    return resize_bilinear(m, out_h, out_w);
}

/// F_sup = GMP( m_ho * m_h + m_ho * m_o ) with m_ho scaling every channel per position.
template <typename T>
Var<T> purpose_encode(const Var<T>& m_ho, const Var<T>& m_h, const Var<T>& m_o) {
    require_same_shape(m_h.shape(), m_o.shape(), "purpose_encode");
    if (m_ho.shape().size() != 3 || m_ho.shape()[0] != 1 || m_ho.shape()[1] != m_h.shape()[1] ||
        m_ho.shape()[2] != m_h.shape()[2])
        throw DimensionError("purpose_encode: interaction map " + shape_str(m_ho.shape()) + " vs features " +
                             shape_str(m_h.shape()));
    return global_max_pool(position_scale(m_h, m_ho) + position_scale(m_o, m_ho));
}

template <typename T>
struct Params {
    ConvLayer<T> interaction;  // C -> 1, 3x3

    static Params init(std::size_t channels, Rng& rng) { return {ConvLayer<T>::init(channels, 1, 3, rng)}; }

    template <typename F>
    void visit(F&& f) {
        interaction.visit("plm.interaction", f);
    }

    template <typename U>
    Params<U> cast() const {
        return {interaction.template cast<U>()};
    }
};

/// Intermediates kept for inspection and tests.
template <typename T>
struct Trace {
    Var<T> x_h, x_o, f_h, f_o, m_h, m_o, m_ho;
};

template <typename T>
PurposeEncoding<T> forward(const Params<T>& params, const BBox& human, const BBox& object, const Var<T>& x_sup,
                           std::size_t image_h, std::size_t image_w, Trace<T>* trace = nullptr) {
    const std::size_t H = x_sup.shape()[1], W = x_sup.shape()[2];
    auto x_h = extract_roi(x_sup, human, image_h, image_w);
    auto x_o = extract_roi(x_sup, object, image_h, image_w);
    auto f_h = global_max_pool(x_h);
    auto f_o = global_max_pool(x_o);
    auto m_o = guided_activation(f_o, x_sup);
    auto m_h = guided_activation(f_h, x_sup);
    auto m_ho = interaction_map(f_o, x_h, params.interaction, H, W);
    if (trace) *trace = {x_h, x_o, f_h, f_o, m_h, m_o, m_ho};
    return {purpose_encode(m_ho, m_h, m_o)};
}

}  // namespace plm
}  // namespace osad
