#pragma once

// IoU, MAE, E-measure and Pearson CC of a continuous prediction map against a
// binary ground-truth map.

#include <algorithm>
#include <cmath>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "osad/tensor.hpp"

namespace osad::metrics {

inline constexpr double kThreshold = 0.5;

namespace detail {
template <typename A, typename B>
void require_same_size(const A& a, const B& b, const char* op) {
    if (a.size() != b.size())
        throw DimensionError(std::string(op) + ": prediction has " + std::to_string(a.size()) +
                             " pixels, ground truth has " + std::to_string(b.size()));
}
template <typename T>
bool fg(T v, double threshold) {
    return static_cast<double>(v) >= threshold;
}
}  // namespace detail

/// Intersection over union after binarising `pred` at `threshold`; 1 when both sets are empty.
template <typename T, typename U>
double iou(std::span<const T> pred, std::span<const U> gt, double threshold = kThreshold) {
    detail::require_same_size(pred, gt, "iou");
    std::size_t inter = 0, uni = 0;
    for (std::size_t j = 0; j < pred.size(); ++j) {
        const bool p = detail::fg(pred[j], threshold), g = detail::fg(gt[j], 0.5);
        inter += p && g;
        uni += p || g;
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

template <typename T, typename U>
double mae(std::span<const T> pred, std::span<const U> gt) {
    detail::require_same_size(pred, gt, "mae");
    double acc = 0;
    for (std::size_t j = 0; j < pred.size(); ++j)
        acc += std::abs(static_cast<double>(pred[j]) - static_cast<double>(gt[j]));
    return acc / static_cast<double>(pred.size());
}

/// Enhanced-alignment measure on the binarised prediction.
template <typename T, typename U>
double e_measure(std::span<const T> pred, std::span<const U> gt, double threshold = kThreshold) {
    detail::require_same_size(pred, gt, "e_measure");
    const std::size_t n = pred.size();
    if (n < 2) throw DimensionError("e_measure needs at least two pixels");
    std::vector<double> p(n), g(n);
    double mp = 0, mg = 0;
    for (std::size_t j = 0; j < n; ++j) {
        p[j] = detail::fg(pred[j], threshold) ? 1.0 : 0.0;
        g[j] = detail::fg(gt[j], 0.5) ? 1.0 : 0.0;
        mp += p[j];
        mg += g[j];
    }
    mp /= static_cast<double>(n);
    mg /= static_cast<double>(n);
    if (mg == 0.0) return 1.0 - mp;
    if (mg == 1.0) return mp;
    double acc = 0;
    for (std::size_t j = 0; j < n; ++j) {
        const double bp = p[j] - mp, bg = g[j] - mg;
        const double denom = bp * bp + bg * bg;
        const double align = denom == 0.0 ? 0.0 : 2.0 * bp * bg / denom;
        acc += (align + 1.0) * (align + 1.0) / 4.0;
    }
    return acc / static_cast<double>(n);
}

struct CorrelationResult {
    double value = 0;
    bool degenerate = false;  ///< one input had zero variance; value forced to 0
};

template <typename T, typename U>
CorrelationResult cc(std::span<const T> pred, std::span<const U> gt) {
    detail::require_same_size(pred, gt, "cc");
    const std::size_t n = pred.size();
    if (n < 2) throw DimensionError("cc needs at least two pixels");
    double mp = 0, mg = 0;
    for (std::size_t j = 0; j < n; ++j) {
        mp += static_cast<double>(pred[j]);
        mg += static_cast<double>(gt[j]);
    }
    mp /= static_cast<double>(n);
    mg /= static_cast<double>(n);
    double spg = 0, spp = 0, sgg = 0;
    for (std::size_t j = 0; j < n; ++j) {
        const double dp = static_cast<double>(pred[j]) - mp, dg = static_cast<double>(gt[j]) - mg;
        spg += dp * dg;
        spp += dp * dp;
        sgg += dg * dg;
    }
    if (spp == 0.0 || sgg == 0.0) return {0.0, true};
    return {std::clamp(spg / std::sqrt(spp * sgg), -1.0, 1.0), false};
}

/// Metrics of one query image.
struct ImageRecord {
    int fold = 0;
    long episode_id = 0;
    long image_id = 0;
    double iou = 0, mae = 0, e_phi = 0, cc = 0;
    std::vector<std::string> flags;
};

/// Arithmetic means over a set of image records.
struct MetricsReport {
    int fold_id = 0;
    std::size_t count = 0;
    double iou = 0, mae = 0, e_phi = 0, cc = 0;
    std::size_t degenerate_cc = 0;
};

template <typename T, typename U>
ImageRecord evaluate_image(std::span<const T> pred, std::span<const U> gt, int fold, long episode, long image) {
    ImageRecord r{fold, episode, image, iou(pred, gt), mae(pred, gt), e_measure(pred, gt), 0.0, {}};
    const auto c = cc(pred, gt);
    r.cc = c.value;
    if (c.degenerate) r.flags.push_back("cc_degenerate");
    return r;
}

template <typename T, typename U>
ImageRecord evaluate_image(const Tensor<T>& pred, const Tensor<U>& gt, int fold, long episode, long image) {
    return evaluate_image(pred.data(), gt.data(), fold, episode, image);
}

MetricsReport aggregate(const std::vector<ImageRecord>& records, int fold);

/// One JSON object per line: every image record, then one aggregate record.
void write_report(std::ostream& os, const std::vector<ImageRecord>& records, const MetricsReport& aggregate);
void write_report(const std::string& path, const std::vector<ImageRecord>& records, const MetricsReport& aggregate);

struct ParsedReport {
    std::vector<ImageRecord> records;
    MetricsReport aggregate;
};
ParsedReport read_report(std::istream& is);
ParsedReport read_report(const std::string& path);

}  // namespace osad::metrics
