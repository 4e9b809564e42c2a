#pragma once

// Test-only reference computations. Each one is written directly from the
// definition, by per-element loops, and shares no code path with the library
// routine it checks.

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <vector>

#include "offroad/raster.hpp"
#include "offroad/rng.hpp"

namespace oracle {

using offroad::LabelMap;

/// counts[gt][pred] by a naive double loop over rows and columns.
inline std::vector<std::vector<std::uint64_t>> confusion(const LabelMap& pred, const LabelMap& gt, int k,
                                                         int ignore = 255) {
    std::vector<std::vector<std::uint64_t>> m(static_cast<std::size_t>(k), std::vector<std::uint64_t>(static_cast<std::size_t>(k), 0));
    for (int y = 0; y < gt.height; ++y)
        for (int x = 0; x < gt.width; ++x) {
            const int g = gt.at(y, x);
            if (g == ignore) continue;
            m[static_cast<std::size_t>(g)][static_cast<std::size_t>(pred.at(y, x))] += 1;
        }
    return m;
}

/// IoU per class straight from intersection and union pixel sets.
inline std::vector<double> iou_by_sets(const std::vector<const LabelMap*>& preds, const std::vector<const LabelMap*>& gts,
                                       int k, int ignore = 255) {
    std::vector<double> out;
    for (int c = 0; c < k; ++c) {
        std::uint64_t inter = 0, uni = 0;
        for (std::size_t i = 0; i < preds.size(); ++i)
            for (int y = 0; y < gts[i]->height; ++y)
                for (int x = 0; x < gts[i]->width; ++x) {
                    const int g = gts[i]->at(y, x);
                    if (g == ignore) continue;
                    const bool in_g = g == c, in_p = preds[i]->at(y, x) == c;
                    inter += in_g && in_p;
                    uni += in_g || in_p;
                }
        out.push_back(uni ? static_cast<double>(inter) / static_cast<double>(uni) : std::nan(""));
    }
    return out;
}

/// Histogram of a label map, keyed by value.
inline std::map<int, std::uint64_t> histogram(const LabelMap& m) {
    std::map<int, std::uint64_t> h;
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x) h[m.at(y, x)] += 1;
    return h;
}

/// Pushforward of a histogram through a lookup function.
inline std::map<int, std::uint64_t> pushforward(const std::map<int, std::uint64_t>& h, const std::function<int(int)>& f) {
    std::map<int, std::uint64_t> out;
    for (auto [v, n] : h) out[f(v)] += n;
    return out;
}

/// Mean softmax cross-entropy over non-ignored pixels, one pixel at a time.
/// logits[n][k][y][x] flattened NCHW.
inline double cross_entropy(const std::vector<double>& logits, int n, int k, int h, int w,
                            const std::vector<const LabelMap*>& labels, int ignore = 255) {
    double sum = 0.0;
    int count = 0;
    for (int b = 0; b < n; ++b)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const int lab = labels[static_cast<std::size_t>(b)]->at(y, x);
                if (lab == ignore) continue;
                auto at = [&](int c) { return logits[((static_cast<std::size_t>(b) * k + c) * h + y) * w + x]; };
                double z = 0.0;
                for (int c = 0; c < k; ++c) z += std::exp(at(c));
                sum += -std::log(std::exp(at(lab)) / z);
                ++count;
            }
    return count ? sum / count : 0.0;
}

/// Central finite difference of `f` w.r.t. `x[i]`.
inline double central_difference(const std::function<double()>& f, double& xi, double h) {
    const double saved = xi;
    xi = saved + h;
    const double fp = f();
    xi = saved - h;
    const double fm = f();
    xi = saved;
    return (fp - fm) / (2.0 * h);
}

/// Random label map with values drawn from `values`.
inline LabelMap random_labels(int h, int w, const std::vector<int>& values, offroad::RngStream& rng) {
    LabelMap m(h, w);
    for (auto& v : m.data) v = static_cast<std::uint8_t>(values[rng.below(values.size())]);
    return m;
}

}  // namespace oracle
