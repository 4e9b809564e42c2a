#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

namespace offroad {

/// Two-tap linear interpolation weights along one axis.
///
/// Half-pixel-center convention without corner alignment: output index `o`
/// samples input coordinate (o + 0.5) * in / out - 0.5, clamped at the
/// edges. Both the image resampler and the network's upsampling layer use
/// these taps, so they agree bit-for-bit on the geometry.
struct LinearTap {
    int i0;
    int i1;
    double w1;  // weight of i1; weight of i0 is 1 - w1
};

inline std::vector<LinearTap> linear_taps(int in, int out) {
    std::vector<LinearTap> taps(static_cast<std::size_t>(out));
    const double scale = static_cast<double>(in) / out;
    for (int o = 0; o < out; ++o) {
        double src = (o + 0.5) * scale - 0.5;
        if (src < 0) src = 0;
        int i0 = static_cast<int>(std::floor(src));
        if (i0 > in - 1) i0 = in - 1;
        const int i1 = std::min(i0 + 1, in - 1);
        taps[static_cast<std::size_t>(o)] = {i0, i1, src - i0};
    }
    return taps;
}

/// Nearest source index per output index, using the same half-pixel centers.
inline std::vector<int> nearest_taps(int in, int out) {
    std::vector<int> idx(static_cast<std::size_t>(out));
    const double scale = static_cast<double>(in) / out;
    for (int o = 0; o < out; ++o) {
        const int i = static_cast<int>(std::floor((o + 0.5) * scale));
        idx[static_cast<std::size_t>(o)] = std::clamp(i, 0, in - 1);
    }
    return idx;
}

}  // namespace offroad
