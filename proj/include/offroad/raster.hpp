#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "offroad/error.hpp"

namespace offroad {

/// Reserved label for unlabeled pixels; excluded from loss and metrics.
inline constexpr std::uint8_t kIgnoreId = 255;

/// Row-major H x W x C raster of 8-bit samples.
template <int Channels>
struct Raster {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> data;

    static constexpr int channels = Channels;

    Raster() = default;
    Raster(int h, int w, std::uint8_t fill = 0)
        : height(h), width(w), data(static_cast<std::size_t>(h) * w * Channels, fill) {
        if (h < 0 || w < 0) throw ShapeError("raster dimensions must be non-negative");
    }

    std::size_t pixels() const { return static_cast<std::size_t>(height) * width; }
    bool empty() const { return pixels() == 0; }

    std::uint8_t& at(int y, int x, int c = 0) {
        return data[(static_cast<std::size_t>(y) * width + x) * Channels + c];
    }
    std::uint8_t at(int y, int x, int c = 0) const {
        return data[(static_cast<std::size_t>(y) * width + x) * Channels + c];
    }

    std::span<std::uint8_t> row(int y) {
        return {data.data() + static_cast<std::size_t>(y) * width * Channels,
                static_cast<std::size_t>(width) * Channels};
    }
    std::span<const std::uint8_t> row(int y) const {
        return {data.data() + static_cast<std::size_t>(y) * width * Channels,
                static_cast<std::size_t>(width) * Channels};
    }

    bool same_shape(int h, int w) const { return height == h && width == w; }

    friend bool operator==(const Raster&, const Raster&) = default;
};

/// RGB image, channel order R, G, B.
using Image = Raster<3>;
/// Per-pixel class ids (raw dataset ids or remapped challenge ids) plus kIgnoreId.
using LabelMap = Raster<1>;

/// Copy of the window [y0, y0+h) x [x0, x0+w); the window must lie inside `src`.
template <int C>
Raster<C> crop(const Raster<C>& src, int y0, int x0, int h, int w) {
    if (y0 < 0 || x0 < 0 || h < 0 || w < 0 || y0 + h > src.height || x0 + w > src.width)
        throw ShapeError("crop window outside raster");
    Raster<C> out(h, w);
    for (int y = 0; y < h; ++y) {
        auto s = src.row(y0 + y).subspan(static_cast<std::size_t>(x0) * C,
                                         static_cast<std::size_t>(w) * C);
        std::copy(s.begin(), s.end(), out.row(y).begin());
    }
    return out;
}

/// Extend to (h, w) by appending rows/columns at the bottom/right.
template <int C>
Raster<C> pad_bottom_right(const Raster<C>& src, int h, int w, std::uint8_t value) {
    if (h < src.height || w < src.width) throw ShapeError("pad target smaller than raster");
    Raster<C> out(h, w, value);
    for (int y = 0; y < src.height; ++y) {
        auto s = src.row(y);
        std::copy(s.begin(), s.end(), out.row(y).begin());
    }
    return out;
}

}  // namespace offroad
