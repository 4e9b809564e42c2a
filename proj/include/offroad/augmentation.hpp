#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>

#include "offroad/error.hpp"
#include "offroad/interp.hpp"
#include "offroad/raster.hpp"
#include "offroad/rng.hpp"

namespace offroad {

enum class ColorKind { brightness = 0, contrast = 1, saturation = 2, hue = 3 };

inline constexpr std::array<ColorKind, 4> kColorOrder = {
    ColorKind::brightness, ColorKind::contrast, ColorKind::saturation, ColorKind::hue};

inline const char* to_string(ColorKind k) {
    switch (k) {
        case ColorKind::brightness: return "brightness";
        case ColorKind::contrast: return "contrast";
        case ColorKind::saturation: return "saturation";
        case ColorKind::hue: return "hue";
    }
    return "?";
}

inline ColorKind color_kind_from_string(const std::string& s) {
    for (ColorKind k : kColorOrder)
        if (s == to_string(k)) return k;
    throw ConfigError("unknown color transform '" + s + "'");
}

struct Range {
    double lo;
    double hi;
    friend bool operator==(const Range&, const Range&) = default;
};

struct PhotometricConfig {
    double p_apply = 0.5;
    double brightness_delta = 40.0;  // 8-bit units
    Range contrast_range{0.7, 1.3};
    Range saturation_range{0.7, 1.3};
    double hue_delta = 18.0;  // degrees

    void validate() const {
        if (!(p_apply >= 0.0 && p_apply <= 1.0))
            throw ConfigError("augment.photometric.p_apply must satisfy 0 <= p <= 1");
        if (!(brightness_delta >= 0.0) || !std::isfinite(brightness_delta))
            throw ConfigError("augment.photometric.brightness_delta must be >= 0");
        if (!(contrast_range.lo > 0.0 && contrast_range.lo <= contrast_range.hi) ||
            !std::isfinite(contrast_range.hi))
            throw ConfigError("augment.photometric.contrast_range must satisfy 0 < lo <= hi");
        if (!(saturation_range.lo > 0.0 && saturation_range.lo <= saturation_range.hi) ||
            !std::isfinite(saturation_range.hi))
            throw ConfigError("augment.photometric.saturation_range must satisfy 0 < lo <= hi");
        if (!(hue_delta >= 0.0 && hue_delta <= 180.0))
            throw ConfigError("augment.photometric.hue_delta must satisfy 0 <= delta <= 180");
    }

    friend bool operator==(const PhotometricConfig&, const PhotometricConfig&) = default;
};

struct GeometricConfig {
    Range scale_range{0.5, 2.0};
    int crop_height = 512;
    int crop_width = 512;
    std::uint8_t image_pad_value = 0;
    std::uint8_t label_pad_value = kIgnoreId;

    void validate() const {
        if (!(scale_range.lo > 0.0 && scale_range.lo <= scale_range.hi) || !std::isfinite(scale_range.hi))
            throw ConfigError("augment.geometric.scale_range must satisfy 0 < lo <= hi");
        if (crop_height <= 0 || crop_width <= 0)
            throw ConfigError("augment.geometric.crop_size must be positive");
        if (label_pad_value != kIgnoreId)
            throw ConfigError("augment.geometric.label_pad_value must equal the ignore id (255)");
    }

    friend bool operator==(const GeometricConfig&, const GeometricConfig&) = default;
};

namespace detail {

inline std::uint8_t to_u8(double v) {
    if (!(v > 0.0)) return 0;
    if (v >= 255.0) return 255;
    return static_cast<std::uint8_t>(std::floor(v + 0.5));
}

struct Hsv {
    double h;  // degrees in [0, 360)
    double s;  // [0, 1]
    double v;  // [0, 1]
};

inline Hsv rgb_to_hsv(double r, double g, double b) {
    const double mx = std::max({r, g, b});
    const double mn = std::min({r, g, b});
    const double d = mx - mn;
    Hsv out{0.0, mx > 0.0 ? d / mx : 0.0, mx};
    if (d > 0.0) {
        double h;
        if (mx == r)
            h = (g - b) / d;
        else if (mx == g)
            h = (b - r) / d + 2.0;
        else
            h = (r - g) / d + 4.0;
        h *= 60.0;
        if (h < 0.0) h += 360.0;
        out.h = h;
    }
    return out;
}

inline std::array<double, 3> hsv_to_rgb(Hsv c) {
    const double h = c.h / 60.0;
    const int sector = static_cast<int>(std::floor(h)) % 6;
    const double f = h - std::floor(h);
    const double p = c.v * (1.0 - c.s);
    const double q = c.v * (1.0 - c.s * f);
    const double t = c.v * (1.0 - c.s * (1.0 - f));
    switch (sector) {
        case 0: return {c.v, t, p};
        case 1: return {q, c.v, p};
        case 2: return {p, c.v, t};
        case 3: return {p, q, c.v};
        case 4: return {t, p, c.v};
        default: return {c.v, p, q};
    }
}

template <class F>
Image map_hsv(const Image& img, F&& f) {
    Image out(img.height, img.width);
    for (std::size_t i = 0; i < img.pixels(); ++i) {
        const std::uint8_t* px = &img.data[i * 3];
        Hsv hsv = rgb_to_hsv(px[0] / 255.0, px[1] / 255.0, px[2] / 255.0);
        f(hsv);
        auto rgb = hsv_to_rgb(hsv);
        for (int c = 0; c < 3; ++c) out.data[i * 3 + c] = to_u8(rgb[c] * 255.0);
    }
    return out;
}

}  // namespace detail

/// Apply one deterministic color adjustment.
///
/// brightness: v + amount; contrast: v * amount (no mean centering);
/// saturation: S * amount in HSV space; hue: H + amount degrees, modulo 360.
/// Every step clamps to [0, 255] and rounds to the nearest integer.
inline Image color_transform(const Image& img, ColorKind kind, double amount) {
    if (!std::isfinite(amount))
        throw ConfigError(std::string("non-finite amount for ") + to_string(kind));
    switch (kind) {
        case ColorKind::brightness: {
            Image out(img.height, img.width);
            for (std::size_t i = 0; i < img.data.size(); ++i)
                out.data[i] = detail::to_u8(img.data[i] + amount);
            return out;
        }
        case ColorKind::contrast: {
            Image out(img.height, img.width);
            for (std::size_t i = 0; i < img.data.size(); ++i)
                out.data[i] = detail::to_u8(img.data[i] * amount);
            return out;
        }
        case ColorKind::saturation:
            return detail::map_hsv(img, [amount](detail::Hsv& c) {
                c.s = std::clamp(c.s * amount, 0.0, 1.0);
            });
        case ColorKind::hue:
            return detail::map_hsv(img, [amount](detail::Hsv& c) {
                double h = std::fmod(c.h + amount, 360.0);
                if (h < 0.0) h += 360.0;
                if (h >= 360.0) h -= 360.0;
                c.h = h;
            });
    }
    throw ConfigError("unknown color transform kind");
}

/// Which transforms fired in one photometric_distortion call, and with what amount.
struct PhotometricTrace {
    std::array<std::optional<double>, 4> amounts;  // indexed by ColorKind

    bool applied(ColorKind k) const { return amounts[static_cast<std::size_t>(k)].has_value(); }
};

/// Random photometric distortion: each of brightness, contrast, saturation and
/// hue (in that order) fires independently with probability p_apply, with a
/// uniformly drawn amount.
inline Image photometric_distortion(const Image& img, const PhotometricConfig& cfg, RngStream& rng,
                                    PhotometricTrace* trace = nullptr) {
    cfg.validate();
    Image out = img;
    for (ColorKind kind : kColorOrder) {
        if (!rng.bernoulli(cfg.p_apply)) continue;
        double amount = 0.0;
        switch (kind) {
            case ColorKind::brightness:
                amount = rng.uniform(-cfg.brightness_delta, cfg.brightness_delta);
                break;
            case ColorKind::contrast:
                amount = rng.uniform(cfg.contrast_range.lo, cfg.contrast_range.hi);
                break;
            case ColorKind::saturation:
                amount = rng.uniform(cfg.saturation_range.lo, cfg.saturation_range.hi);
                break;
            case ColorKind::hue:
                amount = rng.uniform(-cfg.hue_delta, cfg.hue_delta);
                break;
        }
        out = color_transform(out, kind, amount);
        if (trace) trace->amounts[static_cast<std::size_t>(kind)] = amount;
    }
    return out;
}

/// Bilinear resample of an RGB image (half-pixel centers, rounded to 8 bits).
inline Image resize_bilinear(const Image& img, int h, int w) {
    if (img.empty() || h <= 0 || w <= 0) throw ShapeError("resize of empty image or to empty size");
    const auto ty = linear_taps(img.height, h);
    const auto tx = linear_taps(img.width, w);
    Image out(h, w);
    for (int y = 0; y < h; ++y) {
        const auto& a = ty[static_cast<std::size_t>(y)];
        for (int x = 0; x < w; ++x) {
            const auto& b = tx[static_cast<std::size_t>(x)];
            for (int c = 0; c < 3; ++c) {
                const double top = (1.0 - b.w1) * img.at(a.i0, b.i0, c) + b.w1 * img.at(a.i0, b.i1, c);
                const double bot = (1.0 - b.w1) * img.at(a.i1, b.i0, c) + b.w1 * img.at(a.i1, b.i1, c);
                out.at(y, x, c) = detail::to_u8((1.0 - a.w1) * top + a.w1 * bot);
            }
        }
    }
    return out;
}

/// Nearest-neighbor resample; used for label maps so class ids are never blended.
inline LabelMap resize_nearest(const LabelMap& labels, int h, int w) {
    if (labels.empty() || h <= 0 || w <= 0) throw ShapeError("resize of empty label map or to empty size");
    const auto ny = nearest_taps(labels.height, h);
    const auto nx = nearest_taps(labels.width, w);
    LabelMap out(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            out.at(y, x) = labels.at(ny[static_cast<std::size_t>(y)], nx[static_cast<std::size_t>(x)]);
    return out;
}

struct GeometricTrace {
    double scale = 1.0;
    int resized_height = 0;
    int resized_width = 0;
    int offset_y = 0;  // crop origin in the resized raster (0 when padded)
    int offset_x = 0;
};

/// Random rescale by s ~ U(scale_range), then random crop or bottom/right pad
/// to the crop size. Image and labels stay aligned pixel-for-pixel.
inline std::pair<Image, LabelMap> geometric_pipeline(const Image& img, const LabelMap& labels,
                                                     const GeometricConfig& cfg, RngStream& rng,
                                                     GeometricTrace* trace = nullptr) {
    cfg.validate();
    if (!labels.same_shape(img.height, img.width))
        throw ShapeError("image " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                         " and label map " + std::to_string(labels.height) + "x" +
                         std::to_string(labels.width) + " differ in shape");
    const double s = rng.uniform(cfg.scale_range.lo, cfg.scale_range.hi);
    const int h = std::max(1, static_cast<int>(std::lround(s * img.height)));
    const int w = std::max(1, static_cast<int>(std::lround(s * img.width)));
    Image rimg = (h == img.height && w == img.width) ? img : resize_bilinear(img, h, w);
    LabelMap rlab = (h == img.height && w == img.width) ? labels : resize_nearest(labels, h, w);

    const int oy = h > cfg.crop_height ? static_cast<int>(rng.below(static_cast<std::uint64_t>(h - cfg.crop_height + 1))) : 0;
    const int ox = w > cfg.crop_width ? static_cast<int>(rng.below(static_cast<std::uint64_t>(w - cfg.crop_width + 1))) : 0;
    const int ch = std::min(h, cfg.crop_height);
    const int cw = std::min(w, cfg.crop_width);
    if (ch != h || cw != w) {
        rimg = crop(rimg, oy, ox, ch, cw);
        rlab = crop(rlab, oy, ox, ch, cw);
    }
    if (ch != cfg.crop_height || cw != cfg.crop_width) {
        rimg = pad_bottom_right(rimg, cfg.crop_height, cfg.crop_width, cfg.image_pad_value);
        rlab = pad_bottom_right(rlab, cfg.crop_height, cfg.crop_width, cfg.label_pad_value);
    }
    if (trace) *trace = {s, h, w, oy, ox};
    return {std::move(rimg), std::move(rlab)};
}

inline constexpr int kPreviewGutter = 8;

/// 3x3 preview of the distortion family, row-major:
/// original, combined(+), combined(-), brightness +/-, contrast hi/lo, saturation hi/lo.
/// Tiles are separated by white gutters of kPreviewGutter pixels.
inline Image preview_grid(const Image& img, const PhotometricConfig& cfg) {
    cfg.validate();
    auto combined = [&](double sign) {
        Image t = color_transform(img, ColorKind::brightness, sign * cfg.brightness_delta);
        t = color_transform(t, ColorKind::contrast, sign > 0 ? cfg.contrast_range.hi : cfg.contrast_range.lo);
        t = color_transform(t, ColorKind::saturation, sign > 0 ? cfg.saturation_range.hi : cfg.saturation_range.lo);
        return color_transform(t, ColorKind::hue, sign * cfg.hue_delta);
    };
    const std::array<Image, 9> tiles = {
        img,
        combined(+1.0),
        combined(-1.0),
        color_transform(img, ColorKind::brightness, +cfg.brightness_delta),
        color_transform(img, ColorKind::brightness, -cfg.brightness_delta),
        color_transform(img, ColorKind::contrast, cfg.contrast_range.hi),
        color_transform(img, ColorKind::contrast, cfg.contrast_range.lo),
        color_transform(img, ColorKind::saturation, cfg.saturation_range.hi),
        color_transform(img, ColorKind::saturation, cfg.saturation_range.lo),
    };
    const int H = img.height, W = img.width, g = kPreviewGutter;
    Image grid(3 * H + 2 * g, 3 * W + 2 * g, 255);
    for (int t = 0; t < 9; ++t) {
        const int y0 = (t / 3) * (H + g);
        const int x0 = (t % 3) * (W + g);
        for (int y = 0; y < H; ++y) {
            auto src = tiles[static_cast<std::size_t>(t)].row(y);
            std::copy(src.begin(), src.end(), grid.row(y0 + y).begin() + static_cast<std::ptrdiff_t>(x0) * 3);
        }
    }
    return grid;
}

}  // namespace offroad
