#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "offroad/raster.hpp"
#include "offroad/rng.hpp"

namespace offroad {

/// Toy off-road scene with three classes: sky above a wavy horizon, natural
/// ground below it, and vegetation blobs (discs and boxes) straddling the
/// horizon. Colors carry mild per-pixel noise. Deterministic in (seed, index).
inline std::pair<Image, LabelMap> synthetic_scene(int height, int width, std::uint64_t seed, std::uint64_t index) {
    constexpr std::uint8_t kGround = 3, kVegetation = 6, kSky = 8;
    RngStream rng = RngStream::derive(seed, index);
    Image img(height, width);
    LabelMap lab(height, width);

    const double horizon = height * rng.uniform(0.3, 0.6);
    const double amp = height * rng.uniform(0.02, 0.08);
    const double freq = rng.uniform(1.0, 3.0) * 6.283185307179586 / width;
    const double phase = rng.uniform(0.0, 6.283185307179586);

    struct Blob {
        bool disc;
        double cy, cx, ry, rx;
    };
    std::vector<Blob> blobs;
    const int nblobs = 1 + static_cast<int>(rng.below(3));
    for (int b = 0; b < nblobs; ++b) {
        Blob bl;
        bl.disc = rng.bernoulli(0.5);
        bl.cy = horizon + height * rng.uniform(-0.1, 0.15);
        bl.cx = width * rng.uniform(0.1, 0.9);
        bl.ry = height * rng.uniform(0.08, 0.18);
        bl.rx = width * rng.uniform(0.08, 0.18);
        blobs.push_back(bl);
    }

    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            std::uint8_t k = y < horizon + amp * std::sin(freq * x + phase) ? kSky : kGround;
            for (const auto& bl : blobs) {
                const double dy = (y + 0.5 - bl.cy) / bl.ry, dx = (x + 0.5 - bl.cx) / bl.rx;
                const bool inside = bl.disc ? dy * dy + dx * dx <= 1.0 : std::abs(dy) <= 1.0 && std::abs(dx) <= 1.0;
                if (inside) k = kVegetation;
            }
            lab.at(y, x) = k;
            int rgb[3];
            if (k == kSky) {
                rgb[0] = 110; rgb[1] = 160; rgb[2] = 225;
            } else if (k == kGround) {
                rgb[0] = 150; rgb[1] = 110; rgb[2] = 70;
            } else {
                rgb[0] = 45; rgb[1] = 125; rgb[2] = 50;
            }
            for (int c = 0; c < 3; ++c) {
                const int noisy = rgb[c] + static_cast<int>(rng.below(21)) - 10;
                img.at(y, x, c) = static_cast<std::uint8_t>(std::clamp(noisy, 0, 255));
            }
        }
    return {std::move(img), std::move(lab)};
}

}  // namespace offroad
