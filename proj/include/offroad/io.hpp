#pragma once

#include <cstring>
#include <filesystem>
#include <string>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "offroad/config.hpp"
#include "offroad/error.hpp"
#include "offroad/raster.hpp"

// Raster file I/O. Images are decoded as 8-bit RGB; label maps must be
// single-channel 8-bit PNGs whose pixel values are class ids.

namespace offroad::io {

inline Image read_image(const std::filesystem::path& path) {
    cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (bgr.empty()) throw DataError("cannot read image " + path.string());
    cv::Mat rgb;
    cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
    Image img(rgb.rows, rgb.cols);
    for (int y = 0; y < rgb.rows; ++y) std::memcpy(img.row(y).data(), rgb.ptr(y), static_cast<std::size_t>(rgb.cols) * 3);
    return img;
}

inline LabelMap read_labels(const std::filesystem::path& path) {
    cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
    if (m.empty()) throw DataError("cannot read label map " + path.string());
    if (m.depth() != CV_8U || m.channels() != 1)
        throw DataError("label map " + path.string() + " must be a single-channel 8-bit raster");
    LabelMap out(m.rows, m.cols);
    for (int y = 0; y < m.rows; ++y) std::memcpy(out.row(y).data(), m.ptr(y), static_cast<std::size_t>(m.cols));
    return out;
}

inline void write_png(const std::filesystem::path& path, const Image& img) {
    cv::Mat rgb(img.height, img.width, CV_8UC3, const_cast<std::uint8_t*>(img.data.data()));
    cv::Mat bgr;
    cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    if (!cv::imwrite(path.string(), bgr)) throw DataError("cannot write " + path.string());
}

inline void write_png(const std::filesystem::path& path, const LabelMap& labels) {
    cv::Mat m(labels.height, labels.width, CV_8UC1, const_cast<std::uint8_t*>(labels.data.data()));
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    if (!cv::imwrite(path.string(), m)) throw DataError("cannot write " + path.string());
}

/// Class ids to palette colors; ignored and out-of-range pixels are black.
inline Image colorize(const LabelMap& labels, const std::array<Color, kNumClasses>& palette) {
    Image out(labels.height, labels.width);
    for (std::size_t i = 0; i < labels.pixels(); ++i) {
        const int k = labels.data[i];
        if (k >= kNumClasses) continue;
        for (int c = 0; c < 3; ++c)
            out.data[i * 3 + c] = static_cast<std::uint8_t>(palette[static_cast<std::size_t>(k)][static_cast<std::size_t>(c)]);
    }
    return out;
}

}  // namespace offroad::io
