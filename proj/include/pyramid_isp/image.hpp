#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "pyramid_isp/tensor.hpp"

namespace pyramid_isp {

/// Interleaved 8-bit RGB, row-major.
struct Rgb8Image {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> data;

    std::uint8_t& at(int y, int x, int c) { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    std::uint8_t at(int y, int x, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    friend bool operator==(const Rgb8Image&, const Rgb8Image&) = default;
};

/// Planar (3, H, W) image with values in [-1, 1].
template <typename T>
struct RgbImage {
    Tensor<T> values;

    int height() const { return values.height(); }
    int width() const { return values.width(); }
};

template <typename T>
T normalize_sample(std::uint8_t v) {
    return static_cast<T>(v) * (T(2) / T(255)) - T(1);
}

/// Maps [-1, 1] to 0..255, rounding half away from zero and clamping.
template <typename T>
std::uint8_t denormalize_sample(T v) {
    const double s = (static_cast<double>(v) + 1.0) * 0.5 * 255.0;
    return static_cast<std::uint8_t>(std::clamp(std::round(s), 0.0, 255.0));
}

template <typename T>
RgbImage<T> normalize_rgb(const Rgb8Image& img) {
    RgbImage<T> out{Tensor<T>::chw(3, img.height, img.width)};
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x) out.values.at(c, y, x) = normalize_sample<T>(img.at(y, x, c));
    return out;
}

template <typename T>
Rgb8Image denormalize_rgb(const RgbImage<T>& img) {
    Rgb8Image out{img.height(), img.width(), std::vector<std::uint8_t>(static_cast<std::size_t>(img.height()) * img.width() * 3)};
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < img.height(); ++y)
            for (int x = 0; x < img.width(); ++x) out.at(y, x, c) = denormalize_sample(img.values.at(c, y, x));
    return out;
}

/// Downsamples by 2^level. Each halving is bilinear without corner
/// alignment, which at factor 2 reduces to the mean of each 2x2 cell, so the
/// composite is the area average over 2^level x 2^level blocks.
template <typename T>
RgbImage<T> downsample_target(const RgbImage<T>& img, int level) {
    if (level < 0 || level > 5) throw ContractError("downsample level " + std::to_string(level) + " outside 0..5");
    const int f = 1 << level;
    if (img.height() % f || img.width() % f)
        throw DimensionError("image " + shape_str(img.values.shape()) + " not divisible by " + std::to_string(f));
    Tensor<T> cur = img.values;
    for (int l = 0; l < level; ++l) {
        const int c = cur.channels(), h = cur.height() / 2, w = cur.width() / 2;
        Tensor<T> next = Tensor<T>::chw(c, h, w);
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x)
                    next.at(ch, y, x) = T(0.25) * ((cur.at(ch, 2 * y, 2 * x) + cur.at(ch, 2 * y, 2 * x + 1)) +
                                                   (cur.at(ch, 2 * y + 1, 2 * x) + cur.at(ch, 2 * y + 1, 2 * x + 1)));
        cur = std::move(next);
    }
    return {std::move(cur)};
}

}  // namespace pyramid_isp
