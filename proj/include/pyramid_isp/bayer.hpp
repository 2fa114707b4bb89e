#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "pyramid_isp/tensor.hpp"

namespace pyramid_isp {

/// Colour layout of the 2x2 Bayer cell, read row-major from the top-left
/// pixel: RGGB means (0,0)=R, (0,1)=G, (1,0)=G, (1,1)=B.
enum class BayerPattern { RGGB, BGGR, GRBG, GBRG };

inline std::string_view to_string(BayerPattern p) {
    switch (p) {
        case BayerPattern::RGGB: return "RGGB";
        case BayerPattern::BGGR: return "BGGR";
        case BayerPattern::GRBG: return "GRBG";
        case BayerPattern::GBRG: return "GBRG";
    }
    return "?";
}

inline BayerPattern parse_bayer_pattern(std::string_view s) {
    if (s == "RGGB") return BayerPattern::RGGB;
    if (s == "BGGR") return BayerPattern::BGGR;
    if (s == "GRBG") return BayerPattern::GRBG;
    if (s == "GBRG") return BayerPattern::GBRG;
    throw ValidationError("unknown Bayer pattern '" + std::string(s) + "'");
}

/// Colour letter at each of the four cell positions, index = 2*row + col.
inline std::array<char, 4> pattern_layout(BayerPattern p) {
    const auto s = to_string(p);
    return {s[0], s[1], s[2], s[3]};
}

inline BayerPattern pattern_from_layout(const std::array<char, 4>& l) {
    return parse_bayer_pattern(std::string(l.begin(), l.end()));
}

/// Single-channel sensor mosaic, row-major.
struct RawMosaic {
    int height = 0;
    int width = 0;
    int bit_depth = 10;
    BayerPattern pattern = BayerPattern::RGGB;
    std::vector<std::uint16_t> pixels;

    std::uint16_t& at(int y, int x) { return pixels[static_cast<std::size_t>(y) * width + x]; }
    std::uint16_t at(int y, int x) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
    int max_value() const { return (1 << bit_depth) - 1; }

    void validate() const {
        if (bit_depth < 1 || bit_depth > 16) throw ValidationError("bit depth " + std::to_string(bit_depth) + " outside 1..16");
        if (height <= 0 || width <= 0 || height % 2 || width % 2)
            throw DimensionError("mosaic must have positive even dims, got " + std::to_string(height) + "x" +
                                 std::to_string(width));
        if (pixels.size() != static_cast<std::size_t>(height) * width) throw DimensionError("mosaic pixel count");
        const int mx = max_value();
        for (std::size_t i = 0; i < pixels.size(); ++i)
            if (pixels[i] > mx)
                throw ValidationError("pixel " + std::to_string(i) + " value " + std::to_string(pixels[i]) +
                                      " exceeds " + std::to_string(bit_depth) + "-bit range");
    }

    friend bool operator==(const RawMosaic&, const RawMosaic&) = default;
};

/// Half-resolution 4-channel representation. Channel c holds the subgrid at
/// (row offset, col offset) = (c / 2, c % 2); `pattern` says which colour
/// that is. Values lie in [-1, 1].
template <typename T>
struct PackedRaw {
    Tensor<T> values;  // (4, H/2, W/2)
    BayerPattern pattern = BayerPattern::RGGB;

    int height() const { return values.height(); }
    int width() const { return values.width(); }
};

template <typename T>
PackedRaw<T> pack_bayer(const RawMosaic& raw) {
    raw.validate();
    const int h = raw.height / 2, w = raw.width / 2;
    const double mx = raw.max_value();
    PackedRaw<T> out{Tensor<T>::chw(4, h, w), raw.pattern};
    for (int c = 0; c < 4; ++c) {
        const int dy = c / 2, dx = c % 2;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) out.values.at(c, y, x) = static_cast<T>(2.0 * raw.at(2 * y + dy, 2 * x + dx) / mx - 1.0);
    }
    return out;
}

/// Inverse of pack_bayer at the given bit depth; values are rounded to the
/// nearest code and clamped into range.
template <typename T>
RawMosaic unpack_bayer(const PackedRaw<T>& packed, int bit_depth) {
    if (packed.values.rank() != 3 || packed.values.channels() != 4)
        throw DimensionError("packed raw must have 4 channels, got " + shape_str(packed.values.shape()));
    if (bit_depth < 1 || bit_depth > 16) throw ValidationError("bit depth " + std::to_string(bit_depth) + " outside 1..16");
    RawMosaic raw;
    raw.height = packed.height() * 2;
    raw.width = packed.width() * 2;
    raw.bit_depth = bit_depth;
    raw.pattern = packed.pattern;
    raw.pixels.assign(static_cast<std::size_t>(raw.height) * raw.width, 0);
    const double mx = raw.max_value();
    for (int c = 0; c < 4; ++c)
        for (int y = 0; y < packed.height(); ++y)
            for (int x = 0; x < packed.width(); ++x) {
                const double v = (static_cast<double>(packed.values.at(c, y, x)) + 1.0) * 0.5 * mx;
                raw.at(2 * y + c / 2, 2 * x + c % 2) = static_cast<std::uint16_t>(std::clamp(std::round(v), 0.0, mx));
            }
    return raw;
}

}  // namespace pyramid_isp
