#pragma once

#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "pyramid_isp/dataset.hpp"

namespace pyramid_isp {

/// Smooth colour gradients plus a few soft disks, 8-bit.
inline Rgb8Image synthetic_rgb(int size, std::uint64_t seed) {
    std::mt19937_64 g(splitmix64(seed));
    auto u = [&] { return unit_uniform(g); };
    double base[3], gx[3], gy[3];
    for (int c = 0; c < 3; ++c) {
        base[c] = 0.2 + 0.6 * u();
        gx[c] = 0.4 * (u() - 0.5);
        gy[c] = 0.4 * (u() - 0.5);
    }
    struct Disk {
        double cx, cy, r, col[3];
    };
    std::vector<Disk> disks(3);
    for (auto& d : disks) {
        d.cx = u() * size;
        d.cy = u() * size;
        d.r = (0.1 + 0.2 * u()) * size;
        for (double& c : d.col) c = u();
    }
    Rgb8Image img{size, size, std::vector<std::uint8_t>(static_cast<std::size_t>(size) * size * 3)};
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const double fx = double(x) / size - 0.5, fy = double(y) / size - 0.5;
            double px[3];
            for (int c = 0; c < 3; ++c) px[c] = base[c] + gx[c] * fx + gy[c] * fy;
            for (const auto& d : disks) {
                const double dist = std::hypot(x - d.cx, y - d.cy);
                const double a = 1.0 / (1.0 + std::exp((dist - d.r) / 1.5));
                for (int c = 0; c < 3; ++c) px[c] = (1 - a) * px[c] + a * d.col[c];
            }
            for (int c = 0; c < 3; ++c)
                img.at(y, x, c) = static_cast<std::uint8_t>(std::lround(std::clamp(px[c], 0.0, 1.0) * 255.0));
        }
    return img;
}

struct DegradationParams {
    double gamma = 2.2;
    double gain_r = 0.55;  // sensor response relative to green
    double gain_b = 0.70;
    double noise_sigma = 0.004;
    int bit_depth = 10;
    BayerPattern pattern = BayerPattern::RGGB;
};

/// Simulated sensor capture of an sRGB-like image: undo display gamma,
/// apply channel gains, sample the Bayer pattern, add noise, quantize.
inline RawMosaic degrade_to_mosaic(const Rgb8Image& rgb, std::uint64_t seed, const DegradationParams& p = {}) {
    std::mt19937_64 g(splitmix64(seed ^ 0xD1B54A32D192ED03ULL));
    std::normal_distribution<double> noise(0.0, p.noise_sigma);
    RawMosaic raw{rgb.height, rgb.width, p.bit_depth, p.pattern,
                  std::vector<std::uint16_t>(static_cast<std::size_t>(rgb.height) * rgb.width)};
    const auto layout = pattern_layout(p.pattern);
    const double mx = raw.max_value();
    for (int y = 0; y < rgb.height; ++y)
        for (int x = 0; x < rgb.width; ++x) {
            const char col = layout[static_cast<std::size_t>(2 * (y % 2) + x % 2)];
            const int c = col == 'R' ? 0 : col == 'G' ? 1 : 2;
            double v = std::pow(rgb.at(y, x, c) / 255.0, p.gamma);
            v *= c == 0 ? p.gain_r : c == 2 ? p.gain_b : 1.0;
            v += noise(g);
            raw.at(y, x) = static_cast<std::uint16_t>(std::lround(std::clamp(v, 0.0, 1.0) * mx));
        }
    return raw;
}

template <typename T>
std::vector<Sample<T>> synthetic_samples(int count, int size, std::uint64_t seed, const DegradationParams& p = {}) {
    std::vector<Sample<T>> out;
    for (int i = 0; i < count; ++i) {
        const std::uint64_t s = seed * 1000 + static_cast<std::uint64_t>(i);
        auto rgb = synthetic_rgb(size, s);
        out.push_back({"syn" + std::to_string(i), pack_bayer<T>(degrade_to_mosaic(rgb, s, p)), normalize_rgb<T>(rgb)});
    }
    return out;
}

/// Writes `count` synthetic pairs in the on-disk dataset layout.
inline void write_synthetic_split(const std::filesystem::path& root, const std::string& split, int count, int size,
                                  std::uint64_t seed, const DegradationParams& p = {}) {
    std::filesystem::create_directories(root / split / "raw");
    std::filesystem::create_directories(root / split / "rgb");
    for (int i = 0; i < count; ++i) {
        const std::uint64_t s = seed * 1000 + static_cast<std::uint64_t>(i);
        auto rgb = synthetic_rgb(size, s);
        char id[32];
        std::snprintf(id, sizeof id, "%s%04d", split.c_str(), i);
        png::write_mosaic(root / split / "raw" / (std::string(id) + ".png"), degrade_to_mosaic(rgb, s, p));
        png::write_rgb8(root / split / "rgb" / (std::string(id) + ".png"), rgb);
    }
}

}  // namespace pyramid_isp
