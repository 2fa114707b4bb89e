#pragma once

// Reference implementations written directly from the definitions, sharing
// no code with the library beyond plain data types.

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "pyramid_isp/bayer.hpp"
#include "pyramid_isp/tensor.hpp"

namespace oracle {

using pyramid_isp::Tensor;

/// Planar image as nested vectors: img[c][y][x].
using Image = std::vector<std::vector<std::vector<double>>>;

inline Image from_tensor(const Tensor<double>& t) {
    Image img(static_cast<std::size_t>(t.channels()),
              std::vector<std::vector<double>>(static_cast<std::size_t>(t.height()), std::vector<double>(static_cast<std::size_t>(t.width()))));
    for (int c = 0; c < t.channels(); ++c)
        for (int y = 0; y < t.height(); ++y)
            for (int x = 0; x < t.width(); ++x) img[c][y][x] = t.at(c, y, x);
    return img;
}

inline double mse(const Tensor<double>& a, const Tensor<double>& b) {
    long double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const long double d = static_cast<long double>(a[i]) - b[i];
        s += d * d;
    }
    return static_cast<double>(s / a.size());
}

/// 2-D Gaussian window 11x11, sigma 1.5, normalised to unit sum.
inline std::vector<std::vector<double>> gaussian2d() {
    std::vector<std::vector<double>> w(11, std::vector<double>(11));
    double s = 0;
    for (int i = 0; i < 11; ++i)
        for (int j = 0; j < 11; ++j) {
            w[i][j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / (2 * 1.5 * 1.5));
            s += w[i][j];
        }
    for (auto& r : w)
        for (double& v : r) v /= s;
    return w;
}

struct ChannelSsim {
    double ssim = 0;  // mean of l * cs over valid windows
    double cs = 0;    // mean of cs over valid windows
};

/// Per-window statistics at every valid position of one channel, [0,1] data.
inline ChannelSsim channel_ssim(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b) {
    static const auto w = gaussian2d();
    const double c1 = 0.0001, c2 = 0.0009;
    const int h = static_cast<int>(a.size()), wd = static_cast<int>(a[0].size());
    ChannelSsim out;
    long n = 0;
    for (int y = 0; y + 11 <= h; ++y)
        for (int x = 0; x + 11 <= wd; ++x) {
            double ma = 0, mb = 0;
            for (int i = 0; i < 11; ++i)
                for (int j = 0; j < 11; ++j) {
                    ma += w[i][j] * a[y + i][x + j];
                    mb += w[i][j] * b[y + i][x + j];
                }
            double va = 0, vb = 0, cov = 0;
            for (int i = 0; i < 11; ++i)
                for (int j = 0; j < 11; ++j) {
                    const double da = a[y + i][x + j] - ma, db = b[y + i][x + j] - mb;
                    va += w[i][j] * da * da;
                    vb += w[i][j] * db * db;
                    cov += w[i][j] * da * db;
                }
            const double l = (2 * ma * mb + c1) / (ma * ma + mb * mb + c1);
            const double cs = (2 * cov + c2) / (va + vb + c2);
            out.ssim += l * cs;
            out.cs += cs;
            ++n;
        }
    out.ssim /= n;
    out.cs /= n;
    return out;
}

inline double ssim(const Image& a, const Image& b) {
    double s = 0;
    for (std::size_t c = 0; c < a.size(); ++c) s += channel_ssim(a[c], b[c]).ssim;
    return s / a.size();
}

inline std::vector<std::vector<double>> halve(const std::vector<std::vector<double>>& p) {
    const std::size_t h = p.size() / 2, w = p[0].size() / 2;
    std::vector<std::vector<double>> out(h, std::vector<double>(w));
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            out[y][x] = (p[2 * y][2 * x] + p[2 * y][2 * x + 1] + p[2 * y + 1][2 * x] + p[2 * y + 1][2 * x + 1]) / 4;
    return out;
}

/// MS-SSIM: prod_j cs_j^w_j (j < M) * ssim_M^w_M per channel, averaged over
/// channels. Scales limited to those where the image still holds a window,
/// weights renormalised. Negative terms clamp to zero.
inline double ms_ssim(const Image& a, const Image& b) {
    const double weights[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
    int m = 0;
    for (std::size_t s = std::min(a[0].size(), a[0][0].size()); m < 5 && s >= 11; s /= 2) ++m;
    double wsum = 0;
    for (int j = 0; j < m; ++j) wsum += weights[j];
    double total = 0;
    for (std::size_t c = 0; c < a.size(); ++c) {
        auto pa = a[c], pb = b[c];
        double prod = 1;
        for (int j = 0; j < m; ++j) {
            const auto st = channel_ssim(pa, pb);
            const double v = j + 1 < m ? st.cs : st.ssim;
            prod *= std::pow(std::max(v, 0.0), weights[j] / wsum);
            pa = halve(pa);
            pb = halve(pb);
        }
        total += prod;
    }
    return total / a.size();
}

/// Direct loop convolution, no padding: w (out, in, k, k), bias (out).
inline Image conv_valid(const Image& x, const Tensor<double>& w, const Tensor<double>& bias) {
    const int out_c = w.dim(0), in_c = w.dim(1), k = w.dim(2);
    const int h = static_cast<int>(x[0].size()) - k + 1, wd = static_cast<int>(x[0][0].size()) - k + 1;
    Image y(static_cast<std::size_t>(out_c), std::vector<std::vector<double>>(static_cast<std::size_t>(h), std::vector<double>(static_cast<std::size_t>(wd))));
    for (int o = 0; o < out_c; ++o)
        for (int r = 0; r < h; ++r)
            for (int s = 0; s < wd; ++s) {
                double acc = bias[static_cast<std::size_t>(o)];
                for (int i = 0; i < in_c; ++i)
                    for (int u = 0; u < k; ++u)
                        for (int v = 0; v < k; ++v)
                            acc += w[((static_cast<std::size_t>(o) * in_c + i) * k + u) * k + v] * x[i][r + u][s + v];
                y[o][r][s] = acc;
            }
    return y;
}

inline Image relu(Image x) {
    for (auto& c : x)
        for (auto& r : c)
            for (double& v : r) v = std::max(v, 0.0);
    return x;
}

inline Image avgpool2(const Image& x) {
    Image y;
    for (const auto& c : x) y.push_back(halve(c));
    return y;
}

// ---------------------------------------------------------------------------
// Geometry, stated per pixel

/// Where pixel (y, x) of an h x w image lands under hflip then `rot`
/// counter-clockwise quarter turns, and the output size.
struct Placement {
    int y, x, h, w;
};

inline Placement place(int y, int x, int h, int w, int rot, bool flip) {
    if (flip) x = w - 1 - x;
    for (int r = 0; r < rot; ++r) {
        // counter-clockwise: the right edge becomes the top edge
        const int ny = w - 1 - x, nx = y;
        y = ny;
        x = nx;
        std::swap(h, w);
    }
    return {y, x, h, w};
}

/// Mosaic transform by scattering every pixel; the pattern tag is read off
/// the colours that land in the top-left 2x2 cell.
inline pyramid_isp::RawMosaic transform_mosaic(const pyramid_isp::RawMosaic& m, int rot, bool flip) {
    const auto p0 = place(0, 0, m.height, m.width, rot, flip);
    pyramid_isp::RawMosaic out{p0.h, p0.w, m.bit_depth, m.pattern,
                               std::vector<std::uint16_t>(m.pixels.size())};
    const auto layout = pyramid_isp::pattern_layout(m.pattern);
    std::array<char, 4> nl{};
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x) {
            const auto p = place(y, x, m.height, m.width, rot, flip);
            out.pixels[static_cast<std::size_t>(p.y) * p.w + p.x] = m.at(y, x);
            if (p.y < 2 && p.x < 2) nl[static_cast<std::size_t>(2 * p.y + p.x)] = layout[static_cast<std::size_t>(2 * (y % 2) + x % 2)];
        }
    out.pattern = pyramid_isp::pattern_from_layout(nl);
    return out;
}

inline Tensor<double> transform_planes(const Tensor<double>& t, int rot, bool flip) {
    const auto p0 = place(0, 0, t.height(), t.width(), rot, flip);
    auto out = Tensor<double>::chw(t.channels(), p0.h, p0.w);
    for (int c = 0; c < t.channels(); ++c)
        for (int y = 0; y < t.height(); ++y)
            for (int x = 0; x < t.width(); ++x) {
                const auto p = place(y, x, t.height(), t.width(), rot, flip);
                out.at(c, p.y, p.x) = t.at(c, y, x);
            }
    return out;
}

// ---------------------------------------------------------------------------
// Finite differences

/// Central difference of f around x[i] with step h; restores x[i].
inline double central_difference(const std::function<double()>& f, double& xi, double h) {
    const double keep = xi;
    xi = keep + h;
    const double fp = f();
    xi = keep - h;
    const double fm = f();
    xi = keep;
    return (fp - fm) / (2 * h);
}

/// |a - n| / max(|a|, |n|, floor); the floor keeps gradients that are
/// zero up to round-off from dividing by round-off.
inline double relative_error(double analytic, double numeric, double floor = 1e-7) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

inline pyramid_isp::RawMosaic random_mosaic(std::mt19937_64& g, int h, int w, int bits, pyramid_isp::BayerPattern p) {
    pyramid_isp::RawMosaic m{h, w, bits, p, std::vector<std::uint16_t>(static_cast<std::size_t>(h) * w)};
    std::uniform_int_distribution<int> d(0, (1 << bits) - 1);
    for (auto& v : m.pixels) v = static_cast<std::uint16_t>(d(g));
    return m;
}

inline Tensor<double> random_tensor(std::mt19937_64& g, pyramid_isp::Shape s, double lo, double hi) {
    Tensor<double> t(std::move(s));
    std::uniform_real_distribution<double> d(lo, hi);
    for (auto& v : t.vec()) v = d(g);
    return t;
}

}  // namespace oracle
