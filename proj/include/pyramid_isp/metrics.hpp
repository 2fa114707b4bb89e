#pragma once

#include <cmath>
#include <limits>

#include "pyramid_isp/losses.hpp"

namespace pyramid_isp {

/// [-1, 1] -> [0, 1], clamped. Metrics are computed on this range.
template <typename T>
Tensor<T> to_unit_range(const Tensor<T>& x) {
    Tensor<T> out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::clamp((x[i] + T(1)) * T(0.5), T(0), T(1));
    return out;
}

/// PSNR in dB with peak 1. Identical images give +infinity.
template <typename T>
double psnr(const RgbImage<T>& a, const RgbImage<T>& b) {
    a.values.require_same_shape(b.values, "psnr");
    const auto x = to_unit_range(a.values), y = to_unit_range(b.values);
    double s = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = static_cast<double>(x[i]) - static_cast<double>(y[i]);
        s += d * d;
    }
    const double mse = s / static_cast<double>(x.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

template <typename T>
double ssim(const RgbImage<T>& a, const RgbImage<T>& b) {
    a.values.require_same_shape(b.values, "ssim");
    auto x = Var<double>::constant(to_unit_range(a.values).template cast<double>());
    auto y = Var<double>::constant(to_unit_range(b.values).template cast<double>());
    return ssim_var(x, y).item();
}

template <typename T>
double ms_ssim(const RgbImage<T>& a, const RgbImage<T>& b) {
    a.values.require_same_shape(b.values, "ms_ssim");
    auto x = Var<double>::constant(to_unit_range(a.values).template cast<double>());
    auto y = Var<double>::constant(to_unit_range(b.values).template cast<double>());
    return ms_ssim_var(x, y).item();
}

struct ImageMetrics {
    double psnr = 0;
    double ssim = 0;
    double ms_ssim = 0;
};

template <typename T>
ImageMetrics evaluate_pair(const RgbImage<T>& pred, const RgbImage<T>& target) {
    return {psnr(pred, target), ssim(pred, target), ms_ssim(pred, target)};
}

}  // namespace pyramid_isp
