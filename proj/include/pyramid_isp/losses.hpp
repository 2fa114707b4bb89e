#pragma once

#include <array>
#include <atomic>
#include <cstdint>
#include <random>
#include <cmath>
#include <filesystem>
#include <limits>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "pyramid_isp/image.hpp"
#include "pyramid_isp/model.hpp"
#include "pyramid_isp/nn_ops.hpp"

namespace pyramid_isp {

enum class Track { FIDELITY, PERCEPTUAL };

inline std::string_view to_string(Track t) { return t == Track::FIDELITY ? "fidelity" : "perceptual"; }

inline Track parse_track(std::string_view s) {
    if (s == "fidelity") return Track::FIDELITY;
    if (s == "perceptual") return Track::PERCEPTUAL;
    throw ConfigError("unknown track '" + std::string(s) + "' (expected fidelity or perceptual)");
}

struct LossWeights {
    double mse = 1.0;
    double vgg = 0.0;
    double msssim = 0.0;
    friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

/// Coefficient schedule: MSE only at levels 5 and 4, perceptual term added
/// from level 3, MS-SSIM term at the full-resolution stage only.
inline LossWeights loss_weights(int level, Track track) {
    if (level < 0 || level > 5) throw ContractError("loss level " + std::to_string(level) + " outside 0..5");
    if (level >= 4) return {1.0, 0.0, 0.0};
    if (level >= 1) return {1.0, 0.01, 0.0};
    return {1.0, 0.01, track == Track::FIDELITY ? 0.01 : 0.1};
}

// ---------------------------------------------------------------------------
// Pixel losses

template <typename T>
Var<T> mse_loss(const Var<T>& pred, const Var<T>& target) {
    pred.value().require_same_shape(target.value(), "mse_loss");
    return mean(square(sub(pred, target)));
}

// ---------------------------------------------------------------------------
// Structural similarity

struct SsimParams {
    static constexpr int window = 11;
    static constexpr double sigma = 1.5;
    static constexpr double k1 = 0.01;
    static constexpr double k2 = 0.03;
    static constexpr std::array<double, 5> ms_weights{0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
};

template <typename T>
std::vector<T> gaussian_window() {
    std::vector<T> g(SsimParams::window);
    double s = 0;
    const int half = SsimParams::window / 2;
    std::vector<double> d(SsimParams::window);
    for (int i = 0; i < SsimParams::window; ++i) {
        d[static_cast<std::size_t>(i)] = std::exp(-double((i - half) * (i - half)) / (2.0 * SsimParams::sigma * SsimParams::sigma));
        s += d[static_cast<std::size_t>(i)];
    }
    for (int i = 0; i < SsimParams::window; ++i) g[static_cast<std::size_t>(i)] = static_cast<T>(d[static_cast<std::size_t>(i)] / s);
    return g;
}

/// Number of MS-SSIM scales that fit: each scale halves, and the smallest
/// must still hold one window. Capped at 5.
inline int ms_ssim_scales(int h, int w) {
    int m = 0;
    int s = std::min(h, w);
    while (m < 5 && s >= SsimParams::window) {
        ++m;
        s /= 2;
    }
    return m;
}

template <typename T>
struct SsimTerms {
    Var<T> cs;    // (C, 1, 1) mean contrast-structure per channel
    Var<T> ssim;  // (C, 1, 1) mean SSIM per channel
};

/// Per-channel SSIM terms for maps already in [0, 1], valid Gaussian window.
template <typename T>
SsimTerms<T> ssim_terms(const Var<T>& x, const Var<T>& y) {
    const auto win = gaussian_window<T>();
    const T c1 = static_cast<T>(SsimParams::k1 * SsimParams::k1);
    const T c2 = static_cast<T>(SsimParams::k2 * SsimParams::k2);
    auto mu_x = separable_filter_valid(x, win);
    auto mu_y = separable_filter_valid(y, win);
    auto mu_xx = mul(mu_x, mu_x);
    auto mu_yy = mul(mu_y, mu_y);
    auto mu_xy = mul(mu_x, mu_y);
    auto s_xx = sub(separable_filter_valid(mul(x, x), win), mu_xx);
    auto s_yy = sub(separable_filter_valid(mul(y, y), win), mu_yy);
    auto s_xy = sub(separable_filter_valid(mul(x, y), win), mu_xy);
    auto cs_map = div(affine(s_xy, T(2), c2), affine(add(s_xx, s_yy), T(1), c2));
    auto l_map = div(affine(mu_xy, T(2), c1), affine(add(mu_xx, mu_yy), T(1), c1));
    return {channel_mean(cs_map), channel_mean(mul(l_map, cs_map))};
}

template <typename T>
Var<T> ssim_var(const Var<T>& x, const Var<T>& y) {
    x.value().require_same_shape(y.value(), "ssim");
    if (x.value().height() < SsimParams::window || x.value().width() < SsimParams::window)
        throw DimensionError("ssim needs at least " + std::to_string(SsimParams::window) + "x" +
                             std::to_string(SsimParams::window) + ", got " + shape_str(x.shape()));
    return mean(ssim_terms(x, y).ssim);
}

/// Multi-scale SSIM per channel, averaged over channels. Scales beyond what
/// the image supports are dropped and the remaining weights renormalized.
/// Negative per-scale terms are clamped to zero before exponentiation.
template <typename T>
Var<T> ms_ssim_var(const Var<T>& x, const Var<T>& y) {
    x.value().require_same_shape(y.value(), "ms_ssim");
    const int m = ms_ssim_scales(x.value().height(), x.value().width());
    if (m == 0)
        throw DimensionError("ms_ssim needs at least " + std::to_string(SsimParams::window) + "x" +
                             std::to_string(SsimParams::window) + ", got " + shape_str(x.shape()));
    double wsum = 0;
    for (int j = 0; j < m; ++j) wsum += SsimParams::ms_weights[static_cast<std::size_t>(j)];
    Var<T> prod;
    Var<T> xs = x, ys = y;
    for (int j = 0; j < m; ++j) {
        const T wj = static_cast<T>(SsimParams::ms_weights[static_cast<std::size_t>(j)] / wsum);
        auto terms = ssim_terms(xs, ys);
        auto factor = relu_pow(j + 1 < m ? terms.cs : terms.ssim, wj);
        prod = j == 0 ? factor : mul(prod, factor);
        if (j + 1 < m) {
            xs = avg_pool2(xs);
            ys = avg_pool2(ys);
        }
    }
    return mean(prod);
}

// ---------------------------------------------------------------------------
// Perceptual features

/// Frozen image -> feature map function. Input images are in [-1, 1];
/// each extractor maps them to its own input convention first.
template <typename T>
class FeatureExtractor {
public:
    virtual ~FeatureExtractor() = default;
    virtual std::string layer_tag() const = 0;
    virtual int min_size() const = 0;
    virtual Var<T> extract(const Var<T>& image) const = 0;

    Var<T> features(const Var<T>& image) const {
        const auto& v = image.value();
        if (v.height() < min_size() || v.width() < min_size())
            throw DimensionError("feature extractor '" + layer_tag() + "' needs at least " + std::to_string(min_size()) +
                                 " pixels per side, got " + shape_str(v.shape()));
        evaluations_.fetch_add(1, std::memory_order_relaxed);
        return extract(image);
    }

    std::uint64_t evaluations() const { return evaluations_.load(); }

private:
    mutable std::atomic<std::uint64_t> evaluations_{0};
};

/// Offline stand-in: fixed-seed random 3x3 convolutions on [0, 1] input,
/// conv(3->8) ReLU avgpool conv(8->8) ReLU, all valid.
template <typename T>
class RandomConvExtractor final : public FeatureExtractor<T> {
public:
    explicit RandomConvExtractor(std::uint64_t seed = 20200823) {
        auto make = [&](const std::string& name, Shape shape, int fan_in) {
            Tensor<T> t(std::move(shape));
            std::mt19937_64 g(splitmix64(seed ^ fnv1a(name)));
            const double b = std::sqrt(6.0 / fan_in);
            for (auto& v : t.vec()) v = static_cast<T>((2.0 * unit_uniform(g) - 1.0) * b);
            return Var<T>::constant(std::move(t));
        };
        w1_ = make("conv1", {8, 3, 3, 3}, 27);
        w2_ = make("conv2", {8, 8, 3, 3}, 72);
        b1_ = Var<T>::constant(Tensor<T>(Shape{8}, T(0.01)));
        b2_ = Var<T>::constant(Tensor<T>(Shape{8}, T(0.01)));
    }

    std::string layer_tag() const override { return "random_conv2"; }
    int min_size() const override { return 8; }

    Var<T> extract(const Var<T>& image) const override {
        auto x = affine(image, T(0.5), T(0.5));
        x = relu(conv2d(x, w1_, b1_, Padding::None));
        x = avg_pool2(x);
        return relu(conv2d(x, w2_, b2_, Padding::None));
    }

    const Tensor<T>& weight1() const { return w1_.value(); }
    const Tensor<T>& weight2() const { return w2_.value(); }
    const Tensor<T>& bias1() const { return b1_.value(); }
    const Tensor<T>& bias2() const { return b2_.value(); }

private:
    Var<T> w1_, b1_, w2_, b2_;
};

/// VGG-19 feature stack up to relu5_4 with ImageNet input normalization.
/// Weights are an external asset supplied as named tensors
/// ("features.<i>.weight" / "features.<i>.bias", torchvision indexing).
template <typename T>
class Vgg19Extractor final : public FeatureExtractor<T> {
public:
    static constexpr std::array<int, 16> widths{64, 64, 128, 128, 256, 256, 256, 256, 512, 512, 512, 512, 512, 512, 512, 512};

    /// Shapes expected for each conv, in stack order, with torchvision names.
    static std::vector<std::pair<std::string, Shape>> expected_shapes() {
        std::vector<std::pair<std::string, Shape>> out;
        int idx = 0, in = 3;
        for (std::size_t i = 0; i < widths.size(); ++i) {
            out.push_back({"features." + std::to_string(idx) + ".weight", {widths[i], in, 3, 3}});
            out.push_back({"features." + std::to_string(idx) + ".bias", {widths[i]}});
            in = widths[i];
            idx += 2;
            if (i == 1 || i == 3 || i == 7 || i == 11) ++idx;  // max-pool slots
        }
        return out;
    }

    explicit Vgg19Extractor(const std::map<std::string, Tensor<T>>& weights) {
        for (const auto& [name, shape] : expected_shapes()) {
            auto it = weights.find(name);
            if (it == weights.end()) throw ConfigError("VGG-19 weights missing '" + name + "'");
            if (it->second.shape() != shape)
                throw ConfigError("VGG-19 weight '" + name + "' has shape " + shape_str(it->second.shape()));
            layers_.push_back(Var<T>::constant(it->second));
        }
    }

    std::string layer_tag() const override { return "relu5_4"; }
    int min_size() const override { return 16; }

    Var<T> extract(const Var<T>& image) const override {
        static constexpr std::array<double, 3> mean{0.485, 0.456, 0.406};
        static constexpr std::array<double, 3> stdev{0.229, 0.224, 0.225};
        const auto& v = image.value();
        if (v.height() % 16 || v.width() % 16) throw DimensionError("VGG-19 input must be divisible by 16");
        // per-channel affine: (x * 0.5 + 0.5 - mean) / std
        Tensor<T> scale = Tensor<T>::chw(3, 1, 1), shift = Tensor<T>::chw(3, 1, 1);
        for (int c = 0; c < 3; ++c) {
            scale[static_cast<std::size_t>(c)] = static_cast<T>(0.5 / stdev[static_cast<std::size_t>(c)]);
            shift[static_cast<std::size_t>(c)] = static_cast<T>((0.5 - mean[static_cast<std::size_t>(c)]) / stdev[static_cast<std::size_t>(c)]);
        }
        auto x = channel_scale(image, Var<T>::constant(scale));
        Tensor<T> shift_map(v.shape());
        for (int c = 0; c < 3; ++c)
            std::fill(shift_map.channel_ptr(c), shift_map.channel_ptr(c) + shift_map.plane(), shift[static_cast<std::size_t>(c)]);
        x = add(x, Var<T>::constant(std::move(shift_map)));
        for (std::size_t i = 0; i < widths.size(); ++i) {
            x = relu(conv2d(x, layers_[2 * i], layers_[2 * i + 1], Padding::Zero));
            if (i == 1 || i == 3 || i == 7 || i == 11) x = max_pool2(x);
        }
        return x;
    }

private:
    std::vector<Var<T>> layers_;
};

template <typename T>
Var<T> perceptual_loss(const Var<T>& pred, const Var<T>& target, const FeatureExtractor<T>& fx) {
    pred.value().require_same_shape(target.value(), "perceptual_loss");
    return mse_loss(fx.features(pred), fx.features(target));
}

// ---------------------------------------------------------------------------
// Composite loss

template <typename T>
struct LossTerms {
    Var<T> total;
    LossWeights weights;
    double mse = 0.0;
    double vgg = 0.0;
    double msssim = 0.0;  // logged as 1 - MS-SSIM
};

/// lambda1 MSE + lambda2 perceptual + lambda3 (1 - MS-SSIM) at one level.
/// Terms with zero weight are not evaluated.
template <typename T>
LossTerms<T> composite_loss(const Var<T>& pred, const RgbImage<T>& target, const LossWeights& w,
                            const FeatureExtractor<T>* fx) {
    auto tgt = Var<T>::constant(target.values);
    LossTerms<T> out;
    out.weights = w;
    auto mse = mse_loss(pred, tgt);
    out.mse = static_cast<double>(mse.item());
    Var<T> total = affine(mse, static_cast<T>(w.mse));
    if (w.vgg > 0.0) {
        if (!fx) throw ConfigError("perceptual term requested without a feature extractor");
        auto p = perceptual_loss(pred, tgt, *fx);
        out.vgg = static_cast<double>(p.item());
        total = add(total, affine(p, static_cast<T>(w.vgg)));
    }
    if (w.msssim > 0.0) {
        auto ms = ms_ssim_var(affine(pred, T(0.5), T(0.5)), affine(tgt, T(0.5), T(0.5)));
        auto term = affine(ms, T(-1), T(1));
        out.msssim = static_cast<double>(term.item());
        total = add(total, affine(term, static_cast<T>(w.msssim)));
    }
    out.total = total;
    return out;
}

template <typename T>
LossTerms<T> composite_loss(const PyramidOutput<T>& pred, const std::map<int, RgbImage<T>>& targets, int level,
                            Track track, const FeatureExtractor<T>* fx) {
    if (!pred.has(level)) throw ContractError("prediction for level " + std::to_string(level) + " missing");
    auto it = targets.find(level);
    if (it == targets.end()) throw ContractError("target for level " + std::to_string(level) + " missing");
    return composite_loss(pred.at(level), it->second, loss_weights(level, track), fx);
}

}  // namespace pyramid_isp
