#pragma once

#include <array>
#include <atomic>
#include <cmath>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "pyramid_isp/bayer.hpp"
#include "pyramid_isp/image.hpp"
#include "pyramid_isp/model_config.hpp"
#include "pyramid_isp/nn_ops.hpp"
#include "pyramid_isp/parameters.hpp"

namespace pyramid_isp {

// ---------------------------------------------------------------------------
// Parameter declaration

enum class InitKind { ConvWeight, HeadWeight, LinearWeight, Zero, One };

struct ParamSpec {
    std::string name;
    Shape shape;
    InitKind init;
    int fan_in = 1;
};

namespace detail {

inline std::string level_prefix(int level) { return "level" + std::to_string(level); }

inline void declare_mcca(std::vector<ParamSpec>& out, const std::string& prefix, int in_ch, const BlockSpec& b,
                         int level_width, bool use_ca, bool norm) {
    const int out_ch = b.out_mult * level_width;
    const int bw = out_ch / b.branches();
    for (int k = 3; k <= b.kernel; k += 2) {
        const std::string p = prefix + "/dconv" + std::to_string(k);
        out.push_back({p + "/conv1.weight", {bw, in_ch, k, k}, InitKind::ConvWeight, in_ch * k * k});
        out.push_back({p + "/conv1.bias", {bw}, InitKind::Zero});
        out.push_back({p + "/conv2.weight", {bw, bw, k, k}, InitKind::ConvWeight, bw * k * k});
        out.push_back({p + "/conv2.bias", {bw}, InitKind::Zero});
        if (norm) {
            out.push_back({p + "/norm.gamma", {bw}, InitKind::One});
            out.push_back({p + "/norm.beta", {bw}, InitKind::Zero});
        }
    }
    if (use_ca) {
        const int hidden = out_ch / b.branches();
        const std::string p = prefix + "/attention";
        out.push_back({p + "/ca_fc1.weight", {hidden, out_ch}, InitKind::LinearWeight, out_ch});
        out.push_back({p + "/ca_fc1.bias", {hidden}, InitKind::Zero});
        out.push_back({p + "/ca_fc2.weight", {out_ch, hidden}, InitKind::LinearWeight, hidden});
        out.push_back({p + "/ca_fc2.bias", {out_ch}, InitKind::Zero});
    }
}

}  // namespace detail

/// Every parameter the configured network owns, in construction order.
inline std::vector<ParamSpec> declare_parameters(const ModelConfig& cfg) {
    cfg.validate();
    std::vector<ParamSpec> specs;
    const bool ca = cfg.use_channel_attention;
    for (int k = 1; k <= 5; ++k) {
        const int in_ch = k == 1 ? 4 : cfg.level_width(k - 1);
        detail::declare_mcca(specs, detail::level_prefix(k) + "/input", in_ch, BlockSpec{3, 1}, cfg.level_width(k), ca, false);
    }
    for (int k = 1; k <= 5; ++k) {
        const std::string lp = detail::level_prefix(k);
        const int w = cfg.level_width(k);
        if (k < 5) {
            const int wp = cfg.level_width(k + 1);
            specs.push_back({lp + "/upsample/deconv.weight", {wp, w, 2, 2}, InitKind::ConvWeight, wp});
            specs.push_back({lp + "/upsample/deconv.bias", {w}, InitKind::Zero});
        }
        const bool norm = cfg.norm_levels.count(k) > 0;
        const auto& bl = cfg.blocks[static_cast<std::size_t>(k)];
        std::vector<int> outs;
        for (std::size_t i = 0; i < bl.size(); ++i) {
            int in = i == 0 ? cfg.level_input_channels(k) : outs.back();
            if (bl[i].skip_from >= 0) in += outs[static_cast<std::size_t>(bl[i].skip_from)];
            detail::declare_mcca(specs, lp + "/block" + std::to_string(i), in, bl[i], w, ca, norm);
            outs.push_back(bl[i].out_mult * w);
        }
        specs.push_back({lp + "/head/conv.weight", {3, w, 3, 3}, InitKind::HeadWeight, w * 9});
        specs.push_back({lp + "/head/conv.bias", {3}, InitKind::Zero});
    }
    const int w1 = cfg.level_width(1);
    if (cfg.head_mode == HeadMode::SRM) {
        const BlockSpec& b = ModelConfig::srm_block;
        detail::declare_mcca(specs, "level0/srm", w1, b, w1, ca, false);
        const int c = b.out_mult * w1;
        specs.push_back({"level0/srm/conv1x1.weight", {12, c, 1, 1}, InitKind::HeadWeight, c});
        specs.push_back({"level0/srm/conv1x1.bias", {12}, InitKind::Zero});
    } else {
        specs.push_back({"level0/upconv/conv.weight", {3, w1, 3, 3}, InitKind::HeadWeight, w1 * 9});
        specs.push_back({"level0/upconv/conv.bias", {3}, InitKind::Zero});
    }
    return specs;
}

/// Deterministic in cfg.seed. Each parameter draws from its own stream keyed
/// by name, so variants sharing a name start from identical values.
template <typename T>
ParameterSet<T> init_parameters(const ModelConfig& cfg) {
    ParameterSet<T> ps;
    const double a = cfg.leaky_slope;
    for (const auto& s : declare_parameters(cfg)) {
        Tensor<T> t(s.shape);
        std::mt19937_64 gen(splitmix64(cfg.seed ^ fnv1a(s.name)));
        double bound = 0.0;
        switch (s.init) {
            case InitKind::ConvWeight: bound = std::sqrt(6.0 / ((1.0 + a * a) * s.fan_in)); break;
            case InitKind::HeadWeight: bound = 0.1 * std::sqrt(6.0 / ((1.0 + a * a) * s.fan_in)); break;
            case InitKind::LinearWeight: bound = 1.0 / std::sqrt(static_cast<double>(s.fan_in)); break;
            case InitKind::Zero: break;
            case InitKind::One: t.fill(T(1)); break;
        }
        if (bound > 0.0)
            for (auto& v : t.vec()) v = static_cast<T>((2.0 * unit_uniform(gen) - 1.0) * bound);
        ps.add(s.name, std::move(t));
    }
    return ps;
}

// ---------------------------------------------------------------------------
// Building blocks

/// Squeeze-and-excitation gate: GAP -> fc(c -> c/r) -> ReLU -> fc -> sigmoid -> scale.
template <typename T>
Var<T> channel_attention(const Var<T>& x, int reduction, const Var<T>& fc1_w, const Var<T>& fc1_b, const Var<T>& fc2_w,
                         const Var<T>& fc2_b) {
    const int c = x.value().channels();
    if (reduction < 1 || c % reduction)
        throw ConfigError("channel attention: " + std::to_string(c) + " channels not divisible by r=" + std::to_string(reduction));
    if (fc1_w.value().dim(0) != c / reduction)
        throw DimensionError("channel attention: hidden width " + std::to_string(fc1_w.value().dim(0)) + ", expected " +
                             std::to_string(c / reduction));
    auto pooled = channel_mean(x);
    auto hidden = relu(linear(pooled, fc1_w, fc1_b));
    auto gate = sigmoid(linear(hidden, fc2_w, fc2_b));
    return channel_scale(x, gate);
}

template <typename T>
Var<T> double_conv(const Var<T>& x, const ParameterSet<T>& ps, const std::string& prefix, bool apply_norm, T slope) {
    const int k = ps.get(prefix + "/conv1.weight").value().dim(2);
    const int pad = (k - 1) / 2;
    if (x.value().height() <= pad || x.value().width() <= pad)
        throw DimensionError("double_conv k=" + std::to_string(k) + " needs spatial dims > " + std::to_string(pad) +
                             ", got " + shape_str(x.shape()));
    auto y = leaky_relu(conv2d(x, ps.get(prefix + "/conv1.weight"), ps.get(prefix + "/conv1.bias"), Padding::Reflect), slope);
    y = conv2d(y, ps.get(prefix + "/conv2.weight"), ps.get(prefix + "/conv2.bias"), Padding::Reflect);
    if (apply_norm) y = instance_norm(y, ps.get(prefix + "/norm.gamma"), ps.get(prefix + "/norm.beta"));
    return leaky_relu(y, slope);
}

/// Parallel DoubleConv branches (3, 5, .. kernel), concatenated in ascending
/// kernel order, then gated by channel attention with r = branch count.
template <typename T>
Var<T> mcca(const Var<T>& x, const ParameterSet<T>& ps, const std::string& prefix, int kernel, bool use_ca,
            bool apply_norm, T slope) {
    std::vector<Var<T>> branches;
    for (int k = 3; k <= kernel; k += 2)
        branches.push_back(double_conv(x, ps, prefix + "/dconv" + std::to_string(k), apply_norm, slope));
    auto cat = branches.size() == 1 ? branches.front() : concat_channels(branches);
    if (!use_ca) return cat;
    const std::string p = prefix + "/attention";
    return channel_attention(cat, static_cast<int>(branches.size()), ps.get(p + "/ca_fc1.weight"),
                             ps.get(p + "/ca_fc1.bias"), ps.get(p + "/ca_fc2.weight"), ps.get(p + "/ca_fc2.bias"));
}

/// F_in^1 = MCCA3(raw), F_in^{k+1} = MCCA3(MaxPool2(F_in^k)). Index 0 unused.
template <typename T>
std::array<Var<T>, 6> build_inputs(const PackedRaw<T>& raw, const ParameterSet<T>& ps, const ModelConfig& cfg) {
    const auto& v = raw.values;
    if (v.rank() != 3 || v.channels() != 4) throw DimensionError("packed raw must be (4, h, w), got " + shape_str(v.shape()));
    if (v.height() % 16 || v.width() % 16)
        throw DimensionError("packed raw spatial dims must be divisible by 16, got " + shape_str(v.shape()));
    const T slope = static_cast<T>(cfg.leaky_slope);
    std::array<Var<T>, 6> f;
    f[1] = mcca(Var<T>::constant(v), ps, "level1/input", 3, cfg.use_channel_attention, false, slope);
    for (int k = 2; k <= 5; ++k)
        f[static_cast<std::size_t>(k)] = mcca(max_pool2(f[static_cast<std::size_t>(k - 1)]), ps,
                                              detail::level_prefix(k) + "/input", 3, cfg.use_channel_attention, false, slope);
    return f;
}

/// H^k: upsample the coarser prior, concatenate, run the level's block table.
template <typename T>
Var<T> level_process(int level, const Var<T>& f_in, const Var<T>* prior, const ParameterSet<T>& ps, const ModelConfig& cfg) {
    if ((level < 5) != (prior != nullptr)) throw ContractError("prior must be given exactly for levels below 5");
    const std::string lp = detail::level_prefix(level);
    Var<T> x = f_in;
    if (prior) {
        const auto& pv = prior->value();
        if (2 * pv.height() != f_in.value().height() || 2 * pv.width() != f_in.value().width())
            throw DimensionError("level " + std::to_string(level) + " prior " + shape_str(pv.shape()) +
                                 " is not half of " + shape_str(f_in.shape()));
        auto up = conv_transpose2x2(*prior, ps.get(lp + "/upsample/deconv.weight"), ps.get(lp + "/upsample/deconv.bias"));
        x = concat_channels<T>({f_in, up});
    }
    const T slope = static_cast<T>(cfg.leaky_slope);
    const bool norm = cfg.norm_levels.count(level) > 0;
    const auto& bl = cfg.blocks[static_cast<std::size_t>(level)];
    std::vector<Var<T>> outs;
    outs.reserve(bl.size());
    for (std::size_t i = 0; i < bl.size(); ++i) {
        Var<T> in = i == 0 ? x : outs.back();
        if (bl[i].skip_from >= 0) in = concat_channels<T>({in, outs[static_cast<std::size_t>(bl[i].skip_from)]});
        auto y = mcca(in, ps, lp + "/block" + std::to_string(i), bl[i].kernel, cfg.use_channel_attention, norm, slope);
        if (bl[i].residual) y = add(y, in);
        outs.push_back(std::move(y));
    }
    return outs.back();
}

/// tanh(Conv3(F_out^k)).
template <typename T>
Var<T> level_head(int level, const Var<T>& f_out, const ParameterSet<T>& ps) {
    const std::string p = detail::level_prefix(level) + "/head/conv";
    return tanh(conv2d(f_out, ps.get(p + ".weight"), ps.get(p + ".bias"), Padding::Reflect));
}

/// Full-resolution head: SRM (MCCA9 -> 1x1 conv to 12 -> subpixel shuffle ->
/// tanh) or the bilinear-upsample-then-3x3-conv head of the plain variant.
template <typename T>
Var<T> srm_head(const Var<T>& f_out1, const ParameterSet<T>& ps, const ModelConfig& cfg) {
    if (cfg.head_mode == HeadMode::UPSAMPLE_CONV) {
        auto up = bilinear_upsample2(f_out1);
        return tanh(conv2d(up, ps.get("level0/upconv/conv.weight"), ps.get("level0/upconv/conv.bias"), Padding::Reflect));
    }
    auto feat = mcca(f_out1, ps, "level0/srm", ModelConfig::srm_block.kernel, cfg.use_channel_attention, false,
                     static_cast<T>(cfg.leaky_slope));
    auto c12 = conv2d(feat, ps.get("level0/srm/conv1x1.weight"), ps.get("level0/srm/conv1x1.bias"), Padding::None);
    if (c12.value().channels() != 12)
        throw ConfigError("subpixel head needs 12 channels (4 x 3), got " + std::to_string(c12.value().channels()));
    return tanh(pixel_shuffle(c12));
}

/// Per-level RGB predictions (levels 1..5) and the full-resolution output.
template <typename T>
struct PyramidOutput {
    std::map<int, Var<T>> per_level;
    Var<T> full_res;

    bool has(int level) const { return level == 0 ? static_cast<bool>(full_res) : per_level.count(level) > 0; }

    const Var<T>& at(int level) const {
        if (!has(level)) throw ContractError("pyramid output has no level " + std::to_string(level));
        return level == 0 ? full_res : per_level.at(level);
    }

    RgbImage<T> image(int level) const { return {at(level).value()}; }
};

template <typename T>
PyramidOutput<T> forward(const PackedRaw<T>& raw, const ParameterSet<T>& ps, const ModelConfig& cfg, int highest_level) {
    if (highest_level < 0 || highest_level > 5) throw ContractError("highest_level must be in 0..5");
    const auto f_in = build_inputs(raw, ps, cfg);
    PyramidOutput<T> out;
    Var<T> prior;
    for (int k = 5; k >= std::max(1, highest_level); --k) {
        auto f_out = level_process(k, f_in[static_cast<std::size_t>(k)], k < 5 ? &prior : nullptr, ps, cfg);
        out.per_level[k] = level_head(k, f_out, ps);
        prior = std::move(f_out);
    }
    if (highest_level == 0) out.full_res = srm_head(prior, ps, cfg);
    return out;
}

/// The network: configuration plus parameters. Forward passes only read
/// parameters and may run concurrently; training mutates them exclusively.
template <typename T>
class PyNetCA {
public:
    explicit PyNetCA(const ModelConfig& cfg) : cfg_(cfg), params_(init_parameters<T>(cfg)) {}

    PyNetCA(const ModelConfig& cfg, ParameterSet<T> params) : cfg_(cfg), params_(std::move(params)) {
        std::vector<std::string> missing;
        for (const auto& s : declare_parameters(cfg_)) {
            if (!params_.contains(s.name))
                missing.push_back(s.name);
            else if (params_.get(s.name).value().shape() != s.shape)
                throw DimensionError("parameter '" + s.name + "' has shape " + shape_str(params_.get(s.name).value().shape()) +
                                     ", expected " + shape_str(s.shape));
        }
        if (!missing.empty()) {
            std::string msg = "missing parameters:";
            for (const auto& m : missing) msg += " " + m;
            throw ConfigError(msg);
        }
    }

    PyNetCA(const PyNetCA& o) : cfg_(o.cfg_), params_(o.params_.clone()), passes_(o.passes_.load()) {}

    const ModelConfig& config() const { return cfg_; }
    ParameterSet<T>& params() { return params_; }
    const ParameterSet<T>& params() const { return params_; }

    PyramidOutput<T> forward(const PackedRaw<T>& raw, int highest_level) const {
        passes_.fetch_add(1, std::memory_order_relaxed);
        return pyramid_isp::forward(raw, params_, cfg_, highest_level);
    }

    std::uint64_t forward_passes() const { return passes_.load(); }
    void reset_pass_counter() { passes_.store(0); }

private:
    ModelConfig cfg_;
    ParameterSet<T> params_;
    mutable std::atomic<std::uint64_t> passes_{0};
};

// ---------------------------------------------------------------------------
// Parameter / FLOP accounting

struct LevelCost {
    int level = 0;
    std::size_t params = 0;
    double macs = 0.0;
};

/// Parameter counts and multiply-accumulates per level for a mosaic of the
/// given size. Level 0 is the full-resolution head.
inline std::vector<LevelCost> model_costs(const ModelConfig& cfg, int mosaic_h, int mosaic_w) {
    std::vector<LevelCost> rows(6);
    for (int k = 0; k <= 5; ++k) rows[static_cast<std::size_t>(k)].level = k;
    auto pixels = [&](int level) { return static_cast<double>(mosaic_h >> level) * static_cast<double>(mosaic_w >> level); };
    for (const auto& s : declare_parameters(cfg)) {
        const int level = s.name[5] - '0';
        const std::size_t n = shape_numel(s.shape);
        auto& row = rows[static_cast<std::size_t>(level)];
        row.params += n;
        const bool weight = s.name.ends_with(".weight") && s.shape.size() == 4;
        if (!weight) continue;
        double px;
        if (s.name.find("/upsample/") != std::string::npos)
            px = pixels(level + 1);
        else if (s.name.starts_with("level0/upconv"))
            px = pixels(0);
        else if (s.name.starts_with("level0/srm"))
            px = pixels(1);
        else
            px = pixels(level);
        row.macs += static_cast<double>(n) * px;
    }
    return rows;
}

}  // namespace pyramid_isp
