#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cstdint>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "pyramid_isp/errors.hpp"

namespace pyramid_isp {

enum class HeadMode { SRM, UPSAMPLE_CONV };
enum class Variant { PYNET, PYNET_SRM, PYNET_CA };

inline std::string_view to_string(HeadMode m) { return m == HeadMode::SRM ? "srm" : "upsample_conv"; }

inline HeadMode parse_head_mode(std::string_view s) {
    if (s == "srm") return HeadMode::SRM;
    if (s == "upsample_conv") return HeadMode::UPSAMPLE_CONV;
    throw ConfigError("unknown head mode '" + std::string(s) + "'");
}

inline std::string_view to_string(Variant v) {
    switch (v) {
        case Variant::PYNET: return "pynet";
        case Variant::PYNET_SRM: return "pynet_srm";
        case Variant::PYNET_CA: return "pynet_ca";
    }
    return "?";
}

inline Variant parse_variant(std::string_view s) {
    if (s == "pynet") return Variant::PYNET;
    if (s == "pynet_srm") return Variant::PYNET_SRM;
    if (s == "pynet_ca") return Variant::PYNET_CA;
    throw ConfigError("unknown variant '" + std::string(s) + "' (expected pynet, pynet_srm or pynet_ca)");
}

/// Table row label for a variant.
inline std::string_view variant_label(Variant v) {
    switch (v) {
        case Variant::PYNET: return "PyNET";
        case Variant::PYNET_SRM: return "PyNET + SRM";
        case Variant::PYNET_CA: return "PyNET-CA";
    }
    return "?";
}

/// One MCCA block inside a pyramid level. Branch kernels run 3, 5, .. up to
/// `kernel`; the concatenated output has out_mult * level_width channels.
struct BlockSpec {
    int kernel = 3;
    int out_mult = 1;
    bool residual = false;
    int skip_from = -1;  // output of this earlier block is concatenated onto the input

    int branches() const { return (kernel - 1) / 2; }
    friend bool operator==(const BlockSpec&, const BlockSpec&) = default;
};

using LevelBlocks = std::vector<BlockSpec>;

/// Compact text form, e.g. "mcca3x4, mcca9x4+res, mcca3x1@0".
inline std::string format_blocks(const LevelBlocks& blocks) {
    std::ostringstream os;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        const auto& b = blocks[i];
        if (i) os << ", ";
        os << "mcca" << b.kernel << 'x' << b.out_mult;
        if (b.residual) os << "+res";
        if (b.skip_from >= 0) os << '@' << b.skip_from;
    }
    return os.str();
}

inline LevelBlocks parse_blocks(std::string_view text) {
    LevelBlocks out;
    std::string token;
    std::istringstream is{std::string(text)};
    while (std::getline(is, token, ',')) {
        token.erase(std::remove_if(token.begin(), token.end(), [](unsigned char c) { return std::isspace(c); }),
                    token.end());
        if (token.empty()) continue;
        BlockSpec b;
        int consumed = 0;
        if (std::sscanf(token.c_str(), "mcca%dx%d%n", &b.kernel, &b.out_mult, &consumed) != 2)
            throw ConfigError("bad block token '" + token + "'");
        std::string_view rest = std::string_view(token).substr(static_cast<std::size_t>(consumed));
        if (rest.starts_with("+res")) {
            b.residual = true;
            rest.remove_prefix(4);
        }
        if (rest.starts_with("@")) {
            b.skip_from = std::stoi(std::string(rest.substr(1)));
            rest = {};
        }
        if (!rest.empty()) throw ConfigError("bad block token '" + token + "'");
        out.push_back(b);
    }
    return out;
}

struct ModelConfig {
    int base_width = 32;
    bool use_channel_attention = true;
    HeadMode head_mode = HeadMode::SRM;
    std::set<int> norm_levels{2, 3};
    double leaky_slope = 0.2;
    std::uint64_t seed = 0;
    std::array<LevelBlocks, 6> blocks = default_blocks();  // index 1..5

    static std::array<LevelBlocks, 6> default_blocks() {
        return {LevelBlocks{},
                parse_blocks("mcca3x4, mcca9x4+res, mcca9x4+res, mcca7x3, mcca5x2, mcca3x1@0"),
                parse_blocks("mcca3x4, mcca9x4+res, mcca9x4+res, mcca5x1@0"),
                parse_blocks("mcca3x3, mcca7x3+res, mcca7x3+res, mcca3x1@0"),
                parse_blocks("mcca3x2, mcca5x2+res, mcca5x2+res, mcca3x1"),
                parse_blocks("mcca3x1+res, mcca3x1+res, mcca3x1+res, mcca3x1+res")};
    }

    /// MCCA9 inside the subpixel reconstruction head.
    static constexpr BlockSpec srm_block{9, 4, false, -1};

    static ModelConfig for_variant(Variant v, int base_width = 32) {
        ModelConfig c;
        c.base_width = base_width;
        c.use_channel_attention = v == Variant::PYNET_CA;
        c.head_mode = v == Variant::PYNET ? HeadMode::UPSAMPLE_CONV : HeadMode::SRM;
        return c;
    }

    Variant variant() const {
        if (head_mode == HeadMode::UPSAMPLE_CONV) return Variant::PYNET;
        return use_channel_attention ? Variant::PYNET_CA : Variant::PYNET_SRM;
    }

    int level_width(int level) const { return std::min(base_width << (level - 1), 512); }

    /// Channels entering the first block of level k: F_in alone at level 5,
    /// F_in concatenated with the upsampled prior below that.
    int level_input_channels(int level) const { return level == 5 ? level_width(5) : 2 * level_width(level); }

    void validate() const {
        if (base_width < 4 || base_width % 4) throw ConfigError("base_width must be >= 4 and divisible by 4");
        if (leaky_slope < 0.0 || leaky_slope >= 1.0) throw ConfigError("leaky_slope must lie in [0, 1)");
        for (int l : norm_levels)
            if (l < 1 || l > 5) throw ConfigError("norm level " + std::to_string(l) + " outside 1..5");
        for (int k = 1; k <= 5; ++k) validate_level(k);
    }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;

private:
    void validate_level(int k) const {
        const auto& bl = blocks[static_cast<std::size_t>(k)];
        const std::string where = "level " + std::to_string(k) + ": ";
        if (bl.empty()) throw ConfigError(where + "empty block table");
        const int w = level_width(k);
        std::vector<int> outs;
        for (std::size_t i = 0; i < bl.size(); ++i) {
            const auto& b = bl[i];
            const std::string at = where + "block " + std::to_string(i) + ": ";
            if (b.kernel != 3 && b.kernel != 5 && b.kernel != 7 && b.kernel != 9)
                throw ConfigError(at + "kernel must be 3, 5, 7 or 9");
            if (b.out_mult < 1) throw ConfigError(at + "out_mult must be >= 1");
            const int out = b.out_mult * w;
            if (out % b.branches()) throw ConfigError(at + "output width not divisible by branch count");
            int in = i == 0 ? level_input_channels(k) : outs.back();
            if (b.skip_from >= 0) {
                if (b.skip_from >= static_cast<int>(i)) throw ConfigError(at + "skip must come from an earlier block");
                in += outs[static_cast<std::size_t>(b.skip_from)];
            }
            if (b.residual && in != out)
                throw ConfigError(at + "residual needs matching widths (" + std::to_string(in) + " vs " +
                                  std::to_string(out) + ")");
            outs.push_back(out);
        }
        if (outs.back() != w) throw ConfigError(where + "last block must emit the level width");
    }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
    nlohmann::json blocks;
    for (int k = 1; k <= 5; ++k) blocks["level" + std::to_string(k)] = format_blocks(c.blocks[static_cast<std::size_t>(k)]);
    j = nlohmann::json{{"base_width", c.base_width},
                       {"use_channel_attention", c.use_channel_attention},
                       {"head_mode", std::string(to_string(c.head_mode))},
                       {"norm_levels", c.norm_levels},
                       {"leaky_slope", c.leaky_slope},
                       {"seed", c.seed},
                       {"blocks", blocks}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
    c.base_width = j.at("base_width").get<int>();
    c.use_channel_attention = j.at("use_channel_attention").get<bool>();
    c.head_mode = parse_head_mode(j.at("head_mode").get<std::string>());
    c.norm_levels = j.at("norm_levels").get<std::set<int>>();
    c.leaky_slope = j.at("leaky_slope").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    for (int k = 1; k <= 5; ++k)
        c.blocks[static_cast<std::size_t>(k)] = parse_blocks(j.at("blocks").at("level" + std::to_string(k)).get<std::string>());
}

}  // namespace pyramid_isp
