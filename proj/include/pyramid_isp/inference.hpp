#pragma once

#include <nlohmann/json.hpp>

#include <array>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <string>
#include <vector>

#include "pyramid_isp/dataset.hpp"
#include "pyramid_isp/model.hpp"
#include "pyramid_isp/png_io.hpp"

namespace pyramid_isp {

/// Element of the dihedral group D4: optional horizontal flip followed by
/// `rotation` quarter turns counter-clockwise.
struct GeoTransform {
    int rotation = 0;  // 0..3
    bool hflip = false;
    friend bool operator==(const GeoTransform&, const GeoTransform&) = default;
};

/// The eight transforms in the fixed ensemble order.
inline std::array<GeoTransform, 8> all_transforms() {
    std::array<GeoTransform, 8> out;
    for (int i = 0; i < 8; ++i) out[static_cast<std::size_t>(i)] = {i % 4, i >= 4};
    return out;
}

inline GeoTransform inverse(GeoTransform t) {
    if (t.hflip) return t;  // (R^r F)^2 = R^r R^-r F F = I
    return {(4 - t.rotation) % 4, false};
}

/// compose(a, b) applies b first, then a.
inline GeoTransform compose(GeoTransform a, GeoTransform b) {
    const int r = a.rotation + (a.hflip ? -b.rotation : b.rotation);
    return {((r % 4) + 4) % 4, a.hflip != b.hflip};
}

namespace detail {

/// Applies t to every plane of a (C, H, W) tensor.
template <typename V>
Tensor<V> transform_planes(const Tensor<V>& x, GeoTransform t) {
    Tensor<V> cur = x;
    if (t.hflip) {
        Tensor<V> out(cur.shape());
        for (int c = 0; c < cur.channels(); ++c)
            for (int y = 0; y < cur.height(); ++y)
                for (int xx = 0; xx < cur.width(); ++xx) out.at(c, y, cur.width() - 1 - xx) = cur.at(c, y, xx);
        cur = std::move(out);
    }
    for (int r = 0; r < t.rotation; ++r) {
        const int h = cur.height(), w = cur.width();
        Tensor<V> out = Tensor<V>::chw(cur.channels(), w, h);
        for (int c = 0; c < cur.channels(); ++c)
            for (int y = 0; y < h; ++y)
                for (int xx = 0; xx < w; ++xx) out.at(c, w - 1 - xx, y) = cur.at(c, y, xx);
        cur = std::move(out);
    }
    return cur;
}

}  // namespace detail

/// Packed-channel permutation for t: result[new] = old. Follows each
/// channel's (row, col) cell offset through the flip and rotations:
/// flip maps (dy, dx) -> (dy, 1-dx), a quarter turn maps (dy, dx) -> (1-dx, dy).
inline std::array<int, 4> packed_permutation(GeoTransform t) {
    std::array<int, 4> perm{};
    for (int c = 0; c < 4; ++c) {
        int dy = c / 2, dx = c % 2;
        if (t.hflip) dx = 1 - dx;
        for (int r = 0; r < t.rotation; ++r) {
            const int ny = 1 - dx, nx = dy;
            dy = ny;
            dx = nx;
        }
        perm[static_cast<std::size_t>(2 * dy + dx)] = c;
    }
    return perm;
}

inline const std::array<std::array<int, 4>, 8>& packed_permutation_table() {
    static const auto table = [] {
        std::array<std::array<int, 4>, 8> t{};
        const auto all = all_transforms();
        for (std::size_t i = 0; i < 8; ++i) t[i] = packed_permutation(all[i]);
        return t;
    }();
    return table;
}

inline std::size_t transform_index(GeoTransform t) { return static_cast<std::size_t>(t.rotation + (t.hflip ? 4 : 0)); }

/// Equals pack_bayer(transform_mosaic(unpack(raw), t)): a spatial transform
/// of each channel plus a channel permutation, with the pattern updated.
template <typename T>
PackedRaw<T> transform_packed(const PackedRaw<T>& raw, GeoTransform t) {
    const auto moved = detail::transform_planes(raw.values, t);
    const auto& perm = packed_permutation_table()[transform_index(t)];
    PackedRaw<T> out{Tensor<T>(moved.shape()), raw.pattern};
    const auto layout = pattern_layout(raw.pattern);
    std::array<char, 4> new_layout{};
    for (int c = 0; c < 4; ++c) {
        const int src = perm[static_cast<std::size_t>(c)];
        std::copy(moved.channel_ptr(src), moved.channel_ptr(src) + moved.plane(), out.values.channel_ptr(c));
        new_layout[static_cast<std::size_t>(c)] = layout[static_cast<std::size_t>(src)];
    }
    out.pattern = pattern_from_layout(new_layout);
    return out;
}

template <typename T>
RgbImage<T> transform_rgb(const RgbImage<T>& img, GeoTransform t) {
    return {detail::transform_planes(img.values, t)};
}

/// Applies t to the full-resolution mosaic; the pattern tag is re-read from
/// the new top-left cell.
inline RawMosaic transform_mosaic(const RawMosaic& m, GeoTransform t) {
    Tensor<double> plane = Tensor<double>::chw(1, m.height, m.width);
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x) plane.at(0, y, x) = m.at(y, x);
    Tensor<double> colour = Tensor<double>::chw(1, m.height, m.width);
    const auto layout = pattern_layout(m.pattern);
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x) colour.at(0, y, x) = layout[static_cast<std::size_t>(2 * (y % 2) + x % 2)];
    const auto p = detail::transform_planes(plane, t);
    const auto c = detail::transform_planes(colour, t);
    RawMosaic out{p.height(), p.width(), m.bit_depth, m.pattern, std::vector<std::uint16_t>(p.size())};
    for (std::size_t i = 0; i < p.size(); ++i) out.pixels[i] = static_cast<std::uint16_t>(p[i]);
    out.pattern = pattern_from_layout({static_cast<char>(c.at(0, 0, 0)), static_cast<char>(c.at(0, 0, 1)),
                                       static_cast<char>(c.at(0, 1, 0)), static_cast<char>(c.at(0, 1, 1))});
    return out;
}

/// Any image-to-image function at full resolution; lets tests substitute
/// analytic stand-ins for the network.
template <typename T>
using Predictor = std::function<RgbImage<T>(const PackedRaw<T>&)>;

template <typename T>
Predictor<T> model_predictor(const PyNetCA<T>& model) {
    return [&model](const PackedRaw<T>& raw) { return model.forward(raw, 0).image(0); };
}

/// Single shot, or the mean over the eight transforms of the
/// inverse-transformed outputs, summed in the fixed transform order.
template <typename T>
RgbImage<T> predict(const PackedRaw<T>& raw, const Predictor<T>& f, bool ensemble, unsigned workers = 1) {
    if (!ensemble) return f(raw);
    const auto ts = all_transforms();
    std::array<RgbImage<T>, 8> outs;
    if (workers > 1) {
        std::array<std::future<RgbImage<T>>, 8> futs;
        for (std::size_t i = 0; i < 8; ++i)
            futs[i] = std::async(std::launch::async, [&, i] { return transform_rgb(f(transform_packed(raw, ts[i])), inverse(ts[i])); });
        for (std::size_t i = 0; i < 8; ++i) outs[i] = futs[i].get();
    } else {
        for (std::size_t i = 0; i < 8; ++i) outs[i] = transform_rgb(f(transform_packed(raw, ts[i])), inverse(ts[i]));
    }
    RgbImage<T> acc{outs[0].values};
    for (std::size_t i = 1; i < 8; ++i) acc.values += outs[i].values;
    for (auto& v : acc.values.vec()) v /= T(8);
    return acc;
}

template <typename T>
RgbImage<T> predict(const PackedRaw<T>& raw, const PyNetCA<T>& model, bool ensemble, unsigned workers = 1) {
    return predict(raw, model_predictor(model), ensemble, workers);
}

struct InferSummary {
    int count_ok = 0;
    int count_failed = 0;
    double seconds = 0.0;
    bool ensemble = false;
    std::vector<std::pair<std::string, std::string>> failures;  // id, reason
};

inline nlohmann::json to_json_value(const InferSummary& s) {
    nlohmann::json f = nlohmann::json::array();
    for (const auto& [id, why] : s.failures) f.push_back({{"id", id}, {"error", why}});
    return {{"count_ok", s.count_ok}, {"count_failed", s.count_failed}, {"seconds", s.seconds}, {"ensemble", s.ensemble},
            {"failures", f}};
}

/// Predicts every active pair's raw input and writes `<id>.png` into
/// out_dir. Unreadable or wrongly sized inputs are skipped and reported.
template <typename T>
InferSummary infer_batch(const DatasetManifest& manifest, const PyNetCA<T>& model, const std::filesystem::path& out_dir,
                         bool ensemble, unsigned workers = 1) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    {
        const auto probe = out_dir / ".write_probe";
        std::ofstream os(probe);
        if (ec || !os) throw IoError("output directory '" + out_dir.string() + "' is not writable");
        os.close();
        std::filesystem::remove(probe, ec);
    }
    InferSummary s;
    s.ensemble = ensemble;
    const auto t0 = std::chrono::steady_clock::now();
    for (const auto& pair : manifest.active()) {
        try {
            const auto mosaic = png::read_mosaic(pair.raw_path, manifest.bit_depth, manifest.pattern);
            if (mosaic.height > manifest.patch_size || mosaic.width > manifest.patch_size)
                throw DimensionError("input " + std::to_string(mosaic.height) + "x" + std::to_string(mosaic.width) +
                                     " exceeds patch size " + std::to_string(manifest.patch_size) + "; tiling is not supported");
            const auto out = predict(pack_bayer<T>(mosaic), model, ensemble, workers);
            png::write_rgb8(out_dir / (pair.id + ".png"), denormalize_rgb(out));
            ++s.count_ok;
        } catch (const Error& e) {
            ++s.count_failed;
            s.failures.emplace_back(pair.id, e.what());
        }
    }
    s.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return s;
}

}  // namespace pyramid_isp
