#pragma once

#include <nlohmann/json.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "pyramid_isp/model.hpp"

namespace pyramid_isp {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

/// Single-file container: magic, format version, a JSON header and named
/// float64 arrays. Parameters round-trip bit-exactly from float or double.
struct Checkpoint {
    static constexpr char magic[8] = {'P', 'Y', 'I', 'S', 'P', 'C', 'K', '\0'};
    static constexpr std::uint32_t version = 1;

    nlohmann::json header;
    std::map<std::string, Tensor<double>> arrays;
};

namespace detail {

template <typename V>
void put(std::ostream& os, V v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V get(std::istream& is, const std::string& path) {
    V v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(V))) throw IoError("truncated checkpoint '" + path + "'");
    return v;
}

/// Writes to a sibling temp file and renames over the target.
template <typename Fn>
void write_atomically(const std::filesystem::path& path, Fn&& write) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw IoError("cannot open '" + tmp.string() + "' for writing");
        write(os);
        os.flush();
        if (!os) throw IoError("failed writing '" + tmp.string() + "'");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot rename '" + tmp.string() + "' to '" + path.string() + "': " + ec.message());
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
    detail::write_atomically(path, [&](std::ostream& os) {
        os.write(Checkpoint::magic, sizeof(Checkpoint::magic));
        detail::put<std::uint32_t>(os, Checkpoint::version);
        const std::string hdr = ck.header.dump();
        detail::put<std::uint64_t>(os, hdr.size());
        os.write(hdr.data(), static_cast<std::streamsize>(hdr.size()));
        detail::put<std::uint64_t>(os, ck.arrays.size());
        for (const auto& [name, t] : ck.arrays) {
            detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
            os.write(name.data(), static_cast<std::streamsize>(name.size()));
            detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
            for (int d : t.shape()) detail::put<std::int64_t>(os, d);
            os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
        }
    });
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    const std::string p = path.string();
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint '" + p + "'");
    char m[8];
    if (!is.read(m, 8) || std::memcmp(m, Checkpoint::magic, 8) != 0) throw IoError("'" + p + "' is not a checkpoint");
    const auto ver = detail::get<std::uint32_t>(is, p);
    if (ver != Checkpoint::version) throw IoError("checkpoint '" + p + "' has unsupported version " + std::to_string(ver));
    Checkpoint ck;
    const auto hlen = detail::get<std::uint64_t>(is, p);
    std::string hdr(hlen, '\0');
    if (!is.read(hdr.data(), static_cast<std::streamsize>(hlen))) throw IoError("truncated checkpoint '" + p + "'");
    try {
        ck.header = nlohmann::json::parse(hdr);
    } catch (const nlohmann::json::exception& e) {
        throw IoError("checkpoint '" + p + "' header: " + e.what());
    }
    const auto n = detail::get<std::uint64_t>(is, p);
    for (std::uint64_t i = 0; i < n; ++i) {
        const auto len = detail::get<std::uint32_t>(is, p);
        std::string name(len, '\0');
        if (!is.read(name.data(), len)) throw IoError("truncated checkpoint '" + p + "'");
        const auto rank = detail::get<std::uint32_t>(is, p);
        if (rank > 8) throw IoError("checkpoint '" + p + "': bad rank for '" + name + "'");
        Shape shape(rank);
        for (auto& d : shape) {
            const auto v = detail::get<std::int64_t>(is, p);
            if (v < 0 || v > (1 << 28)) throw IoError("checkpoint '" + p + "': bad dimension for '" + name + "'");
            d = static_cast<int>(v);
        }
        Tensor<double> t(shape);
        if (!is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double))))
            throw IoError("truncated checkpoint '" + p + "'");
        ck.arrays.emplace(std::move(name), std::move(t));
    }
    return ck;
}

template <typename T>
Checkpoint make_model_checkpoint(const PyNetCA<T>& model) {
    Checkpoint ck;
    ck.header = {{"kind", "model"}, {"model_config", model.config()}};
    for (const auto& [name, v] : model.params()) ck.arrays.emplace(name, v.value().template cast<double>());
    return ck;
}

template <typename T>
void save_model(const std::filesystem::path& path, const PyNetCA<T>& model) {
    save_checkpoint(path, make_model_checkpoint(model));
}

inline ModelConfig checkpoint_config(const Checkpoint& ck) {
    try {
        return ck.header.at("model_config").get<ModelConfig>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("checkpoint model config: ") + e.what());
    }
}

/// Builds a model for `cfg` from the named arrays. Arrays that `cfg` does
/// not declare are ignored; declared names that are absent raise a
/// ConfigError listing every missing key.
template <typename T>
PyNetCA<T> model_from_arrays(const ModelConfig& cfg, const std::map<std::string, Tensor<double>>& arrays) {
    ParameterSet<T> ps;
    for (const auto& s : declare_parameters(cfg)) {
        auto it = arrays.find(s.name);
        if (it != arrays.end()) ps.add(s.name, it->second.template cast<T>());
    }
    return PyNetCA<T>(cfg, std::move(ps));
}

template <typename T>
PyNetCA<T> load_model(const std::filesystem::path& path) {
    auto ck = load_checkpoint(path);
    auto cfg = checkpoint_config(ck);
    cfg.validate();
    return model_from_arrays<T>(cfg, ck.arrays);
}

/// Loads a checkpoint into a model of a possibly different variant.
template <typename T>
PyNetCA<T> load_model_as(const std::filesystem::path& path, const ModelConfig& cfg) {
    return model_from_arrays<T>(cfg, load_checkpoint(path).arrays);
}

}  // namespace pyramid_isp
