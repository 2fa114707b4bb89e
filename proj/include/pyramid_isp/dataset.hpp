#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "pyramid_isp/bayer.hpp"
#include "pyramid_isp/image.hpp"
#include "pyramid_isp/parameters.hpp"
#include "pyramid_isp/png_io.hpp"

namespace pyramid_isp {

namespace fs = std::filesystem;

struct SamplePair {
    std::string id;
    fs::path raw_path;
    fs::path rgb_path;
    bool excluded = false;
    friend bool operator==(const SamplePair&, const SamplePair&) = default;
};

struct DatasetManifest {
    std::vector<SamplePair> pairs;  // sorted by id
    std::string split = "train";
    int patch_size = 448;
    int bit_depth = 10;
    BayerPattern pattern = BayerPattern::RGGB;

    std::vector<SamplePair> active() const {
        std::vector<SamplePair> out;
        for (const auto& p : pairs)
            if (!p.excluded) out.push_back(p);
        return out;
    }
    std::vector<std::string> excluded_ids() const {
        std::vector<std::string> out;
        for (const auto& p : pairs)
            if (p.excluded) out.push_back(p.id);
        return out;
    }
    friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

inline void to_json(nlohmann::json& j, const DatasetManifest& m) {
    nlohmann::json pairs = nlohmann::json::array();
    for (const auto& p : m.pairs)
        pairs.push_back({{"id", p.id}, {"raw_path", p.raw_path.generic_string()}, {"rgb_path", p.rgb_path.generic_string()},
                         {"excluded", p.excluded}});
    j = {{"split", m.split},
         {"patch_size", m.patch_size},
         {"bit_depth", m.bit_depth},
         {"pattern", std::string(to_string(m.pattern))},
         {"pairs", pairs}};
}

inline void from_json(const nlohmann::json& j, DatasetManifest& m) {
    m.split = j.at("split").get<std::string>();
    m.patch_size = j.at("patch_size").get<int>();
    m.bit_depth = j.at("bit_depth").get<int>();
    m.pattern = parse_bayer_pattern(j.at("pattern").get<std::string>());
    m.pairs.clear();
    for (const auto& p : j.at("pairs"))
        m.pairs.push_back({p.at("id").get<std::string>(), fs::path(p.at("raw_path").get<std::string>()),
                           fs::path(p.at("rgb_path").get<std::string>()), p.at("excluded").get<bool>()});
}

inline void save_manifest(const fs::path& path, const DatasetManifest& m) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot write manifest '" + path.string() + "'");
    os << nlohmann::json(m).dump(2) << '\n';
    if (!os) throw IoError("failed writing manifest '" + path.string() + "'");
}

inline DatasetManifest read_manifest(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open manifest '" + path.string() + "'");
    try {
        return nlohmann::json::parse(is).get<DatasetManifest>();
    } catch (const nlohmann::json::exception& e) {
        throw ManifestError("'" + path.string() + "': " + e.what());
    } catch (const ValidationError& e) {
        throw ManifestError("'" + path.string() + "': " + e.what());
    }
}

/// Sample ids: letters, digits, '.', '_' and '-'.
inline bool valid_sample_id(std::string_view id) {
    return !id.empty() && std::all_of(id.begin(), id.end(), [](unsigned char c) {
        return std::isalnum(c) || c == '.' || c == '_' || c == '-';
    });
}

/// One id per line; '#' starts a comment; blank lines ignored.
inline std::vector<std::string> parse_exclusion_list(std::istream& is) {
    std::vector<std::string> ids;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
        auto b = line.find_first_not_of(" \t\r");
        if (b == std::string::npos) continue;
        auto e = line.find_last_not_of(" \t\r");
        std::string id = line.substr(b, e - b + 1);
        if (!valid_sample_id(id)) throw ParseError("malformed sample id '" + id + "'", lineno);
        ids.push_back(std::move(id));
    }
    return ids;
}

inline std::vector<std::string> read_exclusion_file(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open exclusion file '" + path.string() + "'");
    return parse_exclusion_list(is);
}

struct ManifestOptions {
    std::string split = "train";
    int patch_size = 448;
    int bit_depth = 10;
    BayerPattern pattern = BayerPattern::RGGB;
};

struct ManifestLoad {
    DatasetManifest manifest;
    std::vector<std::string> warnings;
};

/// Scans `<root>/<split>/raw/*.png` and `<root>/<split>/rgb/*.png`.
inline ManifestLoad load_manifest(const fs::path& root, const std::optional<fs::path>& exclusion_file,
                                  const ManifestOptions& opt = {}) {
    if (opt.patch_size <= 0 || opt.patch_size % 2) throw ConfigError("patch_size must be positive and even");
    const fs::path raw_dir = root / opt.split / "raw", rgb_dir = root / opt.split / "rgb";
    for (const auto& d : {raw_dir, rgb_dir})
        if (!fs::is_directory(d)) throw ManifestError("missing directory '" + d.string() + "'");

    auto scan = [](const fs::path& dir) {
        std::set<std::string> ids;
        for (const auto& e : fs::directory_iterator(dir))
            if (e.is_regular_file() && e.path().extension() == ".png") ids.insert(e.path().stem().string());
        return ids;
    };
    const auto raw_ids = scan(raw_dir), rgb_ids = scan(rgb_dir);
    for (const auto& id : raw_ids)
        if (!rgb_ids.count(id)) throw ManifestError("sample '" + id + "' has no rgb counterpart in '" + rgb_dir.string() + "'");
    for (const auto& id : rgb_ids)
        if (!raw_ids.count(id)) throw ManifestError("sample '" + id + "' has no raw counterpart in '" + raw_dir.string() + "'");

    ManifestLoad out;
    auto& m = out.manifest;
    m.split = opt.split;
    m.patch_size = opt.patch_size;
    m.bit_depth = opt.bit_depth;
    m.pattern = opt.pattern;
    for (const auto& id : raw_ids) m.pairs.push_back({id, raw_dir / (id + ".png"), rgb_dir / (id + ".png"), false});

    if (exclusion_file) {
        for (const auto& id : read_exclusion_file(*exclusion_file)) {
            auto it = std::find_if(m.pairs.begin(), m.pairs.end(), [&](const SamplePair& p) { return p.id == id; });
            if (it == m.pairs.end())
                out.warnings.push_back("excluded id '" + id + "' is not in the dataset");
            else
                it->excluded = true;
        }
    }
    if (m.active().empty()) throw ManifestError("no pairs left in '" + (root / opt.split).string() + "' after exclusion");
    return out;
}

// ---------------------------------------------------------------------------
// Samples and iteration

template <typename T>
struct Sample {
    std::string id;
    PackedRaw<T> raw;
    RgbImage<T> rgb;
};

template <typename T>
Sample<T> load_sample(const SamplePair& pair, const DatasetManifest& m) {
    auto mosaic = png::read_mosaic(pair.raw_path, m.bit_depth, m.pattern);
    auto rgb8 = png::read_rgb8(pair.rgb_path);
    if (rgb8.height != mosaic.height || rgb8.width != mosaic.width)
        throw DataError("sample '" + pair.id + "': rgb " + std::to_string(rgb8.height) + "x" + std::to_string(rgb8.width) +
                        " does not match raw " + std::to_string(mosaic.height) + "x" + std::to_string(mosaic.width));
    return {pair.id, pack_bayer<T>(mosaic), normalize_rgb<T>(rgb8)};
}

/// Indexed, read-only access to samples.
template <typename T>
class SampleSource {
public:
    virtual ~SampleSource() = default;
    virtual std::size_t size() const = 0;
    virtual Sample<T> load(std::size_t i) const = 0;
};

template <typename T>
class ManifestSource final : public SampleSource<T> {
public:
    explicit ManifestSource(DatasetManifest m) : manifest_(std::move(m)), pairs_(manifest_.active()) {}
    std::size_t size() const override { return pairs_.size(); }
    Sample<T> load(std::size_t i) const override { return load_sample<T>(pairs_.at(i), manifest_); }
    const DatasetManifest& manifest() const { return manifest_; }

private:
    DatasetManifest manifest_;
    std::vector<SamplePair> pairs_;
};

template <typename T>
class MemorySource final : public SampleSource<T> {
public:
    explicit MemorySource(std::vector<Sample<T>> s) : samples_(std::move(s)) {}
    std::size_t size() const override { return samples_.size(); }
    Sample<T> load(std::size_t i) const override { return samples_.at(i); }

private:
    std::vector<Sample<T>> samples_;
};

/// Visit order for one epoch. `stream` separates independent orderings
/// (the trainer passes the level) under the same seed.
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::uint64_t stream, std::uint64_t epoch,
                                            bool shuffle) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    if (!shuffle || n < 2) return idx;
    std::mt19937_64 g(splitmix64(seed ^ splitmix64(stream * 0x100000001B3ULL + epoch)));
    for (std::size_t i = n - 1; i > 0; --i) std::swap(idx[i], idx[static_cast<std::size_t>(g() % (i + 1))]);
    return idx;
}

/// Consecutive batches over one epoch, last one partial. With workers > 1
/// the samples of a batch are decoded concurrently and reassembled in order.
template <typename T>
class BatchIterator {
public:
    BatchIterator(const SampleSource<T>& src, std::size_t batch_size, std::uint64_t seed, bool shuffle,
                  std::uint64_t epoch = 0, std::uint64_t stream = 0, unsigned workers = 1)
        : src_(src), batch_size_(batch_size), workers_(std::max(1u, workers)) {
        if (batch_size < 1) throw ContractError("batch_size must be >= 1");
        order_ = epoch_order(src.size(), seed, stream, epoch, shuffle);
    }

    std::size_t batches() const { return (order_.size() + batch_size_ - 1) / batch_size_; }
    const std::vector<std::size_t>& order() const { return order_; }

    bool done() const { return pos_ >= order_.size(); }

    std::vector<Sample<T>> next() {
        if (done()) throw ContractError("batch iterator exhausted");
        const std::size_t end = std::min(order_.size(), pos_ + batch_size_);
        std::vector<Sample<T>> out;
        out.reserve(end - pos_);
        if (workers_ == 1) {
            for (std::size_t i = pos_; i < end; ++i) out.push_back(src_.load(order_[i]));
        } else {
            std::vector<std::future<Sample<T>>> futs;
            for (std::size_t i = pos_; i < end; ++i) {
                futs.push_back(std::async(std::launch::async, [this, k = order_[i]] { return src_.load(k); }));
                if (futs.size() == workers_) {
                    for (auto& f : futs) out.push_back(f.get());
                    futs.clear();
                }
            }
            for (auto& f : futs) out.push_back(f.get());
        }
        pos_ = end;
        return out;
    }

private:
    const SampleSource<T>& src_;
    std::size_t batch_size_;
    unsigned workers_;
    std::vector<std::size_t> order_;
    std::size_t pos_ = 0;
};

}  // namespace pyramid_isp
