#pragma once

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "pyramid_isp/model_config.hpp"
#include "pyramid_isp/trainer.hpp"

namespace pyramid_isp {

struct DataConfig {
    std::string train_split = "train";
    std::string val_split = "val";
    int patch_size = 448;
    int bit_depth = 10;
    BayerPattern pattern = BayerPattern::RGGB;
    unsigned workers = 1;
    friend bool operator==(const DataConfig&, const DataConfig&) = default;
};

/// Everything a command needs. `variant` fixes the channel-attention and
/// head switches of `model`; `seed` feeds both the model and the plan.
struct RunConfig {
    Variant variant = Variant::PYNET_CA;
    std::uint64_t seed = 0;
    std::filesystem::path data_root = "data";
    std::optional<std::filesystem::path> exclusion_file;
    std::filesystem::path output_dir = "runs/default";
    DataConfig data;
    ModelConfig model;
    TrainPlan plan;

    /// Pushes variant and seed into the model and plan.
    void sync() {
        model.use_channel_attention = variant == Variant::PYNET_CA;
        model.head_mode = variant == Variant::PYNET ? HeadMode::UPSAMPLE_CONV : HeadMode::SRM;
        model.seed = seed;
        plan.seed = seed;
    }

    void set_track(Track t, bool level0_epochs_explicit) {
        plan.track = t;
        if (!level0_epochs_explicit) plan.epochs_per_level[0] = TrainPlan::for_track(t).epochs_per_level[0];
    }

    void validate() const {
        model.validate();
        plan.validate();
        if (data.patch_size <= 0 || data.patch_size % 32)
            throw ConfigError("patch_size must be a positive multiple of 32 (packed dims divisible by 16)");
        if (data.bit_depth < 1 || data.bit_depth > 16) throw ConfigError("bit_depth must lie in 1..16");
        if (data.workers < 1) throw ConfigError("workers must be >= 1");
        if (output_dir.empty()) throw ConfigError("output_dir must be set");
    }

    friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

namespace toml_detail {

inline std::string quote(const std::string& s) {
    std::string out = "\"";
    for (char c : s) {
        if (c == '"' || c == '\\') out += '\\';
        out += c;
    }
    return out + "\"";
}

inline std::string real(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

struct Value {
    std::string text;  // raw right-hand side
    int line = 0;
};

inline std::string strip_comment(const std::string& s) {
    bool in_str = false;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '\\' && in_str) {
            ++i;
            continue;
        }
        if (s[i] == '"') in_str = !in_str;
        if (s[i] == '#' && !in_str) return s.substr(0, i);
    }
    return s;
}

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

inline std::string err_at(int line, const std::string& msg) { return "line " + std::to_string(line) + ": " + msg; }

class Table {
public:
    explicit Table(std::map<std::string, Value> v) : values_(std::move(v)) {}

    bool has(const std::string& k) const { return values_.count(k) > 0; }

    std::string str(const std::string& k, const std::string& def) {
        auto v = take(k);
        if (!v) return def;
        const auto& t = v->text;
        if (t.size() < 2 || t.front() != '"' || t.back() != '"') throw ConfigError(err_at(v->line, k + " must be a string"));
        std::string out;
        for (std::size_t i = 1; i + 1 < t.size(); ++i) {
            if (t[i] == '\\' && i + 2 < t.size()) ++i;
            out += t[i];
        }
        return out;
    }

    template <typename N>
    N num(const std::string& k, N def) {
        auto v = take(k);
        if (!v) return def;
        return parse_num<N>(v->text, k, v->line);
    }

    bool boolean(const std::string& k, bool def) {
        auto v = take(k);
        if (!v) return def;
        if (v->text == "true") return true;
        if (v->text == "false") return false;
        throw ConfigError(err_at(v->line, k + " must be true or false"));
    }

    std::set<int> int_set(const std::string& k, const std::set<int>& def) {
        auto v = take(k);
        if (!v) return def;
        const auto& t = v->text;
        if (t.size() < 2 || t.front() != '[' || t.back() != ']') throw ConfigError(err_at(v->line, k + " must be an array"));
        std::set<int> out;
        std::istringstream is(t.substr(1, t.size() - 2));
        std::string item;
        while (std::getline(is, item, ',')) {
            item = trim(item);
            if (!item.empty()) out.insert(parse_num<int>(item, k, v->line));
        }
        return out;
    }

    /// Every key must have been consumed.
    void finish() const {
        for (const auto& [k, v] : values_)
            if (!used_.count(k)) throw ConfigError(err_at(v.line, "unknown key '" + k + "'"));
    }

private:
    template <typename N>
    static N parse_num(const std::string& t, const std::string& k, int line) {
        N out{};
        const auto* end = t.data() + t.size();
        auto [p, ec] = std::from_chars(t.data(), end, out);
        if (ec != std::errc() || p != end) throw ConfigError(err_at(line, k + ": bad number '" + t + "'"));
        return out;
    }

    std::optional<Value> take(const std::string& k) {
        auto it = values_.find(k);
        if (it == values_.end()) return std::nullopt;
        used_.insert(k);
        return it->second;
    }

    std::map<std::string, Value> values_;
    std::set<std::string> used_;
};

}  // namespace toml_detail

inline std::string serialize_config(const RunConfig& c) {
    using toml_detail::quote;
    using toml_detail::real;
    std::ostringstream os;
    os << "[run]\n"
       << "variant = " << quote(std::string(to_string(c.variant))) << '\n'
       << "seed = " << c.seed << '\n'
       << "data_root = " << quote(c.data_root.generic_string()) << '\n'
       << "exclusion_file = " << quote(c.exclusion_file ? c.exclusion_file->generic_string() : "") << '\n'
       << "output_dir = " << quote(c.output_dir.generic_string()) << "\n\n";
    os << "[data]\n"
       << "train_split = " << quote(c.data.train_split) << '\n'
       << "val_split = " << quote(c.data.val_split) << '\n'
       << "patch_size = " << c.data.patch_size << '\n'
       << "bit_depth = " << c.data.bit_depth << '\n'
       << "pattern = " << quote(std::string(to_string(c.data.pattern))) << '\n'
       << "workers = " << c.data.workers << "\n\n";
    os << "[model]\n"
       << "base_width = " << c.model.base_width << '\n'
       << "norm_levels = [";
    bool first = true;
    for (int l : c.model.norm_levels) {
        os << (first ? "" : ", ") << l;
        first = false;
    }
    os << "]\n"
       << "leaky_slope = " << real(c.model.leaky_slope) << "\n\n";
    os << "[model.blocks]\n";
    for (int k = 1; k <= 5; ++k)
        os << "level" << k << " = " << quote(format_blocks(c.model.blocks[static_cast<std::size_t>(k)])) << '\n';
    os << "\n[plan]\n"
       << "track = " << quote(std::string(to_string(c.plan.track))) << '\n'
       << "batch_size = " << c.plan.batch_size << '\n'
       << "lr_start = " << real(c.plan.lr.lr_start) << '\n'
       << "lr_max = " << real(c.plan.lr.lr_max) << '\n'
       << "lr_final = " << real(c.plan.lr.lr_final) << '\n'
       << "warmup_fraction = " << real(c.plan.lr.warmup_fraction) << '\n';
    for (int k = 5; k >= 0; --k) os << "epochs_level" << k << " = " << c.plan.epochs(k) << '\n';
    os << "selection_metric = "
       << quote(c.plan.selection_metric ? std::string(to_string(*c.plan.selection_metric)) : "auto") << '\n'
       << "lpips_plugin = " << quote(c.plan.lpips_plugin) << '\n';
    return os.str();
}

struct ParsedConfig {
    RunConfig config;
    bool level0_epochs_explicit = false;
};

/// Parses the TOML-style subset written by serialize_config: [section]
/// headers, `key = value` with strings, integers, reals, booleans and
/// integer arrays, '#' comments. Unknown keys are errors.
inline ParsedConfig parse_config_ex(const std::string& text) {
    using namespace toml_detail;
    std::map<std::string, std::map<std::string, Value>> sections;
    std::string section;
    std::istringstream is(text);
    std::string raw;
    int lineno = 0;
    while (std::getline(is, raw)) {
        ++lineno;
        const std::string line = trim(strip_comment(raw));
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError(err_at(lineno, "bad section header"));
            section = trim(line.substr(1, line.size() - 2));
            static const std::set<std::string> known{"run", "data", "model", "model.blocks", "plan"};
            if (!known.count(section)) throw ConfigError(err_at(lineno, "unknown section [" + section + "]"));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError(err_at(lineno, "expected key = value"));
        if (section.empty()) throw ConfigError(err_at(lineno, "key outside a section"));
        const std::string key = trim(line.substr(0, eq));
        if (sections[section].count(key)) throw ConfigError(err_at(lineno, "duplicate key '" + key + "'"));
        sections[section][key] = {trim(line.substr(eq + 1)), lineno};
    }

    ParsedConfig out;
    RunConfig& c = out.config;
    {
        Table t(sections["run"]);
        c.variant = parse_variant(t.str("variant", std::string(to_string(c.variant))));
        c.seed = t.num<std::uint64_t>("seed", c.seed);
        c.data_root = t.str("data_root", c.data_root.generic_string());
        const auto ex = t.str("exclusion_file", "");
        if (!ex.empty()) c.exclusion_file = ex;
        c.output_dir = t.str("output_dir", c.output_dir.generic_string());
        t.finish();
    }
    {
        Table t(sections["data"]);
        c.data.train_split = t.str("train_split", c.data.train_split);
        c.data.val_split = t.str("val_split", c.data.val_split);
        c.data.patch_size = t.num<int>("patch_size", c.data.patch_size);
        c.data.bit_depth = t.num<int>("bit_depth", c.data.bit_depth);
        try {
            c.data.pattern = parse_bayer_pattern(t.str("pattern", std::string(to_string(c.data.pattern))));
        } catch (const ValidationError& e) {
            throw ConfigError(e.what());
        }
        c.data.workers = t.num<unsigned>("workers", c.data.workers);
        t.finish();
    }
    {
        Table t(sections["model"]);
        c.model.base_width = t.num<int>("base_width", c.model.base_width);
        c.model.norm_levels = t.int_set("norm_levels", c.model.norm_levels);
        c.model.leaky_slope = t.num<double>("leaky_slope", c.model.leaky_slope);
        t.finish();
    }
    {
        Table t(sections["model.blocks"]);
        for (int k = 1; k <= 5; ++k) {
            const std::string key = "level" + std::to_string(k);
            if (t.has(key)) c.model.blocks[static_cast<std::size_t>(k)] = parse_blocks(t.str(key, ""));
        }
        t.finish();
    }
    {
        Table t(sections["plan"]);
        c.plan.track = parse_track(t.str("track", std::string(to_string(c.plan.track))));
        c.plan.batch_size = t.num<int>("batch_size", c.plan.batch_size);
        c.plan.lr.lr_start = t.num<double>("lr_start", c.plan.lr.lr_start);
        c.plan.lr.lr_max = t.num<double>("lr_max", c.plan.lr.lr_max);
        c.plan.lr.lr_final = t.num<double>("lr_final", c.plan.lr.lr_final);
        c.plan.lr.warmup_fraction = t.num<double>("warmup_fraction", c.plan.lr.warmup_fraction);
        out.level0_epochs_explicit = t.has("epochs_level0");
        if (!out.level0_epochs_explicit) c.plan.epochs_per_level[0] = TrainPlan::for_track(c.plan.track).epochs_per_level[0];
        for (int k = 0; k <= 5; ++k)
            c.plan.epochs_per_level[k] = t.num<int>("epochs_level" + std::to_string(k), c.plan.epochs_per_level[k]);
        const auto sel = t.str("selection_metric", "auto");
        if (sel == "auto")
            c.plan.selection_metric.reset();
        else
            c.plan.selection_metric = parse_selection_metric(sel);
        c.plan.lpips_plugin = t.str("lpips_plugin", "");
        t.finish();
    }
    c.sync();
    return out;
}

inline RunConfig parse_config(const std::string& text) { return parse_config_ex(text).config; }

inline ParsedConfig read_config_file(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config '" + path.string() + "'");
    std::ostringstream ss;
    ss << is.rdbuf();
    return parse_config_ex(ss.str());
}

}  // namespace pyramid_isp
