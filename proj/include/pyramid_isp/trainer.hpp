#pragma once

#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "pyramid_isp/checkpoint.hpp"
#include "pyramid_isp/dataset.hpp"
#include "pyramid_isp/losses.hpp"
#include "pyramid_isp/metrics.hpp"
#include "pyramid_isp/optimizer.hpp"
#include "pyramid_isp/png_io.hpp"
#include "pyramid_isp/schedule.hpp"

namespace pyramid_isp {

enum class SelectionMetric { VAL_PSNR, VAL_LPIPS, VAL_NEG_MSSSIM };

inline std::string_view to_string(SelectionMetric m) {
    switch (m) {
        case SelectionMetric::VAL_PSNR: return "val_psnr";
        case SelectionMetric::VAL_LPIPS: return "val_lpips";
        case SelectionMetric::VAL_NEG_MSSSIM: return "val_neg_msssim";
    }
    return "?";
}

inline SelectionMetric parse_selection_metric(std::string_view s) {
    if (s == "val_psnr") return SelectionMetric::VAL_PSNR;
    if (s == "val_lpips") return SelectionMetric::VAL_LPIPS;
    if (s == "val_neg_msssim") return SelectionMetric::VAL_NEG_MSSSIM;
    throw ConfigError("unknown selection metric '" + std::string(s) + "'");
}

struct TrainPlan {
    std::map<int, int> epochs_per_level{{5, 16}, {4, 16}, {3, 16}, {2, 16}, {1, 16}, {0, 16}};
    Track track = Track::FIDELITY;
    int batch_size = 1;
    OneCycle lr;
    std::uint64_t seed = 0;
    std::optional<SelectionMetric> selection_metric;  // unset: derived from track and plugin
    std::string lpips_plugin;                         // executable path, empty for none

    static TrainPlan for_track(Track t) {
        TrainPlan p;
        p.track = t;
        if (t == Track::PERCEPTUAL) p.epochs_per_level[0] = 32;
        return p;
    }

    int epochs(int level) const {
        auto it = epochs_per_level.find(level);
        if (it == epochs_per_level.end()) throw ConfigError("no epoch count for level " + std::to_string(level));
        return it->second;
    }

    SelectionMetric effective_selection() const {
        if (selection_metric) return *selection_metric;
        if (track == Track::FIDELITY) return SelectionMetric::VAL_PSNR;
        return lpips_plugin.empty() ? SelectionMetric::VAL_NEG_MSSSIM : SelectionMetric::VAL_LPIPS;
    }

    void validate() const {
        lr.validate();
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        for (int k = 0; k <= 5; ++k)
            if (epochs(k) < 1) throw ConfigError("epochs for level " + std::to_string(k) + " must be >= 1");
        if (effective_selection() == SelectionMetric::VAL_LPIPS && lpips_plugin.empty())
            throw ConfigError("selection metric val_lpips needs an LPIPS plugin");
        if (!lpips_plugin.empty() && !std::filesystem::exists(lpips_plugin))
            throw ConfigError("LPIPS plugin '" + lpips_plugin + "' not found");
    }

    friend bool operator==(const TrainPlan& a, const TrainPlan& b) {
        return a.epochs_per_level == b.epochs_per_level && a.track == b.track && a.batch_size == b.batch_size &&
               a.lr.lr_start == b.lr.lr_start && a.lr.lr_max == b.lr.lr_max && a.lr.lr_final == b.lr.lr_final &&
               a.lr.warmup_fraction == b.lr.warmup_fraction && a.seed == b.seed &&
               a.selection_metric == b.selection_metric && a.lpips_plugin == b.lpips_plugin;
    }
};

/// Position in the progressive run. Batch order is a pure function of
/// (seed, level, epoch), so this plus parameters and optimizer moments is
/// enough to continue a run exactly.
struct TrainState {
    int current_level = 5;
    int epoch = 0;     // within current_level
    long batch = 0;    // within epoch
    long global_step = 0;
    double best_metric = -std::numeric_limits<double>::infinity();  // higher is better
    std::string best_checkpoint_path;
    std::uint64_t rng_state = 0;
    bool finished = false;
};

inline void to_json(nlohmann::json& j, const TrainState& s) {
    j = {{"current_level", s.current_level}, {"epoch", s.epoch},
         {"batch", s.batch},                 {"global_step", s.global_step},
         {"best_checkpoint_path", s.best_checkpoint_path},
         {"rng_state", s.rng_state},         {"finished", s.finished}};
    // JSON has no infinities; keep the sentinel explicit.
    if (std::isfinite(s.best_metric))
        j["best_metric"] = s.best_metric;
    else
        j["best_metric"] = s.best_metric > 0 ? "inf" : "-inf";
}

inline void from_json(const nlohmann::json& j, TrainState& s) {
    s.current_level = j.at("current_level").get<int>();
    s.epoch = j.at("epoch").get<int>();
    s.batch = j.at("batch").get<long>();
    s.global_step = j.at("global_step").get<long>();
    s.best_checkpoint_path = j.at("best_checkpoint_path").get<std::string>();
    s.rng_state = j.at("rng_state").get<std::uint64_t>();
    s.finished = j.at("finished").get<bool>();
    const auto& b = j.at("best_metric");
    if (b.is_string())
        s.best_metric = b.get<std::string>() == "inf" ? std::numeric_limits<double>::infinity()
                                                       : -std::numeric_limits<double>::infinity();
    else
        s.best_metric = b.get<double>();
}

/// JSON value for a metric; infinities become the strings "inf"/"-inf" and
/// NaN (metric not computable at this size) becomes null.
inline nlohmann::json metric_json(double v) {
    if (std::isnan(v)) return nullptr;
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    return v;
}

inline double metric_from_json(const nlohmann::json& j) {
    if (j.is_null()) return std::numeric_limits<double>::quiet_NaN();
    if (j.is_string()) {
        const auto s = j.get<std::string>();
        if (s == "inf") return std::numeric_limits<double>::infinity();
        if (s == "-inf") return -std::numeric_limits<double>::infinity();
        throw ParseError("bad metric value '" + s + "'", 0);
    }
    return j.get<double>();
}

/// Runs an external LPIPS executable: `plugin a.png b.png` prints a number.
inline double run_lpips_plugin(const std::string& plugin, const std::filesystem::path& a, const std::filesystem::path& b) {
    auto quote = [](const std::string& s) {
        std::string q = "'";
        for (char c : s) q += c == '\'' ? std::string("'\\''") : std::string(1, c);
        return q + "'";
    };
    const std::string cmd = quote(plugin) + " " + quote(a.string()) + " " + quote(b.string());
    std::FILE* p = ::popen(cmd.c_str(), "r");
    if (!p) throw Error("cannot run LPIPS plugin '" + plugin + "'");
    std::string out;
    char buf[256];
    while (std::fgets(buf, sizeof buf, p)) out += buf;
    const int rc = ::pclose(p);
    if (rc != 0) throw Error("LPIPS plugin '" + plugin + "' exited with status " + std::to_string(rc));
    try {
        return std::stod(out);
    } catch (const std::exception&) {
        throw Error("LPIPS plugin '" + plugin + "' printed '" + out + "'");
    }
}

struct ValidationMetrics {
    double psnr = 0, ssim = 0, msssim = 0;
    double lpips = std::numeric_limits<double>::quiet_NaN();
};

struct TrainerOptions {
    std::filesystem::path output_dir;
    long stop_after_global_step = -1;  // >= 0: save state and stop once this many steps are done
    unsigned workers = 1;
    std::function<void(const std::string&)> on_log;  // receives each NDJSON record
};

/// Progressive trainer. Owns exclusive write access to the model.
template <typename T>
class Trainer {
public:
    Trainer(PyNetCA<T>& model, TrainPlan plan, const SampleSource<T>& train, const SampleSource<T>& val,
            const FeatureExtractor<T>* fx, TrainerOptions opt)
        : model_(model), plan_(std::move(plan)), train_(train), val_(val), fx_(fx), opt_(std::move(opt)) {
        plan_.validate();
        if (train_.size() == 0) throw ConfigError("training set is empty");
        if (val_.size() == 0) throw ConfigError("validation set is empty");
        if (!fx_) throw ConfigError("trainer needs a feature extractor for the perceptual term");
        std::filesystem::create_directories(opt_.output_dir);
        state_.rng_state = plan_.seed;
        log_.open(opt_.output_dir / "train_log.ndjson", std::ios::app);
        if (!log_) throw IoError("cannot open training log in '" + opt_.output_dir.string() + "'");
    }

    const TrainState& state() const { return state_; }
    const TrainPlan& plan() const { return plan_; }
    bool stopped() const { return stopped_; }
    std::filesystem::path state_path() const { return opt_.output_dir / "train_state.ckpt"; }
    std::filesystem::path best_marker_path() const { return opt_.output_dir / "BEST"; }

    long batches_per_epoch() const {
        return static_cast<long>((train_.size() + static_cast<std::size_t>(plan_.batch_size) - 1) /
                                 static_cast<std::size_t>(plan_.batch_size));
    }
    long level_steps(int level) const { return plan_.epochs(level) * batches_per_epoch(); }

    void log_record(const nlohmann::json& j) {
        const std::string line = j.dump();
        log_ << line << '\n';
        log_.flush();
        if (opt_.on_log) opt_.on_log(line);
    }

    /// Trains one level from the current state to the end of the level, or
    /// until the stop step. Returns the state afterwards.
    TrainState train_level(int level) {
        if (level != state_.current_level)
            throw ContractError("train_level(" + std::to_string(level) + ") but state is at level " +
                                std::to_string(state_.current_level));
        const long total = level_steps(level);
        if (total < 2) throw ConfigError("level " + std::to_string(level) + " has fewer than 2 steps");
        if (state_.epoch == 0 && state_.batch == 0) {
            adam_.reset();
            state_.best_metric = -std::numeric_limits<double>::infinity();
            state_.best_checkpoint_path.clear();
        }
        const LossWeights w = loss_weights(level, plan_.track);
        while (state_.epoch < plan_.epochs(level)) {
            BatchIterator<T> it(train_, static_cast<std::size_t>(plan_.batch_size), state_.rng_state, true,
                                static_cast<std::uint64_t>(state_.epoch), static_cast<std::uint64_t>(level), opt_.workers);
            for (long b = 0; b < state_.batch; ++b) it.next();  // skip what a resumed run already did
            while (!it.done()) {
                if (opt_.stop_after_global_step >= 0 && state_.global_step >= opt_.stop_after_global_step) {
                    save_state();
                    stopped_ = true;
                    return state_;
                }
                const auto batch = it.next();
                const long level_step = state_.epoch * batches_per_epoch() + state_.batch;
                const double lr = one_cycle_lr(level_step, total, plan_.lr);
                step(batch, level, w, lr);
                ++state_.batch;
                ++state_.global_step;
            }
            validate_epoch(level);
            ++state_.epoch;
            state_.batch = 0;
            save_state();
        }
        save_model(opt_.output_dir / ("level" + std::to_string(level) + "_final.ckpt"), model_);
        return state_;
    }

    /// Levels 5 -> 0 from the current state. Returns the selected level-0
    /// checkpoint, or an empty path if stopped early.
    std::filesystem::path run_progressive() {
        while (!state_.finished) {
            const int level = state_.current_level;
            train_level(level);
            if (stopped_) return {};
            if (level == 0) {
                state_.finished = true;
                write_best_marker(state_.best_checkpoint_path);
            } else {
                state_.current_level = level - 1;
                state_.epoch = 0;
                state_.batch = 0;
            }
            save_state();
        }
        return state_.best_checkpoint_path;
    }

    /// Restores parameters, optimizer moments and position from a state file.
    void resume(const std::filesystem::path& path) {
        auto ck = load_checkpoint(path);
        if (ck.header.value("kind", "") != "train_state") throw ConfigError("'" + path.string() + "' is not a training state");
        if (checkpoint_config(ck) != model_.config()) throw ConfigError("training state was written for a different model");
        state_ = ck.header.at("state").get<TrainState>();
        for (auto& [name, v] : model_.params()) {
            auto it = ck.arrays.find("param/" + name);
            if (it == ck.arrays.end()) throw ConfigError("training state lacks parameter '" + name + "'");
            v.mutable_value() = it->second.template cast<T>();
        }
        adam_.reset();
        adam_.set_steps(ck.header.at("adam_steps").get<long>());
        for (const auto& [name, t] : ck.arrays) {
            if (name.rfind("adam.m/", 0) == 0) adam_.state()[name.substr(7)].m = t.template cast<T>();
            if (name.rfind("adam.v/", 0) == 0) adam_.state()[name.substr(7)].v = t.template cast<T>();
        }
        stopped_ = false;
    }

    ValidationMetrics validate_level(int level) {
        auto& ps = model_.params();
        ps.set_requires_grad(false);
        ValidationMetrics m;
        double n_ssim = 0, n_ms = 0;
        std::vector<double> lp;
        for (std::size_t i = 0; i < val_.size(); ++i) {
            const auto s = val_.load(i);
            const auto pred = model_.forward(s.raw, level).image(level);
            const auto tgt = downsample_target(s.rgb, level);
            m.psnr += psnr(pred, tgt);
            if (std::min(tgt.height(), tgt.width()) >= SsimParams::window) {
                m.ssim += ssim(pred, tgt);
                m.msssim += ms_ssim(pred, tgt);
                n_ssim += 1;
                n_ms += 1;
            }
            if (!plan_.lpips_plugin.empty()) {
                const auto dir = opt_.output_dir / "lpips_tmp";
                std::filesystem::create_directories(dir);
                png::write_rgb8(dir / "pred.png", denormalize_rgb(pred));
                png::write_rgb8(dir / "target.png", denormalize_rgb(tgt));
                lp.push_back(run_lpips_plugin(plan_.lpips_plugin, dir / "pred.png", dir / "target.png"));
            }
        }
        const double n = static_cast<double>(val_.size());
        m.psnr /= n;
        m.ssim = n_ssim > 0 ? m.ssim / n_ssim : std::numeric_limits<double>::quiet_NaN();
        m.msssim = n_ms > 0 ? m.msssim / n_ms : std::numeric_limits<double>::quiet_NaN();
        if (!lp.empty()) {
            m.lpips = 0;
            for (double v : lp) m.lpips += v;
            m.lpips /= static_cast<double>(lp.size());
        }
        return m;
    }

    /// Higher is better. Falls back to PSNR where the configured metric
    /// cannot be computed at this level's resolution.
    double selection_score(const ValidationMetrics& m) const {
        switch (plan_.effective_selection()) {
            case SelectionMetric::VAL_PSNR: return m.psnr;
            case SelectionMetric::VAL_LPIPS: return std::isnan(m.lpips) ? m.psnr : -m.lpips;
            case SelectionMetric::VAL_NEG_MSSSIM: return std::isnan(m.msssim) ? m.psnr : m.msssim;
        }
        return m.psnr;
    }

private:
    void step(const std::vector<Sample<T>>& batch, int level, const LossWeights& w, double lr) {
        auto& ps = model_.params();
        ps.zero_grad();
        ps.set_requires_grad(true);
        const T inv_b = static_cast<T>(1.0 / static_cast<double>(batch.size()));
        double mse = 0, vgg = 0, ms = 0, total = 0;
        for (const auto& s : batch) {
            const auto out = model_.forward(s.raw, level);
            std::map<int, RgbImage<T>> targets{{level, downsample_target(s.rgb, level)}};
            auto terms = composite_loss(out, targets, level, plan_.track, fx_);
            mse += terms.mse;
            vgg += terms.vgg;
            ms += terms.msssim;
            total += static_cast<double>(terms.total.item());
            backward(affine(terms.total, inv_b));
        }
        const double nb = static_cast<double>(batch.size());
        nlohmann::json rec = {{"step", state_.global_step},
                              {"level", level},
                              {"lr", lr},
                              {"loss_mse", mse / nb},
                              {"loss_vgg", vgg / nb},
                              {"loss_msssim", ms / nb},
                              {"loss_total", total / nb},
                              {"lambda_mse", w.mse},
                              {"lambda_vgg", w.vgg},
                              {"lambda_msssim", w.msssim}};
        if (!std::isfinite(total)) {
            rec["event"] = "non_finite_loss";
            log_record(rec);
            std::ostringstream os;
            os << "loss at step " << state_.global_step << " (level " << level << ", lr " << lr << "): mse " << mse / nb
               << ", vgg " << vgg / nb << ", 1-msssim " << ms / nb << ", total " << total / nb;
            throw NonFiniteError(os.str());
        }
        log_record(rec);
        adam_.step(ps, lr);
        ps.set_requires_grad(false);
    }

    void validate_epoch(int level) {
        const auto m = validate_level(level);
        nlohmann::json rec = {{"epoch", state_.epoch},
                              {"level", level},
                              {"step", state_.global_step},
                              {"val_psnr", metric_json(m.psnr)},
                              {"val_ssim", metric_json(m.ssim)},
                              {"val_msssim", metric_json(m.msssim)}};
        if (!plan_.lpips_plugin.empty()) rec["val_lpips"] = metric_json(m.lpips);
        log_record(rec);
        const double score = selection_score(m);
        if (score >= state_.best_metric) {  // ties go to the later checkpoint
            state_.best_metric = score;
            const auto p = opt_.output_dir / ("level" + std::to_string(level) + "_best.ckpt");
            save_model(p, model_);
            state_.best_checkpoint_path = p.string();
        }
    }

    void save_state() {
        Checkpoint ck;
        ck.header = {{"kind", "train_state"},
                     {"model_config", model_.config()},
                     {"state", state_},
                     {"adam_steps", adam_.steps()}};
        for (const auto& [name, v] : model_.params()) ck.arrays.emplace("param/" + name, v.value().template cast<double>());
        for (const auto& [name, mo] : adam_.state()) {
            ck.arrays.emplace("adam.m/" + name, mo.m.template cast<double>());
            ck.arrays.emplace("adam.v/" + name, mo.v.template cast<double>());
        }
        save_checkpoint(state_path(), ck);
    }

    void write_best_marker(const std::string& path) {
        detail::write_atomically(best_marker_path(), [&](std::ostream& os) { os << path << '\n'; });
    }

    PyNetCA<T>& model_;
    TrainPlan plan_;
    const SampleSource<T>& train_;
    const SampleSource<T>& val_;
    const FeatureExtractor<T>* fx_;
    TrainerOptions opt_;
    TrainState state_;
    Adam<T> adam_;
    std::ofstream log_;
    bool stopped_ = false;
};

inline std::string read_best_marker(const std::filesystem::path& dir) {
    std::ifstream is(dir / "BEST");
    if (!is) throw IoError("no BEST marker in '" + dir.string() + "'");
    std::string line;
    std::getline(is, line);
    return line;
}

}  // namespace pyramid_isp
