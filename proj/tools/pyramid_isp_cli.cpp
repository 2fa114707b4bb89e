#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "pyramid_isp/pyramid_isp.hpp"

namespace fs = std::filesystem;
using namespace pyramid_isp;
using json = nlohmann::json;

namespace {

struct CommonArgs {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string variant;
    std::string track;
    std::string out;
};

void add_common(CLI::App* cmd, CommonArgs& a) {
    cmd->add_option("--config", a.config, "TOML run configuration")->check(CLI::ExistingFile);
    cmd->add_option("--seed", a.seed, "Seed for every random choice");
    cmd->add_option("--variant", a.variant, "pynet, pynet_srm or pynet_ca");
    cmd->add_option("--track", a.track, "fidelity or perceptual");
    cmd->add_option("--out", a.out, "Output directory");
}

/// File values first, then flags. Validates but touches nothing on disk.
RunConfig effective_config(const CommonArgs& a) {
    RunConfig cfg;
    bool level0_explicit = false;
    if (!a.config.empty()) {
        auto parsed = read_config_file(a.config);
        cfg = parsed.config;
        level0_explicit = parsed.level0_epochs_explicit;
    }
    if (a.seed) cfg.seed = *a.seed;
    if (!a.variant.empty()) cfg.variant = parse_variant(a.variant);
    if (!a.track.empty()) cfg.set_track(parse_track(a.track), level0_explicit);
    if (!a.out.empty()) cfg.output_dir = a.out;
    cfg.sync();
    cfg.validate();
    return cfg;
}

fs::path manifest_dir(const RunConfig& cfg) { return cfg.output_dir / "manifests"; }

std::string fmt(double v, int prec = 4) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    if (std::isnan(v)) return "nan";
    std::ostringstream os;
    os << std::fixed << std::setprecision(prec) << v;
    return os.str();
}

void print_lambda_table(std::ostream& os, Track track) {
    os << "loss weights (" << to_string(track) << ")\n";
    os << "  level   mse     vgg     ms-ssim\n";
    for (int k = 5; k >= 0; --k) {
        const auto w = loss_weights(k, track);
        os << "  " << std::left << std::setw(8) << k << std::setw(8) << w.mse << std::setw(8) << w.vgg << w.msssim << '\n';
    }
}

void print_lr_table(std::ostream& os, const TrainPlan& plan, std::size_t train_size) {
    const long bpe = static_cast<long>((train_size + static_cast<std::size_t>(plan.batch_size) - 1) /
                                       static_cast<std::size_t>(plan.batch_size));
    os << "learning rate (one-cycle, start " << plan.lr.lr_start << ", max " << plan.lr.lr_max << ", final "
       << plan.lr.lr_final << ", warmup " << plan.lr.warmup_fraction << ")\n";
    os << "  level   epochs  steps   peak_step\n";
    for (int k = 5; k >= 0; --k) {
        const long steps = plan.epochs(k) * bpe;
        long peak = 0;
        for (long s = 0; s < steps && steps >= 2; ++s)
            if (one_cycle_lr(s, steps, plan.lr) > one_cycle_lr(peak, steps, plan.lr)) peak = s;
        os << "  " << std::left << std::setw(8) << k << std::setw(8) << plan.epochs(k) << std::setw(8) << steps << peak
           << '\n';
    }
}

std::unique_ptr<FeatureExtractor<float>> make_extractor(const std::string& kind, std::uint64_t seed) {
    if (kind == "random") return std::make_unique<RandomConvExtractor<float>>(seed);
    if (kind != "vgg19") throw ConfigError("unknown extractor '" + kind + "' (expected vgg19 or random)");
    const char* cache = std::getenv("PYRAMID_ISP_CACHE");
    if (!cache || !*cache)
        throw ConfigError("PYRAMID_ISP_CACHE is not set; point it at a directory holding vgg19_features.ckpt "
                          "or pass --extractor random");
    const fs::path p = fs::path(cache) / "vgg19_features.ckpt";
    if (!fs::exists(p)) throw ConfigError("VGG-19 weights not found at '" + p.string() + "'");
    const auto ck = load_checkpoint(p);
    std::map<std::string, Tensor<float>> w;
    for (const auto& [name, t] : ck.arrays) w.emplace(name, t.cast<float>());
    return std::make_unique<Vgg19Extractor<float>>(std::move(w));
}

// ---------------------------------------------------------------------------

struct PrepareArgs {
    std::string data_root;
    std::string exclusions;
};

int cmd_prepare(const CommonArgs& common, const PrepareArgs& a) {
    RunConfig cfg = effective_config(common);
    if (!a.data_root.empty()) cfg.data_root = a.data_root;
    if (!a.exclusions.empty()) cfg.exclusion_file = fs::path(a.exclusions);
    if (cfg.exclusion_file && !fs::exists(*cfg.exclusion_file))
        throw ConfigError("exclusion file '" + cfg.exclusion_file->string() + "' not found");
    std::cout << "seed " << cfg.seed << '\n';

    json report{{"data_root", cfg.data_root.string()}, {"splits", json::object()}, {"errors", json::array()}};
    std::vector<std::pair<std::string, DatasetManifest>> manifests;
    for (const auto& split : {cfg.data.train_split, cfg.data.val_split}) {
        try {
            const ManifestOptions opt{split, cfg.data.patch_size, cfg.data.bit_depth, cfg.data.pattern};
            const auto exclusion = split == cfg.data.train_split ? cfg.exclusion_file : std::nullopt;
            auto load = load_manifest(cfg.data_root, exclusion, opt);
            json bad = json::array();
            for (const auto& pair : load.manifest.active()) {
                try {
                    const auto s = load_sample<float>(pair, load.manifest);
                    if (s.rgb.height() != cfg.data.patch_size || s.rgb.width() != cfg.data.patch_size)
                        throw DataError("sample '" + pair.id + "' is " + std::to_string(s.rgb.height()) + "x" +
                                        std::to_string(s.rgb.width()) + ", expected patch size " +
                                        std::to_string(cfg.data.patch_size));
                } catch (const Error& e) {
                    bad.push_back({{"id", pair.id}, {"path", pair.raw_path.string()}, {"error", e.what()}});
                }
            }
            report["splits"][split] = {{"pairs", load.manifest.pairs.size()},
                                       {"active", load.manifest.active().size()},
                                       {"excluded", load.manifest.excluded_ids()},
                                       {"warnings", load.warnings},
                                       {"invalid", bad}};
            for (const auto& w : load.warnings) std::cerr << "warning: " << w << '\n';
            for (const auto& b : bad) report["errors"].push_back(b.at("error"));
            manifests.emplace_back(split, std::move(load.manifest));
        } catch (const DataError& e) {
            report["errors"].push_back(e.what());
        }
    }
    fs::create_directories(manifest_dir(cfg));
    const bool ok = report["errors"].empty();
    if (ok)
        for (const auto& [split, m] : manifests) save_manifest(manifest_dir(cfg) / (split + ".json"), m);
    write_text(cfg.output_dir / "prepare_report.json", report.dump(2) + "\n");
    for (const auto& e : report["errors"]) std::cerr << "error: " << e.get<std::string>() << '\n';
    for (const auto& [split, info] : report["splits"].items())
        std::cout << split << ": " << info["active"] << " active pairs, " << info["excluded"].size() << " excluded\n";
    return ok ? 0 : 3;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
    std::string resume;
    std::string extractor = "vgg19";
    long stop_after = -1;
};

int cmd_train(const CommonArgs& common, const TrainArgs& a) {
    const RunConfig cfg = effective_config(common);
    const auto train_m = manifest_dir(cfg) / (cfg.data.train_split + ".json");
    const auto val_m = manifest_dir(cfg) / (cfg.data.val_split + ".json");
    for (const auto& p : {train_m, val_m})
        if (!fs::exists(p)) throw DataError("manifest '" + p.string() + "' not found; run prepare first");
    if (!a.resume.empty() && !fs::exists(a.resume)) throw ConfigError("resume file '" + a.resume + "' not found");
    const auto fx = make_extractor(a.extractor, cfg.seed);
    ManifestSource<float> train(read_manifest(train_m)), val(read_manifest(val_m));

    const std::string cfg_text = serialize_config(cfg);
    std::cout << "seed " << cfg.seed << '\n';
    print_lambda_table(std::cout, cfg.plan.track);
    print_lr_table(std::cout, cfg.plan, train.size());

    PyNetCA<float> model(cfg.model);
    TrainerOptions opt;
    opt.output_dir = cfg.output_dir;
    opt.stop_after_global_step = a.stop_after;
    opt.workers = cfg.data.workers;
    Trainer<float> trainer(model, cfg.plan, train, val, fx.get(), opt);
    trainer.log_record({{"config", cfg_text}, {"seed", cfg.seed}, {"resume", a.resume}});
    if (!a.resume.empty()) trainer.resume(a.resume);
    const auto best = trainer.run_progressive();
    if (trainer.stopped()) {
        std::cout << "stopped at step " << trainer.state().global_step << "; state in " << trainer.state_path().string()
                  << '\n';
        return 0;
    }
    std::cout << "best checkpoint " << best.string() << '\n';
    return 0;
}

// ---------------------------------------------------------------------------

struct EvaluateArgs {
    std::vector<std::string> checkpoints;
    std::string manifest;
    std::string targets;
    bool quantize = false;
    bool ensemble = false;
};

PyNetCA<float> load_for_evaluation(const fs::path& path, const std::optional<Variant>& variant) {
    const auto ck = load_checkpoint(path);
    auto mcfg = checkpoint_config(ck);
    if (variant) {
        mcfg.use_channel_attention = *variant == Variant::PYNET_CA;
        mcfg.head_mode = *variant == Variant::PYNET ? HeadMode::UPSAMPLE_CONV : HeadMode::SRM;
    }
    mcfg.validate();
    try {
        return model_from_arrays<float>(mcfg, ck.arrays);
    } catch (const ConfigError& e) {
        throw ConfigError("checkpoint '" + path.string() + "' does not fit variant " +
                          std::string(to_string(mcfg.variant())) + ": " + e.what());
    }
}

int cmd_evaluate(const CommonArgs& common, const EvaluateArgs& a) {
    const RunConfig cfg = effective_config(common);
    if (a.checkpoints.empty()) throw ConfigError("evaluate needs at least one --checkpoint");
    for (const auto& c : a.checkpoints)
        if (!fs::exists(c)) throw ConfigError("checkpoint '" + c + "' not found");
    const fs::path mpath = a.manifest.empty() ? manifest_dir(cfg) / (cfg.data.val_split + ".json") : fs::path(a.manifest);
    if (!fs::exists(mpath)) throw DataError("manifest '" + mpath.string() + "' not found");
    if (!a.targets.empty() && !fs::is_directory(a.targets)) throw ConfigError("targets '" + a.targets + "' is not a directory");
    const std::optional<Variant> variant = common.variant.empty() ? std::nullopt : std::optional(cfg.variant);
    std::vector<PyNetCA<float>> models;
    for (const auto& c : a.checkpoints) models.push_back(load_for_evaluation(c, variant));
    const auto manifest = read_manifest(mpath);
    std::cout << "seed " << cfg.seed << '\n';

    json reports = json::array();
    struct Row {
        std::string label;
        double psnr, ssim, msssim;
    };
    std::vector<Row> rows;
    for (std::size_t m = 0; m < models.size(); ++m) {
        json images = json::array();
        double sp = 0, ss = 0, sm = 0;
        int n = 0;
        for (const auto& pair : manifest.active()) {
            const auto sample = load_sample<float>(pair, manifest);
            auto pred = predict(sample.raw, models[m], a.ensemble, cfg.data.workers);
            if (a.quantize) pred = normalize_rgb<float>(denormalize_rgb(pred));
            RgbImage<float> target = sample.rgb;
            if (!a.targets.empty()) target = normalize_rgb<float>(png::read_rgb8(fs::path(a.targets) / (pair.id + ".png")));
            const auto r = evaluate_pair(pred, target);
            images.push_back({{"id", pair.id}, {"psnr", metric_json(r.psnr)}, {"ssim", metric_json(r.ssim)},
                              {"ms_ssim", metric_json(r.ms_ssim)}});
            sp += r.psnr;
            ss += r.ssim;
            sm += r.ms_ssim;
            ++n;
        }
        const Variant v = models[m].config().variant();
        const Row row{std::string(variant_label(v)), sp / n, ss / n, sm / n};
        rows.push_back(row);
        reports.push_back({{"checkpoint", a.checkpoints[m]},
                           {"variant", to_string(v)},
                           {"label", row.label},
                           {"ensemble", a.ensemble},
                           {"images", images},
                           {"mean", {{"psnr", metric_json(row.psnr)}, {"ssim", metric_json(row.ssim)}, {"ms_ssim", metric_json(row.msssim)}}}});
    }
    fs::create_directories(cfg.output_dir);
    write_text(cfg.output_dir / "eval_report.json", (reports.size() == 1 ? reports[0] : reports).dump(2) + "\n");
    std::ostringstream table;
    table << std::left << std::setw(16) << "Method" << std::setw(10) << "PSNR" << std::setw(10) << "SSIM" << "MS-SSIM\n";
    for (const auto& r : rows)
        table << std::left << std::setw(16) << r.label << std::setw(10) << fmt(r.psnr) << std::setw(10) << fmt(r.ssim)
              << fmt(r.msssim) << '\n';
    if (rows.size() > 1) write_text(cfg.output_dir / "eval_table.txt", table.str());
    std::cout << table.str();
    return 0;
}

// ---------------------------------------------------------------------------

struct InferArgs {
    std::string checkpoint;
    std::string input;
    bool ensemble = false;
};

int cmd_infer(const CommonArgs& common, const InferArgs& a) {
    const RunConfig cfg = effective_config(common);
    if (!fs::exists(a.checkpoint)) throw ConfigError("checkpoint '" + a.checkpoint + "' not found");
    if (!fs::is_directory(a.input)) throw ConfigError("input '" + a.input + "' is not a directory");
    const auto model = load_model<float>(a.checkpoint);
    DatasetManifest m;
    m.split = "infer";
    m.patch_size = cfg.data.patch_size;
    m.bit_depth = cfg.data.bit_depth;
    m.pattern = cfg.data.pattern;
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(a.input))
        if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) m.pairs.push_back({f.stem().string(), f, {}, false});
    std::cout << "seed " << cfg.seed << '\n';

    const auto s = infer_batch(m, model, cfg.output_dir, a.ensemble, cfg.data.workers);
    json j = to_json_value(s);
    j["forward_passes"] = model.forward_passes();
    write_text(cfg.output_dir / "infer_summary.json", j.dump(2) + "\n");
    for (const auto& [id, why] : s.failures) std::cerr << "failed " << id << ": " << why << '\n';
    std::cout << s.count_ok << " written, " << s.count_failed << " failed, " << model.forward_passes()
              << " forward passes\n";
    return s.count_failed && !s.count_ok ? 3 : 0;
}

// ---------------------------------------------------------------------------

struct ReportArgs {
    std::string log;
    int mosaic_size = 0;
};

int cmd_report(const CommonArgs& common, const ReportArgs& a) {
    const RunConfig cfg = effective_config(common);
    const fs::path log = a.log.empty() ? cfg.output_dir / "train_log.ndjson" : fs::path(a.log);
    if (!fs::exists(log)) throw DataError("training log '" + log.string() + "' not found");
    const int size = a.mosaic_size > 0 ? a.mosaic_size : cfg.data.patch_size;
    if (size % 32) throw ConfigError("mosaic size must be a multiple of 32");
    std::cout << "seed " << cfg.seed << '\n';
    const auto out = cfg.output_dir / "report";
    const auto files = write_training_report(log, out);
    std::vector<std::pair<std::string, ModelConfig>> variants;
    for (auto v : {Variant::PYNET, Variant::PYNET_SRM, Variant::PYNET_CA}) {
        auto mc = ModelConfig::for_variant(v, cfg.model.base_width);
        mc.blocks = cfg.model.blocks;
        variants.emplace_back(std::string(variant_label(v)), mc);
    }
    const auto table = param_flop_table(variants, size);
    write_text(out / "param_flops.txt", table);
    for (const auto& [line, why] : files.bad_lines) std::cerr << log.string() << ": line " << line << ": " << why << '\n';
    for (const auto& p : files.written) std::cout << "wrote " << p.string() << '\n';
    std::cout << "wrote " << (out / "param_flops.txt").string() << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Pyramid RAW-to-RGB network: data preparation, training, evaluation, inference, reports"};
    app.require_subcommand(1);

    CommonArgs common;
    PrepareArgs prep;
    TrainArgs train;
    EvaluateArgs eval;
    InferArgs infer;
    ReportArgs report;

    auto* c_prep = app.add_subcommand("prepare", "Validate a dataset tree and write manifests");
    add_common(c_prep, common);
    c_prep->add_option("--data-root", prep.data_root, "Dataset root (overrides config)");
    c_prep->add_option("--exclusions", prep.exclusions, "File of sample ids to exclude");

    auto* c_train = app.add_subcommand("train", "Progressive training, coarsest level first");
    add_common(c_train, common);
    c_train->add_option("--resume", train.resume, "Training state to continue from");
    c_train->add_option("--extractor", train.extractor, "Perceptual feature extractor: vgg19 or random");
    c_train->add_option("--stop-after", train.stop_after, "Save state and stop after this many steps");

    auto* c_eval = app.add_subcommand("evaluate", "PSNR, SSIM and MS-SSIM of checkpoints on a manifest");
    add_common(c_eval, common);
    c_eval->add_option("--checkpoint", eval.checkpoints, "Checkpoint(s); several produce a comparison table")->required();
    c_eval->add_option("--manifest", eval.manifest, "Manifest to evaluate (default: validation manifest)");
    c_eval->add_option("--targets", eval.targets, "Directory of <id>.png images replacing the manifest targets");
    c_eval->add_flag("--quantize", eval.quantize, "Round predictions to 8 bits before scoring");
    c_eval->add_flag("--ensemble", eval.ensemble, "Average over the eight flips and rotations");

    auto* c_infer = app.add_subcommand("infer", "Reconstruct RGB images from a directory of mosaics");
    add_common(c_infer, common);
    c_infer->add_option("--checkpoint", infer.checkpoint, "Model checkpoint")->required();
    c_infer->add_option("--input", infer.input, "Directory of mosaic PNGs")->required();
    c_infer->add_flag("--ensemble", infer.ensemble, "Average over the eight flips and rotations");

    auto* c_report = app.add_subcommand("report", "Curves, plots and parameter/FLOP tables from a training log");
    add_common(c_report, common);
    c_report->add_option("--log", report.log, "Training log (default: <out>/train_log.ndjson)");
    c_report->add_option("--mosaic-size", report.mosaic_size, "Mosaic size for the FLOP table (default: patch size)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (*c_prep) return cmd_prepare(common, prep);
        if (*c_train) return cmd_train(common, train);
        if (*c_eval) return cmd_evaluate(common, eval);
        if (*c_infer) return cmd_infer(common, infer);
        if (*c_report) return cmd_report(common, report);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return e.exit_code() == 1 ? 4 : e.exit_code();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 4;
    }
    return 2;
}
