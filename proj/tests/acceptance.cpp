// Acceptance runner. Each criterion prints one line:
//   [PASS] name: detail   /   [FAIL] name: detail   /   [WARN] name: detail
// Usage: acceptance [group...]  with groups fast, overfit, ablation (default: all).

#include <chrono>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "pyramid_isp/pyramid_isp.hpp"
#include "support/oracles.hpp"
#include "support/temp_dir.hpp"

using namespace pyramid_isp;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;
    bool warn_only = false;
};

int hard_failures = 0;

void report(const std::string& name, const Outcome& o) {
    const char* tag = o.pass ? "PASS" : (o.warn_only ? "WARN" : "FAIL");
    std::printf("[%s] %s: %s\n", tag, name.c_str(), o.detail.c_str());
    std::fflush(stdout);
    if (!o.pass && !o.warn_only) ++hard_failures;
}

void run_criterion(const std::string& name, const std::function<Outcome()>& f) {
    try {
        report(name, f());
    } catch (const std::exception& e) {
        report(name, {false, std::string("exception: ") + e.what()});
    }
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

// ---------------------------------------------------------------------------

Outcome shape_suite() {
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 g(11);
    int checks = 0;
    for (int size : {64, 128, 448}) {
        const auto raw = pack_bayer<float>(oracle::random_mosaic(g, size, size, 10, BayerPattern::RGGB));
        for (auto v : {Variant::PYNET, Variant::PYNET_SRM, Variant::PYNET_CA}) {
            auto cfg = ModelConfig::for_variant(v);
            cfg.seed = 1;
            const PyNetCA<float> model(cfg);
            const auto out = model.forward(raw, 0);
            for (int k = 0; k <= 5; ++k) {
                const auto& t = out.at(k).value();
                const int side = size >> k;
                if (t.shape() != Shape{3, side, side})
                    return {false, fmt("%s at %d: level %d has shape %s", std::string(to_string(v)).c_str(), size, k,
                                       shape_str(t.shape()).c_str())};
                for (float x : t.vec())
                    if (!(x > -1.0f && x < 1.0f))
                        return {false, fmt("%s at %d: level %d value %g outside (-1,1)", std::string(to_string(v)).c_str(),
                                           size, k, double(x))};
                ++checks;
            }
        }
    }
    const double secs = seconds_since(t0);
    return {secs < 60.0, fmt("%d level outputs over 3 sizes x 3 variants, %.1fs (limit 60s)", checks, secs)};
}

Outcome gradient_suite() {
    using LD = long double;
    const auto t0 = std::chrono::steady_clock::now();
    const auto sample = synthetic_samples<double>(1, 64, 3)[0];
    auto cfg = ModelConfig::for_variant(Variant::PYNET_CA, 4);
    cfg.seed = 5;
    PyNetCA<double> model(cfg);
    PyNetCA<LD> reference(cfg, model.params().clone<LD>());
    const RandomConvExtractor<double> fx;
    const RandomConvExtractor<LD> lfx;
    const PackedRaw<LD> lraw{sample.raw.values.cast<LD>(), sample.raw.pattern};
    const std::map<int, RgbImage<double>> target{{0, sample.rgb}};
    const std::map<int, RgbImage<LD>> ltarget{{0, RgbImage<LD>{sample.rgb.values.cast<LD>()}}};
    const auto w = loss_weights(0, Track::FIDELITY);
    if (w.mse == 0 || w.vgg == 0 || w.msssim == 0) return {false, "level-0 weights do not activate all three terms"};

    model.params().set_requires_grad(true);
    backward(composite_loss(model.forward(sample.raw, 0), target, 0, Track::FIDELITY, &fx).total);
    auto loss = [&] { return composite_loss(reference.forward(lraw, 0), ltarget, 0, Track::FIDELITY, &lfx).total.item(); };

    std::mt19937_64 g(1);
    const auto names = model.params().names();
    std::set<std::pair<std::string, std::size_t>> picked;
    double worst = 0;
    std::string worst_at;
    while (picked.size() < 200) {
        const auto& name = names[g() % names.size()];
        const std::size_t k = g() % model.params().get(name).value().size();
        if (!picked.insert({name, k}).second) continue;
        const auto& grad = model.params().get(name).grad();
        const double a = grad.empty() ? 0.0 : grad[k];  // unused by the level-0 loss
        LD& x = reference.params().get(name).mutable_value()[k];
        const LD keep = x, h = 1e-7L;
        x = keep + h;
        const LD fp = loss();
        x = keep - h;
        const LD fm = loss();
        x = keep;
        const double n = static_cast<double>((fp - fm) / (2 * h));
        const double r = std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-10});
        if (r > worst) {
            worst = r;
            worst_at = name + "[" + std::to_string(k) + "]";
        }
    }
    const double secs = seconds_since(t0);
    return {worst <= 1e-3 && secs < 300.0,
            fmt("200 parameters, worst relative error %.3g at %s (tol 1e-3), %.0fs (limit 300s)", worst, worst_at.c_str(),
                secs)};
}

Outcome loss_oracle_suite() {
    std::mt19937_64 g(21);
    double worst_ssim = 0, worst_ms = 0, worst_mse = 0;
    for (int i = 0; i < 5; ++i) {
        const auto a = oracle::random_tensor(g, {3, 256, 256}, 0, 1);
        auto b = a;
        const auto noise = oracle::random_tensor(g, a.shape(), -0.3, 0.3);
        for (std::size_t k = 0; k < b.size(); ++k) b[k] = std::clamp(b[k] + noise[k], 0.0, 1.0);
        const auto ua = oracle::from_tensor(a), ub = oracle::from_tensor(b);
        const auto va = Var<double>::constant(a), vb = Var<double>::constant(b);
        worst_ssim = std::max(worst_ssim, std::abs(ssim_var(va, vb).item() - oracle::ssim(ua, ub)));
        worst_ms = std::max(worst_ms, std::abs(ms_ssim_var(va, vb).item() - oracle::ms_ssim(ua, ub)));
        worst_mse = std::max(worst_mse, std::abs(mse_loss(va, vb).item() - oracle::mse(a, b)));
    }
    const RgbImage<double> lo{Tensor<double>::chw(3, 16, 16, -1.0)}, mid{Tensor<double>::chw(3, 16, 16, 0.0)},
        hi{Tensor<double>::chw(3, 16, 16, 1.0)};
    const double p_half = psnr(lo, mid), p_unit = psnr(lo, hi);
    const bool ok = worst_ssim <= 1e-6 && worst_ms <= 1e-6 && worst_mse <= 1e-12 && std::abs(p_half - 6.0206) <= 1e-6 &&
                    std::abs(p_half - 20 * std::log10(2.0)) <= 1e-6 && std::abs(p_unit) <= 1e-6;
    return {ok, fmt("5 pairs at 256x256: |dSSIM| %.2g, |dMS-SSIM| %.2g, |dMSE| %.2g; PSNR %.6f dB and %.2g dB", worst_ssim,
                    worst_ms, worst_mse, p_half, p_unit)};
}

Outcome schedule_suite() {
    const OneCycle p;
    const long total = 1001;  // f = step / (total - 1)
    const double at0 = one_cycle_lr(0, total, p), at02 = one_cycle_lr(200, total, p), at1 = one_cycle_lr(1000, total, p);
    bool ok = std::abs(at0 - 5e-5) <= 1e-15 && std::abs(at02 - 1e-4) <= 1e-15 && std::abs(at1 - 5e-7) <= 1e-15;
    for (long s = 1; s <= 200; ++s) ok = ok && one_cycle_lr(s, total, p) >= one_cycle_lr(s - 1, total, p);
    for (long s = 201; s < total; ++s) ok = ok && one_cycle_lr(s, total, p) <= one_cycle_lr(s - 1, total, p);
    // independent restatement of the published weights
    int cells = 0;
    for (auto track : {Track::FIDELITY, Track::PERCEPTUAL})
        for (int k = 0; k <= 5; ++k) {
            const double vgg = k >= 4 ? 0.0 : 0.01;
            const double ms = k > 0 ? 0.0 : (track == Track::FIDELITY ? 0.01 : 0.1);
            const auto w = loss_weights(k, track);
            ok = ok && w.mse == 1.0 && w.vgg == vgg && w.msssim == ms;
            ++cells;
        }
    return {ok, fmt("lr(0)=%.3g lr(0.2)=%.3g lr(1)=%.3g, monotone up then down; %d weight rows match", at0, at02, at1,
                    cells)};
}

Outcome bayer_suite() {
    std::mt19937_64 g(31);
    const auto ts = all_transforms();
    int agree = 0;
    for (int i = 0; i < 20; ++i) {
        const auto pat = static_cast<BayerPattern>(i % 4);
        const int h = 2 * (4 + static_cast<int>(g() % 8)), w = 2 * (4 + static_cast<int>(g() % 8));
        const auto m = oracle::random_mosaic(g, h, w, 10, pat);
        const auto p = pack_bayer<double>(m);
        std::set<std::vector<std::uint16_t>> lib_images, ref_images;
        for (const auto& t : ts) {
            const auto direct = transform_packed(p, t);
            const auto via = pack_bayer<double>(transform_mosaic(unpack_bayer(p, 10), t));
            if (direct.values != via.values || direct.pattern != via.pattern)
                return {false, fmt("mosaic %d: transform (rot %d, flip %d) disagrees", i, t.rotation, int(t.hflip))};
            lib_images.insert(transform_mosaic(m, t).pixels);
            ++agree;
        }
        for (int r = 0; r < 4; ++r)
            for (bool f : {false, true}) ref_images.insert(oracle::transform_mosaic(m, r, f).pixels);
        if (lib_images != ref_images) return {false, fmt("mosaic %d: transform set differs from reference geometry", i)};
    }
    // group laws, exhaustively
    int laws = 0;
    const auto p = pack_bayer<double>(oracle::random_mosaic(g, 8, 12, 10, BayerPattern::GBRG));
    auto code = [](const GeoTransform& t) { return t.rotation * 2 + int(t.hflip); };
    std::set<int> all;
    for (const auto& t : ts) all.insert(code(t));
    if (all.size() != 8) return {false, "transform list is not 8 distinct elements"};
    for (const auto& a : ts) {
        if (compose(a, GeoTransform{}) != a || compose(GeoTransform{}, a) != a) return {false, "identity law fails"};
        if (compose(a, inverse(a)) != GeoTransform{} || compose(inverse(a), a) != GeoTransform{})
            return {false, "inverse law fails"};
        const auto back = transform_packed(transform_packed(p, a), inverse(a));
        if (back.values != p.values || back.pattern != p.pattern) return {false, "packed inverse round trip fails"};
        laws += 3;
        for (const auto& b : ts) {
            const auto ab = compose(a, b);
            if (!all.count(code(ab))) return {false, "composition leaves the group"};
            const auto seq = transform_packed(transform_packed(p, b), a), one = transform_packed(p, ab);
            if (seq.values != one.values || seq.pattern != one.pattern) return {false, "composition disagrees with sequence"};
            for (const auto& c : ts)
                if (compose(compose(a, b), c) != compose(a, compose(b, c))) return {false, "associativity fails"};
            laws += 2;
        }
    }
    return {true, fmt("%d packed/mosaic agreements on 20 mosaics; %d group checks (64 pairs, 512 triples)", agree, laws)};
}

Outcome roundtrip_suite() {
    test_support::TempDir dir;
    std::mt19937_64 g(41);
    // pack / unpack
    for (int bits : {8, 10, 12, 14, 16})
        for (int i = 0; i < 4; ++i) {
            const auto m = oracle::random_mosaic(g, 16, 24, bits, static_cast<BayerPattern>(i));
            const auto back = unpack_bayer(pack_bayer<double>(m), bits);
            if (back.pixels != m.pixels || back.pattern != m.pattern) return {false, fmt("pack/unpack at %d bits", bits)};
        }
    // checkpoint
    auto cfg = ModelConfig::for_variant(Variant::PYNET_CA, 4);
    cfg.seed = 8;
    const PyNetCA<float> model(cfg);
    save_model(dir.path() / "m.ckpt", model);
    const auto loaded = load_model<float>(dir.path() / "m.ckpt");
    const auto s = synthetic_samples<float>(1, 64, 4)[0];
    const auto m1 = evaluate_pair(RgbImage<float>{model.forward(s.raw, 0).full_res.value()}, s.rgb);
    const auto m2 = evaluate_pair(RgbImage<float>{loaded.forward(s.raw, 0).full_res.value()}, s.rgb);
    if (!loaded.params().values_equal(model.params()) || m1.psnr != m2.psnr || m1.ssim != m2.ssim || m1.ms_ssim != m2.ms_ssim)
        return {false, "checkpoint reload changes parameters or metrics"};
    // config
    RunConfig c;
    c.variant = Variant::PYNET_SRM;
    c.seed = 77;
    c.output_dir = dir.path() / "with space \"q\"";
    c.data.patch_size = 256;
    c.plan.batch_size = 3;
    c.plan.lr.lr_max = 2e-4;
    c.plan.epochs_per_level[2] = 5;
    c.sync();
    const auto text = serialize_config(c);
    if (!(parse_config(text) == c) || serialize_config(parse_config(text)) != text) return {false, "config round trip"};
    // PNG
    const RgbImage<double> img{oracle::random_tensor(g, {3, 20, 30}, -1, 1)};
    png::write_rgb8(dir.path() / "x.png", denormalize_rgb(img));
    const auto back = normalize_rgb<double>(png::read_rgb8(dir.path() / "x.png"));
    double worst = 0;
    for (std::size_t i = 0; i < img.values.size(); ++i) worst = std::max(worst, std::abs(back.values[i] - img.values[i]));
    const double step = 2.0 / 255.0;
    return {worst <= step, fmt("pack/unpack exact at 5 bit depths; checkpoint metrics identical; config identity; PNG "
                               "error %.4f (step %.4f)",
                               worst, step)};
}

// ---------------------------------------------------------------------------
// Overfit protocol: 8 synthetic 64x64 pairs, 200 steps per level.

constexpr int overfit_pairs = 8;
constexpr int overfit_batch = 4;
constexpr int overfit_epochs = 100;  // 8 / 4 * 100 = 200 steps per level

TrainPlan overfit_plan(std::uint64_t seed) {
    TrainPlan plan;
    for (int k = 0; k <= 5; ++k) plan.epochs_per_level[k] = overfit_epochs;
    plan.batch_size = overfit_batch;
    plan.lr.lr_max = 3e-3;
    plan.lr.lr_start = plan.lr.lr_max / 2;
    plan.lr.lr_final = plan.lr.lr_max / 200;
    plan.seed = seed;
    return plan;
}

ModelConfig overfit_model(Variant v, std::uint64_t seed) {
    auto cfg = ModelConfig::for_variant(v, 4);
    cfg.seed = seed;
    return cfg;
}

const std::vector<Sample<float>>& overfit_samples() {
    static const auto s = synthetic_samples<float>(overfit_pairs, 64, 7);
    return s;
}

struct Fit {
    double psnr = 0, loss = 0;
};

Fit measure(const PyNetCA<float>& m, const FeatureExtractor<float>& fx) {
    Fit f;
    for (const auto& s : overfit_samples()) {
        const auto out = m.forward(s.raw, 0);
        f.psnr += psnr(out.image(0), s.rgb);
        const std::map<int, RgbImage<float>> t{{0, s.rgb}};
        f.loss += composite_loss(out, t, 0, Track::FIDELITY, &fx).total.item();
    }
    f.psnr /= overfit_pairs;
    f.loss /= overfit_pairs;
    return f;
}

struct OverfitRun {
    Fit before, after;
    double seconds = 0;
};

/// One full run into `dir`. With `stop_at` >= 0 the run is interrupted there
/// and finished by a second trainer resuming from the saved state.
OverfitRun overfit_run(Variant v, std::uint64_t seed, const fs::path& dir, long stop_at = -1) {
    const RandomConvExtractor<float> fx;
    MemorySource<float> src(overfit_samples());
    PyNetCA<float> model(overfit_model(v, seed));
    OverfitRun r;
    r.before = measure(model, fx);
    const auto t0 = std::chrono::steady_clock::now();
    TrainerOptions opt{dir};
    opt.stop_after_global_step = stop_at;
    {
        Trainer<float> tr(model, overfit_plan(seed), src, src, &fx, opt);
        tr.run_progressive();
    }
    if (stop_at >= 0) {
        PyNetCA<float> fresh(overfit_model(v, seed));
        opt.stop_after_global_step = -1;
        Trainer<float> tr(fresh, overfit_plan(seed), src, src, &fx, opt);
        tr.resume(dir / "train_state.ckpt");
        tr.run_progressive();
        model.params() = fresh.params().clone();
    }
    r.seconds = seconds_since(t0);
    r.after = measure(model, fx);
    return r;
}

std::vector<std::string> epoch_records(const fs::path& dir) {
    std::vector<std::string> out;
    std::istringstream is(slurp(dir / "train_log.ndjson"));
    for (std::string l; std::getline(is, l);)
        if (nlohmann::json::parse(l).contains("epoch")) out.push_back(l);
    return out;
}

std::vector<std::string> checkpoint_files() {
    std::vector<std::string> out;
    for (int k = 0; k <= 5; ++k)
        for (const char* kind : {"_final.ckpt", "_best.ckpt"}) out.push_back("level" + std::to_string(k) + kind);
    return out;
}

void overfit_group() {
    test_support::TempDir dir;
    std::optional<OverfitRun> first;
    run_criterion("overfit", [&]() -> Outcome {
        first = overfit_run(Variant::PYNET_CA, 1, dir.path() / "a");
        const auto& r = *first;
        const double gain = r.after.psnr - r.before.psnr, ratio = r.before.loss / r.after.loss;
        return {gain >= 10.0 && ratio >= 10.0 && r.seconds < 900.0,
                fmt("PSNR %.2f -> %.2f dB (+%.2f, need 10), loss %.4g -> %.4g (%.1fx, need 10), %.0fs (limit 900s)",
                    r.before.psnr, r.after.psnr, gain, r.before.loss, r.after.loss, ratio, r.seconds)};
    });
    run_criterion("determinism", [&]() -> Outcome {
        if (!first) first = overfit_run(Variant::PYNET_CA, 1, dir.path() / "a");
        const auto second = overfit_run(Variant::PYNET_CA, 1, dir.path() / "b");
        // 700 lands mid-way through level 2
        const auto resumed = overfit_run(Variant::PYNET_CA, 1, dir.path() / "c", 700);
        const auto files = checkpoint_files();
        for (const auto& f : files) {
            const auto a = slurp(dir.path() / "a" / f);
            if (a.empty()) return {false, f + " missing"};
            if (a != slurp(dir.path() / "b" / f)) return {false, "repeat run: " + f + " differs"};
            if (a != slurp(dir.path() / "c" / f)) return {false, "resumed run: " + f + " differs"};
        }
        const auto la = epoch_records(dir.path() / "a");
        if (la != epoch_records(dir.path() / "b")) return {false, "repeat run: validation records differ"};
        if (la != epoch_records(dir.path() / "c")) return {false, "resumed run: validation records differ"};
        if (first->after.psnr != second.after.psnr || first->after.psnr != resumed.after.psnr)
            return {false, "final training PSNR differs"};
        return {true, fmt("%zu checkpoints and %zu validation records bit-identical across repeat and resume at step 700",
                          files.size(), la.size())};
    });
}

void ablation_group() {
    run_criterion("ablation", []() -> Outcome {
        std::map<Variant, double> mean;
        std::string detail;
        for (auto v : {Variant::PYNET, Variant::PYNET_SRM, Variant::PYNET_CA}) {
            for (std::uint64_t seed : {1, 2, 3}) {
                test_support::TempDir dir;
                mean[v] += overfit_run(v, seed, dir.path()).after.psnr / 3;
            }
            detail += fmt("%s %.2f dB; ", std::string(variant_label(v)).c_str(), mean[v]);
        }
        const double slack = 0.5;
        const bool ok = mean[Variant::PYNET_CA] >= mean[Variant::PYNET_SRM] - slack &&
                        mean[Variant::PYNET_SRM] >= mean[Variant::PYNET] - slack;
        Outcome o{ok, detail + "ordering CA >= SRM >= PyNET within 0.5 dB " + (ok ? "holds" : "does not hold")};
        o.warn_only = true;
        return o;
    });
}

}  // namespace

int main(int argc, char** argv) {
    std::set<std::string> groups(argv + 1, argv + argc);
    if (groups.empty()) groups = {"fast", "overfit", "ablation"};
    if (groups.count("fast")) {
        run_criterion("shape", shape_suite);
        run_criterion("gradient", gradient_suite);
        run_criterion("loss_oracle", loss_oracle_suite);
        run_criterion("schedule", schedule_suite);
        run_criterion("bayer_equivariance", bayer_suite);
        run_criterion("roundtrip", roundtrip_suite);
    }
    if (groups.count("overfit")) overfit_group();
    if (groups.count("ablation")) ablation_group();
    return hard_failures == 0 ? 0 : 1;
}
