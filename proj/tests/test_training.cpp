#include <gtest/gtest.h>

#include <fstream>
#include <random>

#include "pyramid_isp/pyramid_isp.hpp"
#include "support/oracles.hpp"
#include "support/temp_dir.hpp"

using namespace pyramid_isp;

namespace {

ModelConfig tiny(std::uint64_t seed = 1) {
    auto c = ModelConfig::for_variant(Variant::PYNET_CA, 4);
    c.seed = seed;
    return c;
}

TrainPlan short_plan(int epochs) {
    TrainPlan p;
    for (int k = 0; k <= 5; ++k) p.epochs_per_level[k] = epochs;
    p.seed = 5;
    return p;
}

std::vector<std::string> read_lines(const std::filesystem::path& p) {
    std::ifstream is(p);
    std::vector<std::string> out;
    for (std::string l; std::getline(is, l);) out.push_back(l);
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// One-cycle schedule

TEST(OneCycle, EndpointsAndPeak) {
    const OneCycle p;
    for (long total : {2L, 3L, 11L, 96L, 101L, 1000L}) {
        EXPECT_DOUBLE_EQ(one_cycle_lr(0, total, p), 5e-5) << total;
        EXPECT_DOUBLE_EQ(one_cycle_lr(total - 1, total, p), 5e-7) << total;
        double mx = 0;
        for (long s = 0; s < total; ++s) mx = std::max(mx, one_cycle_lr(s, total, p));
        if (total > 2) EXPECT_NEAR(mx, 1e-4, 1e-12) << total;
    }
    EXPECT_NEAR(one_cycle_lr(200, 1001, p), 1e-4, 1e-12);
}

TEST(OneCycle, RisesThenFalls) {
    const OneCycle p;
    const long total = 500;
    long peak = 0;
    for (long s = 1; s < total; ++s)
        if (one_cycle_lr(s, total, p) > one_cycle_lr(peak, total, p)) peak = s;
    for (long s = 1; s <= peak; ++s) EXPECT_GE(one_cycle_lr(s, total, p), one_cycle_lr(s - 1, total, p));
    for (long s = peak + 1; s < total; ++s) EXPECT_LE(one_cycle_lr(s, total, p), one_cycle_lr(s - 1, total, p));
    EXPECT_EQ(peak, 100);
}

TEST(OneCycle, RejectsBadInput) {
    EXPECT_THROW(one_cycle_lr(0, 1, OneCycle{}), ContractError);
    EXPECT_THROW(one_cycle_lr(5, 5, OneCycle{}), ContractError);
    OneCycle bad;
    bad.warmup_fraction = 1.0;
    EXPECT_THROW(bad.validate(), ConfigError);
    bad = OneCycle{};
    bad.lr_start = 2e-4;
    EXPECT_THROW(bad.validate(), ConfigError);
}

// ---------------------------------------------------------------------------
// Optimizer

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
    ParameterSet<double> ps;
    ps.add("w", Tensor<double>({3}, std::vector<double>{1, 2, 3}));
    ps.get("w").grad_ref().fill(0.0);
    Adam<double> opt;
    opt.step(ps, 1e-3);
    EXPECT_EQ(ps.get("w").value().vec(), (std::vector<double>{1, 2, 3}));
    EXPECT_EQ(opt.steps(), 1);
}

TEST(Adam, UpdateVanishesWithLearningRate) {
    double prev = std::numeric_limits<double>::infinity();
    for (double lr : {1e-2, 1e-4, 1e-6, 0.0}) {
        ParameterSet<double> ps;
        ps.add("w", Tensor<double>({2}, std::vector<double>{1, -1}));
        ps.get("w").grad_ref().vec() = {0.3, -0.7};
        Adam<double> opt;
        opt.step(ps, lr);
        const double d = std::abs(ps.get("w").value()[0] - 1.0);
        EXPECT_LT(d, prev);
        prev = d;
    }
    EXPECT_EQ(prev, 0.0);
}

TEST(Adam, FirstStepMovesByLearningRate) {
    ParameterSet<double> ps;
    ps.add("w", Tensor<double>({1}, std::vector<double>{0.5}));
    ps.get("w").grad_ref()[0] = 4.0;
    Adam<double> opt;
    opt.step(ps, 1e-3);
    EXPECT_NEAR(ps.get("w").value()[0], 0.5 - 1e-3, 1e-10);
}

TEST(Adam, NonFiniteGradientAbortsBeforeAnyUpdate) {
    ParameterSet<double> ps;
    ps.add("a", Tensor<double>({1}, std::vector<double>{1}));
    ps.add("b", Tensor<double>({1}, std::vector<double>{1}));
    ps.get("a").grad_ref()[0] = 1.0;
    ps.get("b").grad_ref()[0] = std::numeric_limits<double>::quiet_NaN();
    Adam<double> opt;
    try {
        opt.step(ps, 1e-3);
        FAIL();
    } catch (const NonFiniteError& e) {
        EXPECT_NE(std::string(e.what()).find("'b'"), std::string::npos);
        EXPECT_EQ(e.exit_code(), 4);
    }
    EXPECT_EQ(ps.get("a").value()[0], 1.0);
}

// ---------------------------------------------------------------------------
// Plans and selection

TEST(Plan, TrackDefaults) {
    EXPECT_EQ(TrainPlan{}.epochs(0), 16);
    EXPECT_EQ(TrainPlan::for_track(Track::PERCEPTUAL).epochs(0), 32);
    EXPECT_EQ(TrainPlan::for_track(Track::PERCEPTUAL).epochs(1), 16);
    EXPECT_EQ(TrainPlan::for_track(Track::FIDELITY).effective_selection(), SelectionMetric::VAL_PSNR);
    auto p = TrainPlan::for_track(Track::PERCEPTUAL);
    EXPECT_EQ(p.effective_selection(), SelectionMetric::VAL_NEG_MSSSIM);
    p.lpips_plugin = "/bin/true";
    EXPECT_EQ(p.effective_selection(), SelectionMetric::VAL_LPIPS);
}

TEST(Plan, LpipsWithoutPluginIsAConfigError) {
    auto p = TrainPlan::for_track(Track::PERCEPTUAL);
    p.selection_metric = SelectionMetric::VAL_LPIPS;
    EXPECT_THROW(p.validate(), ConfigError);
    p.lpips_plugin = "/nonexistent/lpips";
    EXPECT_THROW(p.validate(), ConfigError);
}

TEST(State, JsonRoundTripWithInfiniteBest) {
    TrainState s;
    s.current_level = 2;
    s.epoch = 3;
    s.batch = 4;
    s.global_step = 99;
    s.best_metric = std::numeric_limits<double>::infinity();
    s.best_checkpoint_path = "x/level2_best.ckpt";
    const nlohmann::json j = s;
    const auto back = nlohmann::json::parse(j.dump()).get<TrainState>();
    EXPECT_EQ(back.current_level, 2);
    EXPECT_EQ(back.global_step, 99);
    EXPECT_TRUE(std::isinf(back.best_metric));
    EXPECT_EQ(back.best_checkpoint_path, s.best_checkpoint_path);
}

// ---------------------------------------------------------------------------
// Trainer, at toy scale

class TinyTraining : public ::testing::Test {
protected:
    MemorySource<float> train{synthetic_samples<float>(3, 64, 11)};
    MemorySource<float> val{synthetic_samples<float>(1, 64, 12)};
    RandomConvExtractor<float> fx;
    test_support::TempDir dir;
};

TEST_F(TinyTraining, LevelsRunCoarseToFineAndLogEverything) {
    PyNetCA<float> model(tiny());
    Trainer<float> tr(model, short_plan(1), train, val, &fx, {dir.path() / "run"});
    const auto best = tr.run_progressive();
    EXPECT_TRUE(std::filesystem::exists(best));
    EXPECT_EQ(read_best_marker(dir.path() / "run"), best.string());
    std::vector<int> step_levels;
    int epochs = 0;
    for (const auto& line : read_lines(dir.path() / "run" / "train_log.ndjson")) {
        const auto j = nlohmann::json::parse(line);
        if (j.contains("loss_total")) {
            step_levels.push_back(j.at("level").get<int>());
            for (const char* k : {"step", "lr", "loss_mse", "loss_vgg", "loss_msssim"}) EXPECT_TRUE(j.contains(k)) << k;
            if (j.at("level").get<int>() >= 4) {
                EXPECT_EQ(j.at("loss_vgg").get<double>(), 0.0);
                EXPECT_EQ(j.at("loss_msssim").get<double>(), 0.0);
            }
        } else if (j.contains("epoch")) {
            ++epochs;
            for (const char* k : {"val_psnr", "val_ssim", "val_msssim"}) EXPECT_TRUE(j.contains(k)) << k;
        }
    }
    ASSERT_EQ(step_levels.size(), 18u);
    EXPECT_TRUE(std::is_sorted(step_levels.rbegin(), step_levels.rend()));
    EXPECT_EQ(step_levels.front(), 5);
    EXPECT_EQ(step_levels.back(), 0);
    EXPECT_EQ(epochs, 6);
    for (int k = 0; k <= 5; ++k) EXPECT_TRUE(std::filesystem::exists(dir.path() / "run" / ("level" + std::to_string(k) + "_final.ckpt")));
}

TEST_F(TinyTraining, ResumeMidLevelMatchesUninterruptedRun) {
    PyNetCA<float> a(tiny());
    Trainer<float> ta(a, short_plan(2), train, val, &fx, {dir.path() / "a"});
    ta.run_progressive();

    PyNetCA<float> b(tiny());
    TrainerOptions stop{dir.path() / "b"};
    stop.stop_after_global_step = 16;  // inside level 3, mid-epoch
    {
        Trainer<float> tb(b, short_plan(2), train, val, &fx, stop);
        EXPECT_TRUE(tb.run_progressive().empty());
        EXPECT_TRUE(tb.stopped());
        EXPECT_EQ(tb.state().current_level, 3);
    }
    PyNetCA<float> c(tiny());
    Trainer<float> tc(c, short_plan(2), train, val, &fx, {dir.path() / "b"});
    tc.resume(dir.path() / "b" / "train_state.ckpt");
    tc.run_progressive();
    EXPECT_TRUE(a.params().values_equal(c.params()));
    EXPECT_EQ(ta.state().best_metric, tc.state().best_metric);
}

TEST_F(TinyTraining, SameSeedGivesIdenticalParameters) {
    PyNetCA<float> a(tiny()), b(tiny());
    Trainer<float> ta(a, short_plan(1), train, val, &fx, {dir.path() / "a"});
    Trainer<float> tb(b, short_plan(1), train, val, &fx, {dir.path() / "b"});
    ta.train_level(5);
    tb.train_level(5);
    EXPECT_TRUE(a.params().values_equal(b.params()));
}

TEST_F(TinyTraining, NonFiniteLossAbortsWithSnapshot) {
    PyNetCA<float> model(tiny());
    model.params().get("level5/head/conv.bias").mutable_value()[0] = std::numeric_limits<float>::quiet_NaN();
    Trainer<float> tr(model, short_plan(1), train, val, &fx, {dir.path() / "nan"});
    EXPECT_THROW(tr.train_level(5), NonFiniteError);
    bool event = false;
    for (const auto& line : read_lines(dir.path() / "nan" / "train_log.ndjson"))
        if (nlohmann::json::parse(line).contains("event")) event = true;
    EXPECT_TRUE(event);
}

TEST_F(TinyTraining, ResumeRejectsForeignState) {
    PyNetCA<float> model(tiny());
    save_model(dir.path() / "m.ckpt", model);
    Trainer<float> tr(model, short_plan(1), train, val, &fx, {dir.path() / "r"});
    EXPECT_THROW(tr.resume(dir.path() / "m.ckpt"), ConfigError);
}

// ---------------------------------------------------------------------------
// Configuration

TEST(Config, SerializeParseIdentity) {
    RunConfig c;
    c.variant = Variant::PYNET_SRM;
    c.seed = 1234567890123ULL;
    c.data_root = "/data/zrr";
    c.exclusion_file = "/data/zrr/excluded.txt";
    c.output_dir = "runs/a b \"quoted\"";
    c.data.patch_size = 64;
    c.data.workers = 3;
    c.data.pattern = BayerPattern::GBRG;
    c.model.base_width = 8;
    c.model.norm_levels = {1, 4};
    c.model.leaky_slope = 0.1;
    c.model.blocks[5] = parse_blocks("mcca3x1+res, mcca5x2");
    c.plan.lr.lr_max = 3e-3;
    c.plan.lr.lr_start = 1.0 / 3.0 * 1e-3;
    c.plan.batch_size = 4;
    c.plan.epochs_per_level[2] = 7;
    c.plan.selection_metric = SelectionMetric::VAL_NEG_MSSSIM;
    c.set_track(Track::PERCEPTUAL, false);
    c.sync();
    const auto text = serialize_config(c);
    EXPECT_EQ(parse_config(text), c);
    EXPECT_EQ(serialize_config(parse_config(text)), text);
}

TEST(Config, DefaultsRoundTrip) {
    RunConfig c;
    c.sync();
    EXPECT_EQ(parse_config(serialize_config(c)), c);
}

TEST(Config, UnknownKeyAndBadValueReportLines) {
    try {
        parse_config("[run]\nseed = 3\nbogus = 1\n");
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("bogus"), std::string::npos);
    }
    try {
        parse_config("[run]\n\nseed = \"x\"\n");
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
    }
}

TEST(Config, VariantFixesSwitches) {
    for (auto v : {Variant::PYNET, Variant::PYNET_SRM, Variant::PYNET_CA}) {
        RunConfig c;
        c.variant = v;
        c.sync();
        EXPECT_EQ(c.model.variant(), v);
    }
    RunConfig c;
    c.variant = Variant::PYNET;
    c.sync();
    EXPECT_FALSE(c.model.use_channel_attention);
    EXPECT_EQ(c.model.head_mode, HeadMode::UPSAMPLE_CONV);
}

TEST(Config, PerceptualTrackKeepsExplicitLevelZeroEpochs) {
    const auto parsed = parse_config_ex("[plan]\nepochs_level0 = 20\n");
    EXPECT_TRUE(parsed.level0_epochs_explicit);
    RunConfig c = parsed.config;
    c.set_track(Track::PERCEPTUAL, parsed.level0_epochs_explicit);
    EXPECT_EQ(c.plan.epochs(0), 20);
    RunConfig d;
    d.set_track(Track::PERCEPTUAL, false);
    EXPECT_EQ(d.plan.epochs(0), 32);
}

TEST(Config, ValidationCatchesBadPatchSize) {
    RunConfig c;
    c.data.patch_size = 100;
    EXPECT_THROW(c.validate(), ConfigError);
}

// ---------------------------------------------------------------------------
// Report

TEST(Report, MalformedLinesAreReportedAndSkipped) {
    std::istringstream is(
        "{\"config\":\"x\"}\n"
        "{\"step\":0,\"level\":5,\"lr\":5e-05,\"loss_mse\":1,\"loss_vgg\":0,\"loss_msssim\":0,\"loss_total\":1}\n"
        "garbage\n"
        "{\"epoch\":0,\"level\":5,\"step\":1,\"val_psnr\":\"inf\",\"val_ssim\":null,\"val_msssim\":null}\n"
        "{\"step\":1,\"level\":5}\n");
    const auto log = parse_training_log(is);
    EXPECT_EQ(log.steps.size(), 1u);
    ASSERT_EQ(log.epochs.size(), 1u);
    EXPECT_TRUE(std::isinf(log.epochs[0].val_psnr));
    ASSERT_EQ(log.bad_lines.size(), 2u);
    EXPECT_EQ(log.bad_lines[0].first, 3);
    EXPECT_EQ(log.bad_lines[1].first, 5);
}

TEST(Report, CsvRowsMatchStepsAndPlotsRender) {
    test_support::TempDir dir;
    std::ofstream os(dir.path() / "log.ndjson");
    const OneCycle p;
    for (long s = 0; s < 50; ++s)
        os << nlohmann::json{{"step", s}, {"level", 5}, {"lr", one_cycle_lr(s, 50, p)}, {"loss_mse", 1.0 / (s + 1)},
                             {"loss_vgg", 0}, {"loss_msssim", 0}, {"loss_total", 1.0 / (s + 1)}}
                  .dump()
           << '\n';
    os.close();
    const auto files = write_training_report(dir.path() / "log.ndjson", dir.path() / "out");
    EXPECT_TRUE(files.bad_lines.empty());
    const auto lines = read_lines(dir.path() / "out" / "lr_curve.csv");
    ASSERT_EQ(lines.size(), 51u);
    EXPECT_EQ(lines[0], "step,level,lr");
    EXPECT_EQ(std::stod(lines[1].substr(lines[1].rfind(',') + 1)), 5e-5);
    const auto img = png::read_rgb8(dir.path() / "out" / "loss_level5.png");
    EXPECT_EQ(img.width, 640);
}

TEST(Report, ParamFlopTableListsVariantsAndLevels) {
    std::vector<std::pair<std::string, ModelConfig>> v{{"PyNET", ModelConfig::for_variant(Variant::PYNET, 4)},
                                                       {"PyNET-CA", ModelConfig::for_variant(Variant::PYNET_CA, 4)}};
    const auto t = param_flop_table(v, 64);
    EXPECT_NE(t.find("PyNET-CA"), std::string::npos);
    EXPECT_NE(t.find("total"), std::string::npos);
    EXPECT_LT(t.find("PyNET ("), t.find("PyNET-CA ("));
}
