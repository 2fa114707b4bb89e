#include <gtest/gtest.h>

#include <fstream>
#include <random>

#include "pyramid_isp/pyramid_isp.hpp"
#include "support/oracles.hpp"
#include "support/temp_dir.hpp"

using namespace pyramid_isp;

namespace {

ModelConfig tiny() {
    auto c = ModelConfig::for_variant(Variant::PYNET_CA, 4);
    c.seed = 2;
    return c;
}

PackedRaw<double> random_packed(std::uint64_t seed, int h, int w, BayerPattern p = BayerPattern::RGGB) {
    std::mt19937_64 g(seed);
    return pack_bayer<double>(oracle::random_mosaic(g, h, w, 10, p));
}

}  // namespace

TEST(Transforms, IdentityLeavesInputUnchanged) {
    const auto p = random_packed(1, 8, 12);
    const auto t = transform_packed(p, GeoTransform{});
    EXPECT_EQ(t.values, p.values);
    EXPECT_EQ(t.pattern, p.pattern);
}

TEST(Transforms, HflipSwapsColumnOffsetPairs) {
    const auto p = random_packed(2, 8, 8);
    const auto t = transform_packed(p, GeoTransform{0, true});
    EXPECT_EQ(packed_permutation(GeoTransform{0, true}), (std::array<int, 4>{1, 0, 3, 2}));
    const int w = p.width();
    for (int c = 0; c < 4; ++c)
        for (int y = 0; y < p.height(); ++y)
            for (int x = 0; x < w; ++x) EXPECT_EQ(t.values.at(c, y, x), p.values.at(c ^ 1, y, w - 1 - x));
    EXPECT_EQ(t.pattern, BayerPattern::GRBG);
}

TEST(Transforms, PackedAgreesWithMosaicTransform) {
    std::mt19937_64 g(3);
    for (int trial = 0; trial < 5; ++trial) {
        const auto m = oracle::random_mosaic(g, 8, 8, 10, BayerPattern::RGGB);
        for (const auto& t : all_transforms()) {
            const auto a = transform_packed(pack_bayer<double>(m), t);
            const auto b = pack_bayer<double>(transform_mosaic(m, t));
            EXPECT_EQ(a.values, b.values);
            EXPECT_EQ(a.pattern, b.pattern);
        }
    }
}

TEST(Transforms, GroupLaws) {
    const GeoTransform r2{2, false}, r1{1, false};
    EXPECT_EQ(compose(r2, r2), GeoTransform{});
    EXPECT_EQ(compose(r1, compose(r1, compose(r1, r1))), GeoTransform{});
    for (const auto& t : all_transforms()) EXPECT_EQ(compose(inverse(t), t), GeoTransform{});
}

TEST(Transforms, RgbRoundTripsExact) {
    std::mt19937_64 g(4);
    const RgbImage<double> img{oracle::random_tensor(g, {3, 6, 10}, -1, 1)};
    for (const auto& t : all_transforms()) EXPECT_EQ(transform_rgb(transform_rgb(img, t), inverse(t)).values, img.values);
}

TEST(Ensemble, ConstantPredictorGivesTheConstant) {
    const Predictor<double> f = [](const PackedRaw<double>& r) {
        return RgbImage<double>{Tensor<double>::chw(3, 2 * r.height(), 2 * r.width(), 0.25)};
    };
    const auto out = predict(random_packed(5, 8, 12), f, true);
    for (double v : out.values.vec()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Ensemble, OffEqualsPlainForward) {
    const PyNetCA<double> model(tiny());
    const auto p = random_packed(6, 64, 64);
    EXPECT_EQ(predict(p, model, false).values, model.forward(p, 0).full_res.value());
}

TEST(Ensemble, MatchesBruteForceAverage) {
    const PyNetCA<double> model(tiny());
    std::mt19937_64 g(7);
    const auto m = oracle::random_mosaic(g, 64, 64, 10, BayerPattern::RGGB);
    const auto got = predict(pack_bayer<double>(m), model, true);
    Tensor<double> acc = Tensor<double>::chw(3, 64, 64);
    for (int i = 0; i < 8; ++i) {
        const int rot = i % 4;
        const bool flip = i >= 4;
        const auto tm = oracle::transform_mosaic(m, rot, flip);
        const auto out = model.forward(pack_bayer<double>(tm), 0).full_res.value();
        // pull each output pixel back to where its source pixel started
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < 64; ++y)
                for (int x = 0; x < 64; ++x) {
                    const auto p = oracle::place(y, x, 64, 64, rot, flip);
                    acc.at(c, y, x) += out.at(c, p.y, p.x);
                }
    }
    for (std::size_t i = 0; i < acc.size(); ++i) EXPECT_NEAR(got.values[i], acc[i] / 8, 1e-12);
}

TEST(Ensemble, EquivariantFunctionGivesSingleShot) {
    // broadcast the per-pixel mean of the four phases: commutes with every transform
    const Predictor<double> f = [](const PackedRaw<double>& r) {
        RgbImage<double> out{Tensor<double>::chw(3, 2 * r.height(), 2 * r.width())};
        for (int y = 0; y < 2 * r.height(); ++y)
            for (int x = 0; x < 2 * r.width(); ++x) {
                double s = 0;
                for (int c = 0; c < 4; ++c) s += r.values.at(c, y / 2, x / 2);
                for (int c = 0; c < 3; ++c) out.values.at(c, y, x) = s / 4;
            }
        return out;
    };
    const auto p = random_packed(8, 16, 16);
    const auto single = predict(p, f, false), ens = predict(p, f, true);
    for (std::size_t i = 0; i < single.values.size(); ++i) EXPECT_NEAR(ens.values[i], single.values[i], 1e-12);
}

TEST(Ensemble, WorkersDoNotChangeTheResult) {
    const PyNetCA<double> model(tiny());
    const auto p = random_packed(9, 64, 64);
    EXPECT_EQ(predict(p, model, true, 1).values, predict(p, model, true, 4).values);
}

TEST(Ensemble, EightPassesPerImage) {
    PyNetCA<float> model(tiny());
    std::mt19937_64 g(10);
    const auto p = pack_bayer<float>(oracle::random_mosaic(g, 64, 64, 10, BayerPattern::RGGB));
    predict(p, model, true);
    EXPECT_EQ(model.forward_passes(), 8u);
    model.reset_pass_counter();
    predict(p, model, false);
    EXPECT_EQ(model.forward_passes(), 1u);
}

class BatchInference : public ::testing::Test {
protected:
    void SetUp() override {
        write_synthetic_split(dir.path(), "val", 3, 64, 4);
        manifest = load_manifest(dir.path(), std::nullopt, {"val", 64, 10, BayerPattern::RGGB}).manifest;
    }
    test_support::TempDir dir;
    DatasetManifest manifest;
    PyNetCA<float> model{tiny()};
};

TEST_F(BatchInference, WritesOnePngPerInput) {
    const auto s = infer_batch(manifest, model, dir.path() / "out", false);
    EXPECT_EQ(s.count_ok, 3);
    EXPECT_EQ(s.count_failed, 0);
    for (const auto& p : manifest.pairs) EXPECT_TRUE(std::filesystem::exists(dir.path() / "out" / (p.id + ".png")));
}

TEST_F(BatchInference, CorruptInputIsSkippedAndReported) {
    std::ofstream(manifest.pairs[1].raw_path, std::ios::trunc) << "broken";
    const auto s = infer_batch(manifest, model, dir.path() / "out", false);
    EXPECT_EQ(s.count_ok, 2);
    ASSERT_EQ(s.count_failed, 1);
    EXPECT_EQ(s.failures[0].first, manifest.pairs[1].id);
    EXPECT_FALSE(std::filesystem::exists(dir.path() / "out" / (manifest.pairs[1].id + ".png")));
}

TEST_F(BatchInference, OutputsRoundTripWithinOneStep) {
    infer_batch(manifest, model, dir.path() / "out", true);
    for (const auto& p : manifest.pairs) {
        const auto raw = pack_bayer<float>(png::read_mosaic(p.raw_path, 10, BayerPattern::RGGB));
        const auto mem = predict(raw, model, true);
        const auto disk = normalize_rgb<float>(png::read_rgb8(dir.path() / "out" / (p.id + ".png")));
        for (std::size_t i = 0; i < mem.values.size(); ++i)
            EXPECT_LE(std::abs(disk.values[i] - std::clamp(mem.values[i], -1.0f, 1.0f)), 1.0f / 255.0f + 1e-6f);
    }
}

TEST_F(BatchInference, UnwritableOutputIsAnIoError) {
    std::ofstream(dir.path() / "file") << "x";
    EXPECT_THROW(infer_batch(manifest, model, dir.path() / "file" / "sub", false), IoError);
}
