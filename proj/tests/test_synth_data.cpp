#include <gtest/gtest.h>

#include <filesystem>

#include "ruackit/benchmark.hpp"
#include "ruackit/synth_data.hpp"

using namespace ruackit;

TEST(GenScene, DeterministicGivenSeed) {
    SceneSpec spec;
    spec.h = spec.w = 32;
    spec.n_objects = 2;
    Scene a = gen_scene(7, spec);
    Scene b = gen_scene(7, spec);
    EXPECT_EQ(grid_content_hash(a.image), grid_content_hash(b.image));
    ASSERT_EQ(a.masks.size(), b.masks.size());
    for (size_t k = 0; k < a.masks.size(); ++k)
        EXPECT_EQ(grid_content_hash(a.masks[k]), grid_content_hash(b.masks[k]));
    for (size_t k = 0; k < a.clicks.size(); ++k) {
        ASSERT_EQ(a.clicks[k].size(), b.clicks[k].size());
        for (size_t i = 0; i < a.clicks[k].size(); ++i) {
            EXPECT_EQ(a.clicks[k][i].y, b.clicks[k][i].y);
            EXPECT_EQ(a.clicks[k][i].x, b.clicks[k][i].x);
            EXPECT_EQ(a.clicks[k][i].label, b.clicks[k][i].label);
        }
    }
}

TEST(GenScene, MasksDisjointAndLargeEnough) {
    for (std::uint64_t seed = 1; seed <= 30; ++seed) {
        SceneSpec spec;
        spec.h = spec.w = 48;
        spec.n_objects = 1 + static_cast<int>(seed % 3);
        Scene s = gen_scene(seed, spec);
        EXPECT_EQ(s.masks.size(), static_cast<size_t>(spec.n_objects));
        Grid cover({48, 48});
        for (const Grid& m : s.masks) {
            EXPECT_GE(m.sum(), 0.01 * 48 * 48);
            for (std::int64_t i = 0; i < m.size(); ++i)
                if (m[i] > 0.5) {
                    EXPECT_EQ(cover[i], 0.0);  // pairwise disjoint
                    cover[i] = 1.0;
                }
        }
        for (std::int64_t i = 0; i < s.image.size(); ++i) {
            EXPECT_GE(s.image[i], 0.0);
            EXPECT_LE(s.image[i], 1.0);
        }
    }
}

TEST(GenScene, RejectsBadSpecs) {
    SceneSpec tiny;
    tiny.h = 8;
    EXPECT_THROW(gen_scene(1, tiny), std::invalid_argument);
    SceneSpec many;
    many.n_objects = 4;
    EXPECT_THROW(gen_scene(1, many), std::invalid_argument);
}

TEST(Clicks, ProtocolInvariantsOnManyScenes) {
    int checked = 0;
    for (std::uint64_t seed = 100; seed < 160; ++seed) {
        SceneSpec spec;
        spec.h = spec.w = 40;
        spec.n_objects = 1 + static_cast<int>(seed % 3);
        Scene s = gen_scene(seed, spec);
        for (size_t k = 0; k < s.masks.size(); ++k) {
            int n_pos = 0, n_neg = 0;
            for (const Click& c : s.clicks[k]) {
                if (c.label == +1) {
                    EXPECT_GT(s.masks[k].at(c.y, c.x), 0.5);  // positive inside its object
                    ++n_pos;
                } else {
                    for (const Grid& m : s.masks)
                        EXPECT_LT(m.at(c.y, c.x), 0.5);  // negative outside all objects
                    ++n_neg;
                }
            }
            EXPECT_EQ(n_pos, 2);  // 2-positive / 1-negative default split
            EXPECT_EQ(n_neg, 1);
            ++checked;
        }
    }
    EXPECT_GT(checked, 60);
}

TEST(Clicks, SinglePixelObject) {
    Grid mask({16, 16});
    mask.at(5, 7) = 1.0;
    std::vector<Click> clicks = sample_clicks(mask, {}, 1, 4.0, 0);
    ASSERT_EQ(clicks.size(), 1u);
    EXPECT_EQ(clicks[0].y, 5);
    EXPECT_EQ(clicks[0].x, 7);
    EXPECT_EQ(clicks[0].label, +1);
}

TEST(ApplyShift, ZeroMagnitudeIsIdentity) {
    SceneSpec spec;
    spec.h = spec.w = 32;
    Scene s = gen_scene(3, spec);
    for (ShiftKind kind : {ShiftKind::kColorTransfer, ShiftKind::kBlur, ShiftKind::kTextureSwap,
                           ShiftKind::kElastic}) {
        Scene shifted = apply_shift(s, {kind, 0.0, 5});
        EXPECT_EQ(grid_content_hash(shifted.image), grid_content_hash(s.image));
        for (size_t k = 0; k < s.masks.size(); ++k)
            EXPECT_EQ(grid_content_hash(shifted.masks[k]), grid_content_hash(s.masks[k]));
    }
}

TEST(ApplyShift, AppearanceShiftsPreserveMasksBitExactly) {
    SceneSpec spec;
    spec.h = spec.w = 32;
    spec.n_objects = 2;
    Scene s = gen_scene(4, spec);
    for (ShiftKind kind : {ShiftKind::kColorTransfer, ShiftKind::kBlur, ShiftKind::kTextureSwap}) {
        Scene shifted = apply_shift(s, {kind, 0.8, 6});
        bool image_changed = grid_content_hash(shifted.image) != grid_content_hash(s.image);
        EXPECT_TRUE(image_changed) << shift_kind_name(kind);
        for (size_t k = 0; k < s.masks.size(); ++k)
            EXPECT_EQ(grid_content_hash(shifted.masks[k]), grid_content_hash(s.masks[k]));
    }
}

TEST(ApplyShift, ElasticDisplacementBounded) {
    SceneSpec spec;
    spec.h = spec.w = 48;
    spec.n_objects = 1;
    for (std::uint64_t seed = 10; seed < 20; ++seed) {
        Scene s = gen_scene(seed, spec);
        double m = 2.5;
        Scene shifted = apply_shift(s, {ShiftKind::kElastic, m, seed});
        // every warped-mask foreground pixel lies within m (+bilinear support
        // of 1) pixels of an original foreground pixel
        for (int y = 0; y < 48; ++y)
            for (int x = 0; x < 48; ++x) {
                if (shifted.masks[0].at(y, x) < 0.5) continue;
                double best = 1e300;
                for (int yy = std::max(0, y - 5); yy < std::min(48, y + 6); ++yy)
                    for (int xx = std::max(0, x - 5); xx < std::min(48, x + 6); ++xx)
                        if (s.masks[0].at(yy, xx) > 0.5) {
                            double dy = y - yy, dx = x - xx;
                            best = std::min(best, std::max(std::abs(dy), std::abs(dx)));
                        }
                EXPECT_LE(best, m + 1.0);
            }
        // clicks remain valid on the warped masks
        for (const Click& c : shifted.clicks[0])
            if (c.label == +1) EXPECT_GT(shifted.masks[0].at(c.y, c.x), 0.5);
    }
}

TEST(Benchmark, DefaultConfigCounts) {
    BenchmarkConfig cfg;
    cfg.n_train = 8;
    cfg.n_val = 4;
    cfg.n_ood = 3;
    Benchmark b = build_benchmark(cfg);
    EXPECT_EQ(b.train.size(), 8u);
    EXPECT_EQ(b.val.size(), 4u);
    ASSERT_EQ(b.domains.size(), 6u);  // 2 magnitudes x 3 shift kinds
    for (const auto& d : b.domains) EXPECT_EQ(d.scenes.size(), 3u);
    // OOD seeds disjoint from the source split
    for (const auto& d : b.domains)
        for (const Scene& s : d.scenes) {
            for (const Scene& t : b.train) EXPECT_NE(s.seed, t.seed);
            for (const Scene& v : b.val) EXPECT_NE(s.seed, v.seed);
        }
}

TEST(Benchmark, ManifestRoundTripReproducesEveryPixel) {
    BenchmarkConfig cfg;
    cfg.n_train = 4;
    cfg.n_val = 2;
    cfg.n_ood = 2;
    cfg.h = cfg.w = 32;
    Benchmark b = build_benchmark(cfg);
    auto dir = std::filesystem::temp_directory_path() / "ruackit_bench_test";
    std::filesystem::remove_all(dir);
    save_benchmark(dir, b, /*previews=*/false);
    Benchmark loaded = load_benchmark(dir);  // regenerates and verifies hashes
    ASSERT_EQ(loaded.train.size(), b.train.size());
    for (size_t i = 0; i < b.train.size(); ++i)
        EXPECT_EQ(grid_content_hash(loaded.train[i].image), grid_content_hash(b.train[i].image));
    for (size_t d = 0; d < b.domains.size(); ++d)
        for (size_t i = 0; i < b.domains[d].scenes.size(); ++i)
            EXPECT_EQ(grid_content_hash(loaded.domains[d].scenes[i].image),
                      grid_content_hash(b.domains[d].scenes[i].image));
    std::filesystem::remove_all(dir);
}
