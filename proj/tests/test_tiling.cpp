#include <gtest/gtest.h>

#include "crib/rng.hpp"
#include "crib/tiling.hpp"

using namespace crib;

namespace {

PipelineConfig default_cfg() { return PipelineConfig{}; }

TEST(TissueMask, AllWhiteImageGivesEmptyMask) {
    Image img(64, 64, 255);
    auto m = tissue_mask(img);
    EXPECT_EQ(m.count_nonzero(), 0u);
}

TEST(TissueMask, BimodalImageSplitsExactly) {
    Image img(64, 64, 255);
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 32; ++x)
            for (int c = 0; c < 3; ++c) img.at(x, y, c) = 10;
    auto m = tissue_mask(img);
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x)
            EXPECT_EQ(m.at(x, y) != 0, x < 32) << x << "," << y;
}

TEST(Grid, ClosedFormCounts) {
    auto cfg = default_cfg();
    auto g = extract_grid(512, 384, cfg);
    EXPECT_EQ(g.size(), 6u);
    std::set<std::pair<int, int>> origins;
    for (const auto& p : g) origins.insert({p.x, p.y});
    EXPECT_TRUE(origins.count({0, 0}));
    EXPECT_TRUE(origins.count({128, 0}));
    EXPECT_TRUE(origins.count({256, 0}));
    EXPECT_TRUE(origins.count({0, 128}));
    EXPECT_TRUE(origins.count({256, 128}));

    EXPECT_EQ(extract_grid(256, 256, cfg).size(), 1u);
    EXPECT_EQ(extract_grid(1536, 1536, cfg).size(), 121u);
}

TEST(Grid, RandomSizesMatchClosedForm) {
    auto cfg = default_cfg();
    auto st = rng::stream(77, "gridtest");
    for (int t = 0; t < 50; ++t) {
        const int w = 256 + static_cast<int>(st.uniform_int(2048));
        const int h = 256 + static_cast<int>(st.uniform_int(2048));
        const std::size_t expected =
            (static_cast<std::size_t>((w - 256) / 128) + 1) * (static_cast<std::size_t>((h - 256) / 128) + 1);
        EXPECT_EQ(extract_grid(w, h, cfg).size(), expected) << w << "x" << h;
    }
}

TEST(Grid, RowMajorOriginArithmetic) {
    auto g = extract_grid(640, 640, default_cfg());
    for (const auto& p : g) {
        EXPECT_EQ(p.x, p.j * 128);
        EXPECT_EQ(p.y, p.i * 128);
    }
    // Row-major: i changes slowest.
    for (std::size_t k = 1; k < g.size(); ++k)
        EXPECT_TRUE(g[k].i > g[k - 1].i || (g[k].i == g[k - 1].i && g[k].j == g[k - 1].j + 1));
}

TEST(Grid, TooSmallImageRejected) {
    EXPECT_THROW(extract_grid(255, 300, default_cfg()), InvariantError);
}

// Coverage boundary: strictly-less-than-10% tissue is discarded, exactly
// 10% is kept.
TEST(Coverage, BoundaryBehaviour) {
    auto cfg = default_cfg();
    EXPECT_FALSE(keep_patch(0.09, cfg));
    EXPECT_TRUE(keep_patch(0.10, cfg));
    EXPECT_TRUE(keep_patch(0.11, cfg));

    // Pixel path: 6554/65536 is the smallest fraction >= 0.10.
    const int n = 256 * 256;
    auto make_mask_with = [&](int fg_px) {
        Mask m(256, 256, 0);
        for (int i = 0; i < fg_px; ++i) m.px[static_cast<std::size_t>(i)] = 255;
        return m;
    };
    auto patches = extract_grid(256, 256, cfg);
    EXPECT_EQ(filter_by_coverage(patches, make_mask_with(6554), cfg).size(), 1u);
    EXPECT_EQ(filter_by_coverage(patches, make_mask_with(6553), cfg).size(), 0u);
    EXPECT_EQ(filter_by_coverage(patches, make_mask_with(static_cast<int>(n * 0.09)), cfg).size(), 0u);
    EXPECT_EQ(filter_by_coverage(patches, Mask(256, 256, 0), cfg).size(), 0u);
}

TEST(Coverage, RaisingThresholdNeverAddsPatches) {
    auto st = rng::stream(3, "covtest");
    Mask m(512, 512, 0);
    for (auto& v : m.px) v = st.uniform() < 0.2 ? 255 : 0;
    auto patches = extract_grid(512, 512, default_cfg());
    PipelineConfig lo = default_cfg();
    PipelineConfig hi = default_cfg();
    hi.min_tissue_fraction = 0.25;
    auto kept_lo = filter_by_coverage(patches, m, lo);
    auto kept_hi = filter_by_coverage(patches, m, hi);
    EXPECT_LE(kept_hi.size(), kept_lo.size());
    std::set<std::pair<int, int>> lo_set;
    for (const auto& p : kept_lo) lo_set.insert({p.i, p.j});
    for (const auto& p : kept_hi) EXPECT_TRUE(lo_set.count({p.i, p.j}));
}

// Patch label boundary: "more than 2%" is strict.
TEST(PatchLabel, StrictBoundary) {
    auto cfg = default_cfg();
    EXPECT_EQ(label_from_fraction(0.02, cfg), 0);  // exactly 2% -> negative
    EXPECT_EQ(label_from_fraction(0.021, cfg), 1); // just above -> positive
    EXPECT_EQ(label_from_fraction(0.0, cfg), 0);

    // Pixel path around the representable boundary (1311/65536 > 0.02).
    PatchRecord p;
    auto make_mask_with = [&](int fg_px) {
        Mask m(256, 256, 0);
        for (int i = 0; i < fg_px; ++i) m.px[static_cast<std::size_t>(i)] = 255;
        return m;
    };
    EXPECT_EQ(label_patch(p, make_mask_with(1310), cfg), 0);
    EXPECT_EQ(label_patch(p, make_mask_with(1311), cfg), 1);
    EXPECT_EQ(label_patch(p, Mask(256, 256, 0), cfg), 0);
}

TEST(DisjointSets, ParityEnumeration) {
    auto g = extract_grid(512, 384, default_cfg()); // i in {0,1}, j in {0,1,2}
    auto [a, b] = split_disjoint_sets(g);
    std::set<std::pair<int, int>> sa, sb;
    for (const auto& p : a) sa.insert({p.i, p.j});
    for (const auto& p : b) sb.insert({p.i, p.j});
    EXPECT_EQ(sa, (std::set<std::pair<int, int>>{{0, 0}, {0, 2}}));
    EXPECT_EQ(sb, (std::set<std::pair<int, int>>{{1, 1}}));
}

TEST(DisjointSets, SinglePatch) {
    auto g = extract_grid(256, 256, default_cfg());
    auto [a, b] = split_disjoint_sets(g);
    EXPECT_EQ(a.size(), 1u);
    EXPECT_EQ(b.size(), 0u);
}

TEST(DisjointSets, NoOverlapWithinEitherSet) {
    auto g = extract_grid(1536, 1280, default_cfg());
    auto [a, b] = split_disjoint_sets(g);
    auto overlap_area = [](const PatchRecord& p, const PatchRecord& q) {
        const int ox = std::max(0, std::min(p.x + 256, q.x + 256) - std::max(p.x, q.x));
        const int oy = std::max(0, std::min(p.y + 256, q.y + 256) - std::max(p.y, q.y));
        return ox * oy;
    };
    for (const auto* set : {&a, &b})
        for (std::size_t i = 0; i < set->size(); ++i)
            for (std::size_t j = i + 1; j < set->size(); ++j)
                ASSERT_EQ(overlap_area((*set)[i], (*set)[j]), 0);
}

TEST(Otsu, SingleLevelImageHasNoForeground) {
    std::vector<std::uint8_t> lum(100, 128);
    const int t = otsu_threshold(lum);
    int fg = 0;
    for (auto v : lum) fg += v < t;
    EXPECT_EQ(fg, 0);
}

} // namespace
