#include <gtest/gtest.h>

#include "crib/synth.hpp"
#include "crib/tiling.hpp"

using namespace crib;

namespace {

SlideRenderParams small_params() {
    SlideRenderParams p;
    p.width = 768;
    p.height = 768;
    return p;
}

TEST(SynthPlan, ExactCountClassSampling) {
    CohortConfig cfg;
    cfg.n_slides = 200;
    cfg.positive_rate = 0.24;
    cfg.borderline_rate = 0.10;
    auto plans = plan_cohort(cfg, 7);
    int pos = 0, bord = 0;
    for (const auto& p : plans) {
        pos += p.slide_class == LesionClass::Sieve;
        bord += p.slide_class == LesionClass::Borderline;
    }
    EXPECT_EQ(pos, 48); // round(0.24 * 200)
    EXPECT_EQ(bord, 20);
    EXPECT_EQ(plans.size(), 200u);
}

TEST(SynthPlan, SingleNegativeSlide) {
    CohortConfig cfg;
    cfg.n_slides = 1;
    cfg.positive_rate = 0.0;
    auto plans = plan_cohort(cfg, 3);
    ASSERT_EQ(plans.size(), 1u);
    EXPECT_EQ(plans[0].slide_class, LesionClass::Solid);
    auto rendered = render_slide(plans[0], small_params(), 3);
    EXPECT_EQ(rendered.annotation.count_nonzero(), 0u);
}

TEST(SynthPlan, PatientsGroupSlides) {
    CohortConfig cfg;
    cfg.n_slides = 21;
    auto plans = plan_cohort(cfg, 1);
    std::set<std::string> patients;
    for (const auto& p : plans) patients.insert(p.patient_id);
    EXPECT_LT(patients.size(), plans.size()); // some patients own two slides
    EXPECT_EQ(plans[6].patient_id, plans[5].patient_id);
}

TEST(SynthRender, DeterministicPerSeed) {
    CohortConfig cfg;
    cfg.n_slides = 2;
    cfg.positive_rate = 0.5;
    auto plans = plan_cohort(cfg, 11);
    auto a = render_slide(plans[0], small_params(), 11);
    auto b = render_slide(plans[0], small_params(), 11);
    EXPECT_EQ(a.image.px, b.image.px);
    EXPECT_EQ(a.annotation.px, b.annotation.px);
    auto c = render_slide(plans[0], small_params(), 12);
    EXPECT_NE(c.image.px, a.image.px);
}

TEST(SynthRender, LabelConsistency) {
    CohortConfig cfg;
    cfg.n_slides = 12;
    cfg.positive_rate = 0.5;
    cfg.borderline_rate = 0.25;
    auto plans = plan_cohort(cfg, 21);
    for (const auto& plan : plans) {
        auto r = render_slide(plan, small_params(), 21);
        const bool positive = plan.slide_class == LesionClass::Sieve;
        EXPECT_EQ(r.annotation.count_nonzero() > 0, positive);
        // Spec-level invariants on the polygons.
        bool has_sieve = false;
        for (const auto& poly : r.spec.lesion_polygons) {
            has_sieve |= poly.cls == LesionClass::Sieve;
            for (const auto& [x, y] : poly.points) {
                EXPECT_GE(x, 0.0);
                EXPECT_LT(x, r.spec.width);
                EXPECT_GE(y, 0.0);
                EXPECT_LT(y, r.spec.height);
            }
        }
        EXPECT_EQ(has_sieve, positive);
    }
}

TEST(SynthRender, TissueMaskRecoversGeneratorFraction) {
    CohortConfig cfg;
    cfg.n_slides = 3;
    cfg.positive_rate = 0.34;
    auto plans = plan_cohort(cfg, 5);
    for (const auto& plan : plans) {
        auto r = render_slide(plan, small_params(), 5);
        auto mask = tissue_mask(r.image);
        const double measured =
            static_cast<double>(mask.count_nonzero()) /
            (static_cast<double>(mask.width) * mask.height);
        EXPECT_NEAR(measured, r.tissue_fraction, 0.02);
    }
}

TEST(Rescan, IdentityProfileIsIdentity) {
    auto plans = plan_cohort({.n_slides = 1, .positive_rate = 1.0}, 9);
    auto r = render_slide(plans[0], small_params(), 9);
    ScannerProfile identity{"id", 1.0, {1.0, 1.0, 1.0}, 0.0, 0};
    auto rescan = simulate_rescan(r.image, identity, 9, /*max_shift=*/0);
    EXPECT_EQ(rescan.dx, 0);
    EXPECT_EQ(rescan.dy, 0);
    EXPECT_EQ(rescan.image.px, r.image.px);
}

TEST(Rescan, ExactTranslation) {
    auto plans = plan_cohort({.n_slides = 1, .positive_rate = 0.0}, 13);
    auto r = render_slide(plans[0], small_params(), 13);
    ScannerProfile identity{"id", 1.0, {1.0, 1.0, 1.0}, 0.0, 0};
    auto rescan = simulate_rescan_shifted(r.image, identity, 17, -9, 13);
    EXPECT_EQ(rescan.dx, 17);
    EXPECT_EQ(rescan.dy, -9);
    for (int y = 0; y < r.image.height; ++y) {
        const int sy = y - (-9);
        if (sy < 0 || sy >= r.image.height) continue;
        for (int x = 17; x < r.image.width; ++x)
            for (int c = 0; c < 3; ++c)
                ASSERT_EQ(rescan.image.at(x, y, c), r.image.at(x - 17, sy, c));
    }
}

TEST(Rescan, GammaTransferScalar) {
    EXPECT_NEAR(rescan_transfer(0.5, 1.2, 1.0), 0.43528, 1e-4);
    // LUT application on a constant image.
    Image img(8, 8, 128);
    ScannerProfile prof{"g", 1.2, {1.0, 1.0, 1.0}, 0.0, 0};
    auto rescan = simulate_rescan(img, prof, 1, 0);
    const int expected = static_cast<int>(std::lround(255.0 * std::pow(128.0 / 255.0, 1.2)));
    EXPECT_EQ(rescan.image.at(3, 3, 0), expected);
}

TEST(Rescan, MaskUnchangedUnderTransportedShift) {
    // The annotation transported by the known offset matches the rescan's
    // own geometry: rescan moves content exactly like translate().
    auto plans = plan_cohort({.n_slides = 1, .positive_rate = 1.0}, 31);
    auto r = render_slide(plans[0], small_params(), 31);
    ScannerProfile prof{"g", 1.1, {1.02, 0.99, 1.0}, 0.004, 2};
    auto rescan = simulate_rescan(r.image, prof, 31, 24);
    auto transported = translate(r.annotation, rescan.dx, rescan.dy);
    // Positive annotated pixels must sit on blob-coloured pixels of the
    // rescan (dark, luma < 150) wherever they survive the crop.
    std::size_t checked = 0, dark = 0;
    for (int y = 0; y < transported.height; ++y)
        for (int x = 0; x < transported.width; ++x)
            if (transported.at(x, y)) {
                ++checked;
                const int l = luma(rescan.image.at(x, y, 0), rescan.image.at(x, y, 1),
                                   rescan.image.at(x, y, 2));
                dark += l < 150 ? 1 : 0; // holes are bright; blobs dominate
            }
    ASSERT_GT(checked, 0u);
    EXPECT_GT(static_cast<double>(dark) / checked, 0.55);
}

TEST(Cohort, GenerateSmallCohortManifest) {
    CohortConfig cfg;
    cfg.n_slides = 10;
    cfg.positive_rate = 0.3;
    cfg.borderline_rate = 0.2;
    cfg.render = small_params();
    auto scanners = default_scanners();
    auto cohort = generate_cohort(cfg, scanners, 17, /*rescan_count=*/2, /*rescan_max_shift=*/16);
    EXPECT_EQ(cohort.manifest.slides.size(), 10u);
    int positives = 0;
    for (std::size_t i = 0; i < cohort.manifest.slides.size(); ++i) {
        const auto& rec = cohort.manifest.slides[i];
        positives += rec.label;
        EXPECT_EQ(rec.label == 1, cohort.slides[i].annotation.count_nonzero() > 0);
        EXPECT_EQ(rec.scans.size(), 3u);
        EXPECT_TRUE(rec.scans[0].is_primary);
    }
    EXPECT_EQ(positives, 3);
    EXPECT_EQ(cohort.rescan_offsets.size(), 20u);
}

TEST(ScannerProfile, InvariantsEnforced) {
    ScannerProfile bad{"x", 2.5, {1.0, 1.0, 1.0}, 0.0, 0};
    EXPECT_THROW(bad.validate(), InvariantError);
    ScannerProfile bad2{"x", 1.0, {1.5, 1.0, 1.0}, 0.0, 0};
    EXPECT_THROW(bad2.validate(), InvariantError);
}

} // namespace
