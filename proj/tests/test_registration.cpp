#include <gtest/gtest.h>

#include "crib/registration.hpp"
#include "crib/rng.hpp"

using namespace crib;

namespace {

// Random blobby mask with at least min_fraction foreground.
Mask random_mask(int w, int h, double min_fraction, std::uint64_t seed) {
    auto st = rng::stream(seed, "regtest/mask");
    Mask m(w, h, 0);
    while (true) {
        const int n_blobs = 6 + static_cast<int>(st.uniform_int(6));
        for (int b = 0; b < n_blobs; ++b) {
            const double cx = st.uniform(0.2, 0.8) * w;
            const double cy = st.uniform(0.2, 0.8) * h;
            const double r = st.uniform(0.05, 0.16) * std::min(w, h);
            const int x0 = std::max(0, static_cast<int>(cx - r)), x1 = std::min(w - 1, static_cast<int>(cx + r));
            const int y0 = std::max(0, static_cast<int>(cy - r)), y1 = std::min(h - 1, static_cast<int>(cy + r));
            for (int y = y0; y <= y1; ++y)
                for (int x = x0; x <= x1; ++x)
                    if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r) m.at(x, y) = 255;
        }
        if (static_cast<double>(m.count_nonzero()) / (static_cast<double>(w) * h) >= min_fraction)
            return m;
    }
}

TEST(Registration, IdentityGivesZeroShift) {
    auto m = random_mask(192, 160, 0.10, 1);
    auto est = phase_correlate(m, m);
    EXPECT_EQ(est.dx, 0);
    EXPECT_EQ(est.dy, 0);
    EXPECT_GT(est.peak_response, 0.0);
}

TEST(Registration, RecoversConstructedShift) {
    auto m = random_mask(256, 256, 0.12, 2);
    auto shifted = translate(m, 17, -9);
    auto est = phase_correlate(m, shifted);
    EXPECT_EQ(est.dx, 17);
    EXPECT_EQ(est.dy, -9);
}

TEST(Registration, AntiSymmetry) {
    for (std::uint64_t seed = 0; seed < 8; ++seed) {
        auto a = random_mask(192, 192, 0.10, 100 + seed);
        auto st = rng::stream(seed, "regtest/shift");
        const int dx = static_cast<int>(st.uniform_int(41)) - 20;
        const int dy = static_cast<int>(st.uniform_int(41)) - 20;
        auto b = translate(a, dx, dy);
        auto ab = phase_correlate(a, b);
        auto ba = phase_correlate(b, a);
        EXPECT_EQ(ab.dx, -ba.dx);
        EXPECT_EQ(ab.dy, -ba.dy);
    }
}

TEST(Registration, ExactRecoveryPropertyOverRandomShifts) {
    // |dx|,|dy| <= W/4 on masks with >= 10% foreground.
    const int W = 256, H = 256;
    int failures = 0;
    for (int trial = 0; trial < 60; ++trial) {
        auto m = random_mask(W, H, 0.10, 500 + trial);
        auto st = rng::stream(trial, "regtest/shifts");
        const int dx = static_cast<int>(st.uniform_int(W / 2 + 1)) - W / 4;
        const int dy = static_cast<int>(st.uniform_int(H / 2 + 1)) - H / 4;
        auto shifted = translate(m, dx, dy);
        auto est = phase_correlate(m, shifted);
        if (est.dx != dx || est.dy != dy) ++failures;
    }
    EXPECT_EQ(failures, 0);
}

TEST(Registration, RejectsEmptyAndMismatched) {
    Mask empty(64, 64, 0);
    auto m = random_mask(64, 64, 0.1, 3);
    EXPECT_THROW(phase_correlate(m, empty), InvariantError);
    Mask other(32, 64, 255);
    EXPECT_THROW(phase_correlate(m, other), InvariantError);
}

TEST(TransferAnnotations, ZeroShiftIsIdentity) {
    auto m = random_mask(128, 128, 0.1, 4);
    ShiftEstimate s;
    auto t = transfer_annotations(m, s);
    EXPECT_EQ(t.px, m.px);
}

TEST(TransferAnnotations, InverseCompositionLosesOnlyBorder) {
    auto m = random_mask(128, 128, 0.1, 5);
    ShiftEstimate fwd{17, -9, 1.0, 10.0};
    ShiftEstimate bwd{-17, 9, 1.0, 10.0};
    auto back = transfer_annotations(transfer_annotations(m, fwd), bwd);
    // Every surviving pixel must match the original; losses only at borders.
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x) {
            if (back.at(x, y)) EXPECT_EQ(back.at(x, y), m.at(x, y));
            const bool interior = x >= 17 && x < m.width - 17 && y >= 9 && y < m.height - 9;
            if (interior) EXPECT_EQ(back.at(x, y), m.at(x, y));
        }
}

TEST(Registration, PeakRatioHighOnCleanShift) {
    auto m = random_mask(256, 256, 0.15, 6);
    auto shifted = translate(m, 5, 12);
    auto est = phase_correlate(m, shifted);
    EXPECT_GE(est.peak_ratio, 2.0);
}

} // namespace
