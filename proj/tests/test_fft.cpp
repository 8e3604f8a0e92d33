#include <gtest/gtest.h>

#include <complex>
#include <vector>

#include "crib/fft.hpp"
#include "crib/rng.hpp"

using crib::fft::cplx;

namespace {

// Direct O(n^2) DFT, the independence oracle for the radix-2 implementation.
std::vector<cplx> dft_direct(const std::vector<cplx>& in, bool inverse) {
    const std::size_t n = in.size();
    std::vector<cplx> out(n);
    const double sign = inverse ? 2.0 : -2.0;
    for (std::size_t k = 0; k < n; ++k) {
        cplx acc(0.0, 0.0);
        for (std::size_t t = 0; t < n; ++t) {
            const double ang = sign * M_PI * static_cast<double>(k * t) / static_cast<double>(n);
            acc += in[t] * cplx(std::cos(ang), std::sin(ang));
        }
        out[k] = inverse ? acc / static_cast<double>(n) : acc;
    }
    return out;
}

TEST(Fft, MatchesDirectDftOracle) {
    auto st = crib::rng::stream(123, "fft-test");
    for (std::size_t n : {1u, 2u, 4u, 8u, 16u, 64u, 128u}) {
        std::vector<cplx> in(n);
        for (auto& v : in) v = cplx(st.uniform(-1, 1), st.uniform(-1, 1));
        auto expected = dft_direct(in, false);
        auto actual = in;
        crib::fft::transform(actual, false);
        for (std::size_t i = 0; i < n; ++i) {
            EXPECT_NEAR(actual[i].real(), expected[i].real(), 1e-9) << "n=" << n << " i=" << i;
            EXPECT_NEAR(actual[i].imag(), expected[i].imag(), 1e-9);
        }
    }
}

TEST(Fft, InverseMatchesDirectOracle) {
    auto st = crib::rng::stream(321, "fft-inv");
    std::vector<cplx> in(32);
    for (auto& v : in) v = cplx(st.uniform(-1, 1), st.uniform(-1, 1));
    auto expected = dft_direct(in, true);
    auto actual = in;
    crib::fft::transform(actual, true);
    for (std::size_t i = 0; i < in.size(); ++i)
        EXPECT_NEAR(std::abs(actual[i] - expected[i]), 0.0, 1e-9);
}

TEST(Fft, RoundTripBelow1e9) {
    auto st = crib::rng::stream(5, "fft-roundtrip");
    std::vector<cplx> in(1024);
    for (auto& v : in) v = cplx(st.uniform(-1, 1), st.uniform(-1, 1));
    auto work = in;
    crib::fft::transform(work, false);
    crib::fft::transform(work, true);
    double max_err = 0.0;
    for (std::size_t i = 0; i < in.size(); ++i)
        max_err = std::max(max_err, std::abs(work[i] - in[i]));
    EXPECT_LT(max_err, 1e-9);
}

TEST(Fft, TwoDimRoundTrip) {
    auto st = crib::rng::stream(9, "fft2d");
    crib::fft::Grid g(32, 16);
    for (auto& v : g.data) v = cplx(st.uniform(-1, 1), 0.0);
    auto orig = g.data;
    crib::fft::transform2d(g, false);
    crib::fft::transform2d(g, true);
    double max_err = 0.0;
    for (std::size_t i = 0; i < orig.size(); ++i)
        max_err = std::max(max_err, std::abs(g.data[i] - orig[i]));
    EXPECT_LT(max_err, 1e-9);
}

TEST(Fft, RejectsNonPowerOfTwo) {
    std::vector<cplx> in(12);
    EXPECT_THROW(crib::fft::transform(in, false), crib::InvariantError);
}

TEST(Fft, NextPow2) {
    EXPECT_EQ(crib::fft::next_pow2(1), 1u);
    EXPECT_EQ(crib::fft::next_pow2(2), 2u);
    EXPECT_EQ(crib::fft::next_pow2(3), 4u);
    EXPECT_EQ(crib::fft::next_pow2(384), 512u);
}

} // namespace
