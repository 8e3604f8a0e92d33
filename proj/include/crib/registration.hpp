#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "crib/errors.hpp"
#include "crib/fft.hpp"
#include "crib/image.hpp"

namespace crib {

struct ShiftEstimate {
    int dx = 0;
    int dy = 0;
    double peak_response = 0.0;
    double peak_ratio = 0.0; // peak / second-highest peak outside the 3x3 block
};

namespace registration_detail {

// Block-mean downsample to a real-valued occupancy grid.
inline std::vector<double> downsample(const Mask& m, int factor, int& out_w, int& out_h) {
    out_w = m.width / factor;
    out_h = m.height / factor;
    std::vector<double> out(static_cast<std::size_t>(out_w) * out_h, 0.0);
    const double norm = 1.0 / (factor * factor);
    for (int y = 0; y < out_h * factor; ++y) {
        const std::uint8_t* row = m.px.data() + static_cast<std::size_t>(y) * m.width;
        double* orow = out.data() + static_cast<std::size_t>(y / factor) * out_w;
        for (int x = 0; x < out_w * factor; ++x) orow[x / factor] += (row[x] != 0) * norm;
    }
    return out;
}

// Count of positions where both masks are foreground after displacing B by
// -(dx,dy), i.e. the match score for "B = A translated by (dx,dy)".
inline std::uint64_t overlap_score(const Mask& a, const Mask& b, int dx, int dy) {
    const int x0 = std::max(0, dx), x1 = std::min(a.width, b.width + dx);
    const int y0 = std::max(0, dy), y1 = std::min(a.height, b.height + dy);
    std::uint64_t score = 0;
    for (int y = y0; y < y1; ++y) {
        const std::uint8_t* arow = a.px.data() + static_cast<std::size_t>(y - dy) * a.width;
        const std::uint8_t* brow = b.px.data() + static_cast<std::size_t>(y) * b.width;
        for (int x = x0; x < x1; ++x) score += (arow[x - dx] != 0) & (brow[x] != 0);
    }
    return score;
}

struct PeakInfo {
    int px = 0, py = 0;
    double peak = 0.0;
    double second = 0.0;
};

inline int unwrap(int idx, int n) { return idx > n / 2 ? idx - n : idx; }

inline PeakInfo find_peak(const fft::Grid& r) {
    PeakInfo info;
    info.peak = -1e300;
    const int W = static_cast<int>(r.width), H = static_cast<int>(r.height);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            const double v = r.at(x, y).real();
            // Ties break to the lexicographically smallest unwrapped (dy, dx).
            const bool better =
                v > info.peak ||
                (v == info.peak &&
                 std::pair(unwrap(y, H), unwrap(x, W)) <
                     std::pair(unwrap(info.py, H), unwrap(info.px, W)));
            if (better) {
                info.peak = v;
                info.px = x;
                info.py = y;
            }
        }
    }
    info.second = -1e300;
    for (int y = 0; y < H; ++y) {
        const int wy = std::min(std::abs(y - info.py), H - std::abs(y - info.py));
        for (int x = 0; x < W; ++x) {
            const int wx = std::min(std::abs(x - info.px), W - std::abs(x - info.px));
            if (wx <= 1 && wy <= 1) continue; // exclude the peak's 3x3 block (wrap-aware)
            info.second = std::max(info.second, r.at(x, y).real());
        }
    }
    return info;
}

} // namespace registration_detail

// Integer translation estimate such that maskB matches maskA displaced by
// (dx, dy). Coarse phase correlation on 4x-downsampled occupancy grids,
// then a +-4 px exhaustive overlap refinement at full resolution.
inline ShiftEstimate phase_correlate(const Mask& maskA, const Mask& maskB) {
    namespace rd = registration_detail;
    if (maskA.width != maskB.width || maskA.height != maskB.height)
        throw InvariantError("phase_correlate: dimension mismatch");
    if (maskA.count_nonzero() == 0 || maskB.count_nonzero() == 0)
        throw InvariantError("phase_correlate: empty mask");

    const int factor = (maskA.width >= 256 && maskA.height >= 256) ? 4 : 1;
    int dw = 0, dh = 0;
    const auto a_small = rd::downsample(maskA, factor, dw, dh);
    int dw2 = 0, dh2 = 0;
    const auto b_small = rd::downsample(maskB, factor, dw2, dh2);

    const std::size_t fw = fft::next_pow2(static_cast<std::size_t>(dw));
    const std::size_t fh = fft::next_pow2(static_cast<std::size_t>(dh));
    fft::Grid fa(fw, fh), fb(fw, fh);
    for (int y = 0; y < dh; ++y)
        for (int x = 0; x < dw; ++x) {
            fa.at(x, y) = a_small[static_cast<std::size_t>(y) * dw + x];
            fb.at(x, y) = b_small[static_cast<std::size_t>(y) * dw + x];
        }
    fft::transform2d(fa, false);
    fft::transform2d(fb, false);

    // Cross-power spectrum of (B, A): the response peaks at the A->B shift.
    // Whitening is skipped for bins with near-zero magnitude; if the whole
    // spectrum is degenerate we fall back to raw cross-correlation.
    fft::Grid r(fw, fh);
    std::size_t whitened = 0;
    for (std::size_t i = 0; i < r.data.size(); ++i) {
        const fft::cplx c = fb.data[i] * std::conj(fa.data[i]);
        const double mag = std::abs(c);
        if (mag > 1e-12) {
            r.data[i] = c / mag;
            ++whitened;
        } else {
            r.data[i] = 0.0;
        }
    }
    if (whitened == 0)
        for (std::size_t i = 0; i < r.data.size(); ++i)
            r.data[i] = fb.data[i] * std::conj(fa.data[i]);
    fft::transform2d(r, true);

    const auto peak = rd::find_peak(r);
    const int coarse_dx = rd::unwrap(peak.px, static_cast<int>(fw)) * factor;
    const int coarse_dy = rd::unwrap(peak.py, static_cast<int>(fh)) * factor;

    ShiftEstimate est;
    est.peak_response = peak.peak;
    est.peak_ratio = peak.second > 0.0 ? peak.peak / peak.second
                                       : (peak.peak > 0.0 ? 1e9 : 0.0);

    if (factor == 1) {
        est.dx = coarse_dx;
        est.dy = coarse_dy;
        return est;
    }

    // Refinement window covers the worst-case coarse rounding error.
    std::uint64_t best = 0;
    int best_dx = coarse_dx, best_dy = coarse_dy;
    bool first = true;
    for (int ddy = -4; ddy <= 4; ++ddy) {
        for (int ddx = -4; ddx <= 4; ++ddx) {
            const int dx = coarse_dx + ddx, dy = coarse_dy + ddy;
            const std::uint64_t score = rd::overlap_score(maskA, maskB, dx, dy);
            if (first || score > best ||
                (score == best && (dy < best_dy || (dy == best_dy && dx < best_dx)))) {
                best = score;
                best_dx = dx;
                best_dy = dy;
                first = false;
            }
        }
    }
    est.dx = best_dx;
    est.dy = best_dy;
    return est;
}

// Moves an annotation mask into the target scan's frame. Pixels shifted
// outside the canvas are dropped; integer shift, no interpolation.
inline Mask transfer_annotations(const Mask& annotation, const ShiftEstimate& shift) {
    return translate(annotation, shift.dx, shift.dy);
}

} // namespace crib
