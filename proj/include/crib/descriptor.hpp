#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "crib/errors.hpp"
#include "crib/image.hpp"

namespace crib {

inline constexpr int kPatchSize = 256;
inline constexpr int kDescriptorDim = 40;

// Fixed-length patch summary fed to the trainable encoder:
//   [0..15]  luminance histogram (16 bins)
//   [16..23] gradient-orientation histogram (8 sectors; flips permute it)
//   [24..31] gradient-magnitude histogram (8 bins)
//   [32..39] binary-topology statistics (hole structure of dark regions)
using Descriptor = std::array<double, kDescriptorDim>;

namespace descriptor_detail {

// Sector index for a gradient vector. Sectors are centred on the four axes
// and four diagonals with boundaries at odd multiples of 22.5 degrees, so
// horizontal/vertical flips act as exact bin permutations (the boundary
// ratio tan(22.5) is irrational and cannot be hit by rational gradients).
inline int orientation_sector(double gx, double gy) {
    constexpr double kTan22 = 0.41421356237309503; // tan(pi/8)
    const double ax = std::abs(gx), ay = std::abs(gy);
    if (ay <= ax * kTan22) return gx > 0 ? 0 : 4;          // E / W
    if (ax <= ay * kTan22) return gy > 0 ? 2 : 6;          // S / N (screen y-down)
    if (gx > 0) return gy > 0 ? 1 : 7;                     // SE / NE
    return gy > 0 ? 3 : 5;                                 // SW / NW
}

struct TopologyStats {
    double fg_fraction = 0.0;
    int component_count = 0;        // components with area >= 64 px
    int hole_count = 0;             // enclosed background pockets
    std::vector<int> holes_per_component;
    std::size_t fg_px = 0;
    std::size_t hole_px = 0;
};

class UnionFind {
public:
    explicit UnionFind(std::size_t n) : parent_(n) {
        for (std::size_t i = 0; i < n; ++i) parent_[i] = static_cast<std::int32_t>(i);
    }
    std::int32_t find(std::int32_t x) {
        while (parent_[x] != x) {
            parent_[x] = parent_[parent_[x]];
            x = parent_[x];
        }
        return x;
    }
    void unite(std::int32_t a, std::int32_t b) {
        a = find(a);
        b = find(b);
        if (a != b) parent_[std::max(a, b)] = std::min(a, b);
    }

private:
    std::vector<std::int32_t> parent_;
};

// Connected-component analysis of the dark-region mask: 4-connected
// foreground components and the background pockets ("holes") they enclose.
inline TopologyStats topology(const std::vector<std::uint8_t>& fg, int W, int H) {
    TopologyStats out;
    const std::size_t n = static_cast<std::size_t>(W) * H;
    UnionFind uf(n);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * W + x;
            const bool v = fg[i];
            if (x > 0 && fg[i - 1] == v) uf.unite(static_cast<std::int32_t>(i), static_cast<std::int32_t>(i - 1));
            if (y > 0 && fg[i - W] == v) uf.unite(static_cast<std::int32_t>(i), static_cast<std::int32_t>(i - W));
        }
    }

    std::vector<std::int32_t> area(n, 0);
    std::vector<std::uint8_t> touches_border(n, 0);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * W + x;
            const auto root = uf.find(static_cast<std::int32_t>(i));
            ++area[static_cast<std::size_t>(root)];
            if (x == 0 || y == 0 || x == W - 1 || y == H - 1)
                touches_border[static_cast<std::size_t>(root)] = 1;
            out.fg_px += fg[i] != 0;
        }
    }
    out.fg_fraction = static_cast<double>(out.fg_px) / static_cast<double>(n);

    // A background component is a hole iff it does not reach the border.
    // Each hole is owned by the first (row-major) adjacent foreground
    // component.
    std::vector<std::int32_t> hole_owner(n, -1);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * W + x;
            if (fg[i]) continue;
            const auto root = uf.find(static_cast<std::int32_t>(i));
            if (touches_border[static_cast<std::size_t>(root)]) continue;
            out.hole_px += 1;
            if (hole_owner[static_cast<std::size_t>(root)] >= 0) continue;
            const int nx[4] = {x - 1, x + 1, x, x};
            const int ny[4] = {y, y, y - 1, y + 1};
            for (int k = 0; k < 4; ++k) {
                if (nx[k] < 0 || nx[k] >= W || ny[k] < 0 || ny[k] >= H) continue;
                const std::size_t j = static_cast<std::size_t>(ny[k]) * W + nx[k];
                if (fg[j]) {
                    hole_owner[static_cast<std::size_t>(root)] = uf.find(static_cast<std::int32_t>(j));
                    break;
                }
            }
        }
    }

    std::vector<std::int32_t> holes_of(n, 0);
    for (std::size_t i = 0; i < n; ++i)
        if (hole_owner[i] >= 0) {
            ++holes_of[static_cast<std::size_t>(hole_owner[i])];
            ++out.hole_count;
        }

    constexpr std::int32_t kMinArea = 64; // ignore nuclei specks
    for (std::size_t i = 0; i < n; ++i) {
        if (uf.find(static_cast<std::int32_t>(i)) != static_cast<std::int32_t>(i)) continue;
        if (!fg[i] || area[i] < kMinArea) continue;
        ++out.component_count;
        out.holes_per_component.push_back(holes_of[i]);
    }
    return out;
}

inline double lower_quantile(std::vector<int> sorted, double q) {
    if (sorted.empty()) return 0.0;
    const auto idx = static_cast<std::size_t>(q * static_cast<double>(sorted.size() - 1));
    return static_cast<double>(sorted[idx]);
}

} // namespace descriptor_detail

inline Descriptor patch_descriptor(const Image& patch) {
    namespace dd = descriptor_detail;
    if (patch.width != kPatchSize || patch.height != kPatchSize)
        throw InvariantError("patch_descriptor: expected 256x256 patch, got " +
                             std::to_string(patch.width) + "x" + std::to_string(patch.height));

    Descriptor d{};
    const auto lum = luma_plane(patch);
    const int W = patch.width, H = patch.height;

    // Luminance histogram.
    for (auto v : lum) d[v / 16] += 1.0;
    const double inv_n = 1.0 / static_cast<double>(lum.size());
    for (int b = 0; b < 16; ++b) d[b] *= inv_n;

    // Gradient histograms over interior pixels; zero-gradient pixels are
    // skipped, and fully flat patches get the uniform convention.
    std::array<double, 8> orient{};
    std::array<double, 8> mag_hist{};
    std::size_t grad_px = 0;
    for (int y = 1; y < H - 1; ++y) {
        const std::uint8_t* row = lum.data() + static_cast<std::size_t>(y) * W;
        const std::uint8_t* up = row - W;
        const std::uint8_t* dn = row + W;
        for (int x = 1; x < W - 1; ++x) {
            const double gx = (static_cast<int>(row[x + 1]) - static_cast<int>(row[x - 1])) / 510.0;
            const double gy = (static_cast<int>(dn[x]) - static_cast<int>(up[x])) / 510.0;
            if (gx == 0.0 && gy == 0.0) continue;
            ++grad_px;
            ++orient[static_cast<std::size_t>(dd::orientation_sector(gx, gy))];
            const double mag = std::sqrt(gx * gx + gy * gy);
            mag_hist[std::min<std::size_t>(7, static_cast<std::size_t>(mag / 0.0625))] += 1.0;
        }
    }
    if (grad_px == 0) {
        for (int b = 0; b < 8; ++b) {
            d[16 + b] = 0.125;
            d[24 + b] = 0.125;
        }
    } else {
        const double inv_g = 1.0 / static_cast<double>(grad_px);
        for (int b = 0; b < 8; ++b) {
            d[16 + b] = orient[static_cast<std::size_t>(b)] * inv_g;
            d[24 + b] = mag_hist[static_cast<std::size_t>(b)] * inv_g;
        }
    }

    // Topology of dark regions (luma < 128): epithelial blobs are dark,
    // lumina and stroma are bright.
    std::vector<std::uint8_t> fg(lum.size());
    for (std::size_t i = 0; i < lum.size(); ++i) fg[i] = lum[i] < 128 ? 1 : 0;
    const auto topo = dd::topology(fg, W, H);

    auto holes_sorted = topo.holes_per_component;
    std::sort(holes_sorted.begin(), holes_sorted.end());
    const double mean_holes =
        holes_sorted.empty()
            ? 0.0
            : static_cast<double>(topo.hole_count) / static_cast<double>(holes_sorted.size());

    d[32] = topo.fg_fraction;
    d[33] = std::min(1.0, topo.component_count / 16.0);
    d[34] = std::min(1.0, topo.hole_count / 32.0);
    d[35] = std::min(1.0, mean_holes / 8.0);
    d[36] = std::min(1.0, dd::lower_quantile(holes_sorted, 0.25) / 8.0);
    d[37] = std::min(1.0, dd::lower_quantile(holes_sorted, 0.50) / 8.0);
    d[38] = std::min(1.0, dd::lower_quantile(holes_sorted, 0.75) / 8.0);
    d[39] = (topo.fg_px + topo.hole_px) > 0
                ? static_cast<double>(topo.hole_px) /
                      static_cast<double>(topo.fg_px + topo.hole_px)
                : 0.0;
    return d;
}

} // namespace crib
