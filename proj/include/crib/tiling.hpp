#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "crib/errors.hpp"
#include "crib/image.hpp"

namespace crib {

struct PipelineConfig {
    int patch_size = 256;
    int stride = 128; // 50% overlap
    double target_spacing = 1.0;
    double min_tissue_fraction = 0.10;
    double patch_positive_fraction = 0.02;

    void validate() const {
        if (stride != patch_size / 2)
            throw InvariantError("stride must equal patch_size/2");
        if (!(min_tissue_fraction > 0.0 && min_tissue_fraction < 1.0))
            throw InvariantError("min_tissue_fraction must be in (0,1)");
        if (!(patch_positive_fraction > 0.0 && patch_positive_fraction < 1.0))
            throw InvariantError("patch_positive_fraction must be in (0,1)");
    }
};

struct PatchRecord {
    int i = 0; // grid row
    int j = 0; // grid column
    int x = 0; // origin, px (x = j * stride)
    int y = 0; // origin, px (y = i * stride)
    double tissue_fraction = 0.0;
    double annotated_fraction = 0.0;
    int label = 0;
};

// Otsu threshold over a 256-bin luminance histogram. Returns the threshold
// level t; foreground is everything strictly darker than t.
inline int otsu_threshold(const std::vector<std::uint8_t>& lum) {
    std::array<std::uint64_t, 256> hist{};
    for (auto v : lum) ++hist[v];
    const double total = static_cast<double>(lum.size());
    double sum_all = 0.0;
    for (int i = 0; i < 256; ++i) sum_all += static_cast<double>(i) * static_cast<double>(hist[i]);

    double best_var = -1.0;
    int best_t = 0;
    double w0 = 0.0, sum0 = 0.0;
    for (int t = 0; t < 256; ++t) {
        w0 += static_cast<double>(hist[t]);
        if (w0 == 0.0) continue;
        const double w1 = total - w0;
        if (w1 == 0.0) break;
        sum0 += static_cast<double>(t) * static_cast<double>(hist[t]);
        const double mu0 = sum0 / w0;
        const double mu1 = (sum_all - sum0) / w1;
        const double between = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
        if (between > best_var) {
            best_var = between;
            best_t = t;
        }
    }
    // Single-level image: threshold at that level, so nothing is "darker".
    if (best_var <= 0.0) return best_t;
    return best_t + 1; // foreground = lum < (class-0 max + 1), i.e. lum <= best_t
}

// 3x3 majority vote over valid neighbours; removes salt-and-pepper specks.
inline Mask majority3x3(const Mask& in) {
    Mask out(in.width, in.height, 0);
    for (int y = 0; y < in.height; ++y) {
        for (int x = 0; x < in.width; ++x) {
            int fg = 0, n = 0;
            for (int dy = -1; dy <= 1; ++dy) {
                const int yy = y + dy;
                if (yy < 0 || yy >= in.height) continue;
                for (int dx = -1; dx <= 1; ++dx) {
                    const int xx = x + dx;
                    if (xx < 0 || xx >= in.width) continue;
                    ++n;
                    fg += in.at(xx, yy) != 0;
                }
            }
            out.at(x, y) = (2 * fg > n) ? 255 : 0;
        }
    }
    return out;
}

// Tissue segmentation: pixels darker than the Otsu luminance threshold,
// then 3x3 majority smoothing.
inline Mask tissue_mask(const Image& img) {
    const auto lum = luma_plane(img);
    const int t = otsu_threshold(lum);
    Mask m(img.width, img.height, 0);
    for (std::size_t i = 0; i < lum.size(); ++i)
        if (lum[i] < t) m.px[i] = 255;
    return majority3x3(m);
}

// Full 256x256 patches at 128 px stride, row-major. Partial edge patches
// are not emitted.
inline std::vector<PatchRecord> extract_grid(int width, int height, const PipelineConfig& cfg) {
    cfg.validate();
    if (width < cfg.patch_size || height < cfg.patch_size)
        throw InvariantError("image smaller than one patch: " + std::to_string(width) + "x" +
                             std::to_string(height));
    const int nx = (width - cfg.patch_size) / cfg.stride + 1;
    const int ny = (height - cfg.patch_size) / cfg.stride + 1;
    std::vector<PatchRecord> out;
    out.reserve(static_cast<std::size_t>(nx) * ny);
    for (int i = 0; i < ny; ++i) {
        for (int j = 0; j < nx; ++j) {
            PatchRecord p;
            p.i = i;
            p.j = j;
            p.x = j * cfg.stride;
            p.y = i * cfg.stride;
            out.push_back(p);
        }
    }
    return out;
}

inline double mask_fraction_in_patch(const Mask& mask, int x0, int y0, int size) {
    std::uint64_t fg = 0;
    for (int y = y0; y < y0 + size; ++y) {
        const std::uint8_t* row = mask.px.data() + static_cast<std::size_t>(y) * mask.width;
        for (int x = x0; x < x0 + size; ++x) fg += row[x] != 0;
    }
    return static_cast<double>(fg) / (static_cast<double>(size) * size);
}

// "Tissue covering less than min_tissue_fraction is discarded": the
// comparison is strict, so exactly at the threshold is kept.
inline bool keep_patch(double tissue_fraction, const PipelineConfig& cfg) {
    return tissue_fraction >= cfg.min_tissue_fraction;
}

// "More than patch_positive_fraction annotated" is strict: exactly at the
// threshold stays negative.
inline int label_from_fraction(double annotated_fraction, const PipelineConfig& cfg) {
    return annotated_fraction > cfg.patch_positive_fraction ? 1 : 0;
}

inline std::vector<PatchRecord> filter_by_coverage(const std::vector<PatchRecord>& patches,
                                                   const Mask& mask, const PipelineConfig& cfg) {
    std::vector<PatchRecord> kept;
    for (PatchRecord p : patches) {
        p.tissue_fraction = mask_fraction_in_patch(mask, p.x, p.y, cfg.patch_size);
        if (keep_patch(p.tissue_fraction, cfg)) kept.push_back(p);
    }
    return kept;
}

inline int label_patch(const PatchRecord& p, const Mask& annotation, const PipelineConfig& cfg) {
    return label_from_fraction(mask_fraction_in_patch(annotation, p.x, p.y, cfg.patch_size), cfg);
}

inline PatchRecord with_annotation(PatchRecord p, const Mask& annotation, const PipelineConfig& cfg) {
    p.annotated_fraction = mask_fraction_in_patch(annotation, p.x, p.y, cfg.patch_size);
    p.label = label_from_fraction(p.annotated_fraction, cfg);
    return p;
}

// Two maximal non-overlapping subsets of the 50%-overlap grid: even (i, j)
// pairs and odd (i, j) pairs. Within each set neighbouring origins are two
// strides (= one full patch) apart.
inline std::pair<std::vector<PatchRecord>, std::vector<PatchRecord>> split_disjoint_sets(
    const std::vector<PatchRecord>& patches) {
    std::vector<PatchRecord> even, odd;
    for (const auto& p : patches) {
        if (p.i % 2 == 0 && p.j % 2 == 0) even.push_back(p);
        else if (p.i % 2 == 1 && p.j % 2 == 1) odd.push_back(p);
    }
    return {even, odd};
}

} // namespace crib
