#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "crib/errors.hpp"
#include "crib/image.hpp"
#include "crib/manifest.hpp"
#include "crib/rng.hpp"

namespace crib {

struct ScannerProfile {
    std::string scanner_id;
    double gamma = 1.0;
    std::array<double, 3> channel_gain = {1.0, 1.0, 1.0};
    double noise_sigma = 0.0; // additive, in [0,1] intensity units
    int seed_offset = 0;

    void validate() const {
        if (gamma < 0.5 || gamma > 2.0)
            throw InvariantError("scanner '" + scanner_id + "': gamma outside [0.5, 2.0]");
        for (double g : channel_gain)
            if (g < 0.7 || g > 1.3)
                throw InvariantError("scanner '" + scanner_id + "': channel gain outside [0.7, 1.3]");
        if (noise_sigma < 0.0)
            throw InvariantError("scanner '" + scanner_id + "': negative noise sigma");
    }
};

enum class LesionClass { Sieve, Solid, Borderline };

struct LesionPolygon {
    LesionClass cls = LesionClass::Solid;
    std::vector<std::pair<double, double>> points;
};

struct SlideSpec {
    int width = 1536;
    int height = 1536;
    std::vector<LesionPolygon> lesion_polygons;
    std::uint64_t texture_seed = 0;
};

struct RenderedSlide {
    Image image;
    Mask annotation; // 255 over sieve lesions, 0 elsewhere
    SlideSpec spec;
    double tissue_fraction = 0.0; // generator ground truth
};

struct RescanResult {
    Image image;
    int dx = 0;
    int dy = 0;
};

// The per-channel transfer function applied by a simulated rescan, on
// normalized intensities: out = gain * in^gamma (noise added separately).
inline double rescan_transfer(double in01, double gamma, double gain) {
    return std::clamp(gain * std::pow(in01, gamma), 0.0, 1.0);
}

// Photometric re-digitisation of a slide: per-channel gamma/gain lookup,
// additive Gaussian noise, and an integer positioning offset (vacated
// border filled with plain background). Geometry is otherwise unchanged.
inline RescanResult simulate_rescan_shifted(const Image& image, const ScannerProfile& profile,
                                            int dx, int dy, std::uint64_t seed) {
    if (image.empty()) throw InvariantError("simulate_rescan: empty image");
    profile.validate();

    RescanResult out;
    out.dx = dx;
    out.dy = dy;
    out.image = (dx == 0 && dy == 0) ? image : translate(image, dx, dy, 247, 247, 247);

    std::array<std::array<std::uint8_t, 256>, 3> lut;
    for (int c = 0; c < 3; ++c)
        for (int v = 0; v < 256; ++v)
            lut[c][v] = static_cast<std::uint8_t>(
                std::lround(255.0 * rescan_transfer(v / 255.0, profile.gamma, profile.channel_gain[c])));

    std::uint8_t* p = out.image.px.data();
    const std::size_t n = out.image.px.size();
    if (profile.noise_sigma > 0.0) {
        auto st = rng::Stream(rng::derive_key(seed, "synth/rescan-noise",
                                              static_cast<std::uint64_t>(profile.seed_offset)));
        const double sigma255 = profile.noise_sigma * 255.0;
        for (std::size_t i = 0; i < n; i += 3) {
            const double noise = st.normal() * sigma255;
            for (int c = 0; c < 3; ++c) {
                const double v = lut[c][p[i + c]] + noise;
                p[i + c] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
            }
        }
    } else {
        for (std::size_t i = 0; i < n; i += 3)
            for (int c = 0; c < 3; ++c) p[i + c] = lut[c][p[i + c]];
    }
    return out;
}

// Samples the positioning offset from the seed (|dx|,|dy| <= max_shift).
inline RescanResult simulate_rescan(const Image& image, const ScannerProfile& profile,
                                    std::uint64_t seed, int max_shift = 32) {
    int dx = 0, dy = 0;
    if (max_shift > 0) {
        auto st = rng::Stream(rng::derive_key(seed, "synth/rescan-shift",
                                              static_cast<std::uint64_t>(profile.seed_offset)));
        dx = static_cast<int>(st.uniform_int(2 * max_shift + 1)) - max_shift;
        dy = static_cast<int>(st.uniform_int(2 * max_shift + 1)) - max_shift;
    }
    return simulate_rescan_shifted(image, profile, dx, dy, seed);
}

// ---------------------------------------------------------------------------
// Slide rendering
// ---------------------------------------------------------------------------

namespace synth_detail {

// Material plane values used while composing a slide.
enum : std::uint8_t { kBackground = 0, kTissue = 1, kBlob = 2, kHole = 3 };

struct Palette {
    std::array<int, 3> background = {247, 247, 247};
    std::array<int, 3> tissue = {198, 166, 182};
    std::array<int, 3> blob = {96, 62, 114};
    std::array<int, 3> hole = {230, 219, 230};
    std::array<int, 3> nucleus = {128, 94, 138};
};

inline double tri_noise(rng::Stream& st, double amp) {
    return amp * (st.uniform() + st.uniform() - 1.0);
}

// Even-odd scanline fill; pixel centers at (x+0.5, y+0.5).
template <typename Fn>
void fill_polygon(const std::vector<std::pair<double, double>>& pts, int width, int height, Fn&& fn) {
    if (pts.size() < 3) return;
    double ymin = pts[0].second, ymax = pts[0].second;
    for (const auto& p : pts) {
        ymin = std::min(ymin, p.second);
        ymax = std::max(ymax, p.second);
    }
    const int y0 = std::max(0, static_cast<int>(std::floor(ymin)));
    const int y1 = std::min(height - 1, static_cast<int>(std::ceil(ymax)));
    std::vector<double> xs;
    for (int y = y0; y <= y1; ++y) {
        const double yc = y + 0.5;
        xs.clear();
        for (std::size_t i = 0; i < pts.size(); ++i) {
            const auto& a = pts[i];
            const auto& b = pts[(i + 1) % pts.size()];
            if ((a.second <= yc && b.second > yc) || (b.second <= yc && a.second > yc)) {
                const double t = (yc - a.second) / (b.second - a.second);
                xs.push_back(a.first + t * (b.first - a.first));
            }
        }
        std::sort(xs.begin(), xs.end());
        for (std::size_t k = 0; k + 1 < xs.size(); k += 2) {
            const int xa = std::max(0, static_cast<int>(std::ceil(xs[k] - 0.5)));
            const int xb = std::min(width - 1, static_cast<int>(std::floor(xs[k + 1] - 0.5)));
            for (int x = xa; x <= xb; ++x) fn(x, y);
        }
    }
}

// Organic blob outline: a radius-modulated 28-gon.
inline std::vector<std::pair<double, double>> blob_polygon(double cx, double cy, double radius,
                                                           rng::Stream& st) {
    const int n = 28;
    const double p2 = st.uniform(0.0, 6.28318530717958647692);
    const double p3 = st.uniform(0.0, 6.28318530717958647692);
    const double a2 = st.uniform(0.08, 0.18);
    const double a3 = st.uniform(0.05, 0.12);
    std::vector<std::pair<double, double>> pts;
    pts.reserve(n);
    for (int k = 0; k < n; ++k) {
        const double phi = 6.28318530717958647692 * k / n;
        const double r = radius * (1.0 + a2 * std::sin(2 * phi + p2) + a3 * std::sin(3 * phi + p3) +
                                   0.04 * (st.uniform() - 0.5));
        pts.emplace_back(cx + r * std::cos(phi), cy + r * std::sin(phi));
    }
    return pts;
}

inline bool disk_inside_material(const std::vector<std::uint8_t>& material, int width, int height,
                                 double cx, double cy, double radius, std::uint8_t wanted) {
    auto probe = [&](double x, double y) {
        const int xi = static_cast<int>(std::lround(x));
        const int yi = static_cast<int>(std::lround(y));
        if (xi < 0 || xi >= width || yi < 0 || yi >= height) return false;
        return material[static_cast<std::size_t>(yi) * width + xi] == wanted;
    };
    if (!probe(cx, cy)) return false;
    for (int k = 0; k < 12; ++k) {
        const double a = 6.28318530717958647692 * k / 12;
        if (!probe(cx + radius * std::cos(a), cy + radius * std::sin(a))) return false;
    }
    return true;
}

} // namespace synth_detail

struct SlideRenderParams {
    int width = 1536;
    int height = 1536;
    int borderline_hole_count = 2;
    double borderline_hole_radius = 4.0;
};

// Renders one slide deterministically from (seed, slide_index). The sieve
// texture (dark epithelial blobs punctured by a lattice of round lumina)
// carries the positive label; solid blobs carry no holes; borderline blobs
// carry a few holes below the sieve size criterion.
inline RenderedSlide render_slide(LesionClass slide_class, bool is_positive,
                                  const SlideRenderParams& params, std::uint64_t seed,
                                  std::uint64_t slide_index) {
    namespace sd = synth_detail;
    const int W = params.width, H = params.height;
    auto st = rng::stream(seed, "synth/slide", slide_index);

    RenderedSlide out;
    out.spec.width = W;
    out.spec.height = H;
    out.spec.texture_seed = rng::derive_key(seed, "synth/slide", slide_index);
    out.image = Image(W, H);
    out.annotation = Mask(W, H, 0);

    std::vector<std::uint8_t> material(static_cast<std::size_t>(W) * H, sd::kBackground);

    // Tissue strips: 2-3 rotated ellipses standing in for biopsy cores.
    const int n_regions = 2 + static_cast<int>(st.uniform_int(2));
    struct Region {
        double cx, cy, a, b, cosq, sinq;
    };
    std::vector<Region> regions;
    for (int r = 0; r < n_regions; ++r) {
        Region reg;
        reg.a = st.uniform(0.30, 0.42) * std::min(W, H);
        reg.b = st.uniform(0.10, 0.16) * std::min(W, H);
        reg.cx = st.uniform(0.28, 0.72) * W;
        reg.cy = (r + 0.5 + st.uniform(-0.15, 0.15)) * H / n_regions;
        const double theta = st.uniform(-0.45, 0.45);
        reg.cosq = std::cos(theta);
        reg.sinq = std::sin(theta);
        regions.push_back(reg);
        const int x0 = std::max(0, static_cast<int>(reg.cx - reg.a - 2));
        const int x1 = std::min(W - 1, static_cast<int>(reg.cx + reg.a + 2));
        const int y0 = std::max(0, static_cast<int>(reg.cy - reg.a - 2));
        const int y1 = std::min(H - 1, static_cast<int>(reg.cy + reg.a + 2));
        for (int y = y0; y <= y1; ++y) {
            for (int x = x0; x <= x1; ++x) {
                const double ux = (x - reg.cx) * reg.cosq + (y - reg.cy) * reg.sinq;
                const double uy = -(x - reg.cx) * reg.sinq + (y - reg.cy) * reg.cosq;
                const double d = (ux * ux) / (reg.a * reg.a) + (uy * uy) / (reg.b * reg.b);
                if (d <= 1.0) material[static_cast<std::size_t>(y) * W + x] = sd::kTissue;
            }
        }
    }

    // Lesion blobs. Positive slides get 1-3 sieve blobs, borderline slides
    // 2-3 borderline blobs; the rest are solid.
    int n_special = 0;
    if (is_positive) n_special = 1 + static_cast<int>(st.uniform_int(3));
    else if (slide_class == LesionClass::Borderline) n_special = 2 + static_cast<int>(st.uniform_int(2));

    const int n_blobs = std::max(n_special + 2, 4 + static_cast<int>(st.uniform_int(4)));
    std::vector<int> blob_order(n_blobs);
    for (int i = 0; i < n_blobs; ++i) blob_order[i] = i;
    st.shuffle(blob_order);

    struct PlacedBlob {
        LesionClass cls;
        std::vector<std::pair<double, double>> poly;
        double cx, cy, radius;
    };
    std::vector<PlacedBlob> blobs;

    const double scale = std::clamp(std::min(W, H) / 1536.0, 0.5, 1.0);
    for (int b = 0; b < n_blobs; ++b) {
        LesionClass cls = LesionClass::Solid;
        if (blob_order[b] < n_special)
            cls = is_positive ? LesionClass::Sieve : LesionClass::Borderline;

        double radius = st.uniform(48.0, 92.0) * scale;
        bool placed = false;
        for (int attempt = 0; attempt < 240 && !placed; ++attempt) {
            if (attempt > 0 && attempt % 30 == 0) radius *= 0.9;
            const auto& reg = regions[st.uniform_int(regions.size())];
            const double u = st.uniform(-0.82, 0.82) * reg.a;
            const double v = st.uniform(-0.55, 0.55) * reg.b;
            const double cx = reg.cx + u * reg.cosq - v * reg.sinq;
            const double cy = reg.cy + u * reg.sinq + v * reg.cosq;
            const double extent = 1.30 * radius;
            if (cx - extent < 1 || cx + extent >= W - 1 || cy - extent < 1 || cy + extent >= H - 1)
                continue;
            if (!sd::disk_inside_material(material, W, H, cx, cy, extent, sd::kTissue)) continue;
            bool clash = false;
            for (const auto& other : blobs) {
                const double d = std::hypot(cx - other.cx, cy - other.cy);
                if (d < 1.08 * (radius + other.radius)) {
                    clash = true;
                    break;
                }
            }
            if (clash) continue;
            PlacedBlob pb;
            pb.cls = cls;
            pb.cx = cx;
            pb.cy = cy;
            pb.radius = radius;
            pb.poly = sd::blob_polygon(cx, cy, radius, st);
            blobs.push_back(std::move(pb));
            placed = true;
        }
        if (!placed && cls != LesionClass::Solid)
            throw InvariantError("synth: failed to place a lesion blob (slide " +
                                 std::to_string(slide_index) + ")");
    }

    for (const auto& pb : blobs) {
        sd::fill_polygon(pb.poly, W, H, [&](int x, int y) {
            material[static_cast<std::size_t>(y) * W + x] = sd::kBlob;
        });
        if (pb.cls == LesionClass::Sieve) {
            sd::fill_polygon(pb.poly, W, H, [&](int x, int y) { out.annotation.at(x, y) = 255; });
        }
        LesionPolygon lp;
        lp.cls = pb.cls;
        lp.points = pb.poly;
        for (const auto& [px, py] : lp.points)
            if (px < 0 || px >= W || py < 0 || py >= H)
                throw InvariantError("synth: lesion polygon out of bounds");
        out.spec.lesion_polygons.push_back(std::move(lp));
    }

    // Lumina. Sieve blobs: jittered lattice of round holes; borderline
    // blobs: a couple of holes below the sieve size criterion.
    for (const auto& pb : blobs) {
        if (pb.cls == LesionClass::Sieve) {
            auto punch = [&](double hx, double hy, double rho) {
                if (!sd::disk_inside_material(material, W, H, hx, hy, rho + 2.5, sd::kBlob))
                    return false;
                const int rr = static_cast<int>(rho) + 1;
                for (int y = static_cast<int>(hy) - rr; y <= static_cast<int>(hy) + rr; ++y)
                    for (int x = static_cast<int>(hx) - rr; x <= static_cast<int>(hx) + rr; ++x)
                        if (std::hypot(x - hx, y - hy) <= rho)
                            material[static_cast<std::size_t>(y) * W + x] = sd::kHole;
                return true;
            };
            int holes = 0;
            const double rho_hi = std::min(9.0, pb.radius / 4.5);
            const double rho_lo = std::min(6.0, 0.75 * rho_hi);
            const double spacing = st.uniform(2.4, 2.8) * rho_hi;
            const int x0 = static_cast<int>(pb.cx - pb.radius * 1.3);
            const int y0 = static_cast<int>(pb.cy - pb.radius * 1.3);
            const int cells = static_cast<int>(2.6 * pb.radius / spacing) + 1;
            for (int gy = 0; gy < cells; ++gy) {
                for (int gx = 0; gx < cells; ++gx) {
                    const double hx = x0 + (gx + 0.5) * spacing + st.uniform(-3.0, 3.0);
                    const double hy = y0 + (gy + 0.5) * spacing + st.uniform(-3.0, 3.0);
                    holes += punch(hx, hy, st.uniform(rho_lo, rho_hi)) ? 1 : 0;
                }
            }
            // Small blobs can starve the lattice; top up so a sieve blob
            // never degenerates into a borderline-looking one.
            for (int attempt = 0; holes < 5 && attempt < 80; ++attempt) {
                const double ang = st.uniform(0.0, 6.28318530717958647692);
                const double dist = st.uniform(0.0, 0.55) * pb.radius;
                holes += punch(pb.cx + dist * std::cos(ang), pb.cy + dist * std::sin(ang),
                               st.uniform(0.8 * rho_lo, rho_lo))
                             ? 1
                             : 0;
            }
        } else if (pb.cls == LesionClass::Borderline) {
            for (int k = 0; k < params.borderline_hole_count; ++k) {
                const double ang = st.uniform(0.0, 6.28318530717958647692);
                const double dist = st.uniform(0.0, 0.45) * pb.radius;
                const double hx = pb.cx + dist * std::cos(ang);
                const double hy = pb.cy + dist * std::sin(ang);
                const double rho = params.borderline_hole_radius;
                if (!sd::disk_inside_material(material, W, H, hx, hy, rho + 2.5, sd::kBlob)) continue;
                const int rr = static_cast<int>(rho) + 1;
                for (int y = static_cast<int>(hy) - rr; y <= static_cast<int>(hy) + rr; ++y)
                    for (int x = static_cast<int>(hx) - rr; x <= static_cast<int>(hx) + rr; ++x)
                        if (std::hypot(x - hx, y - hy) <= rho)
                            material[static_cast<std::size_t>(y) * W + x] = sd::kHole;
            }
        }
    }

    // Colour pass. Low-frequency mottling is separable, so precompute the
    // row/column factors.
    sd::Palette pal;
    const double mphase1 = st.uniform(0.0, 6.28318530717958647692);
    const double mphase2 = st.uniform(0.0, 6.28318530717958647692);
    std::vector<double> mot_col(W), mot_row(H);
    for (int x = 0; x < W; ++x) mot_col[x] = std::sin(0.013 * x + mphase1);
    for (int y = 0; y < H; ++y) mot_row[y] = std::sin(0.017 * y + mphase2);

    std::size_t tissue_px = 0;
    std::uint8_t* px = out.image.px.data();
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            const std::uint8_t m = material[static_cast<std::size_t>(y) * W + x];
            const std::array<int, 3>* base = &pal.background;
            double noise_amp = 1.2, mot = 0.0;
            switch (m) {
                case sd::kTissue:
                    base = &pal.tissue;
                    noise_amp = 3.5;
                    mot = 6.0 * mot_col[x] * mot_row[y];
                    break;
                case sd::kBlob:
                    base = &pal.blob;
                    noise_amp = 4.0;
                    break;
                case sd::kHole:
                    base = &pal.hole;
                    noise_amp = 3.0;
                    break;
                default: break;
            }
            tissue_px += (m != sd::kBackground);
            const double n = sd::tri_noise(st, noise_amp) + mot;
            for (int c = 0; c < 3; ++c) {
                const long v = std::lround((*base)[c] + n);
                *px++ = static_cast<std::uint8_t>(std::clamp(v, 0L, 255L));
            }
        }
    }
    out.tissue_fraction = static_cast<double>(tissue_px) / (static_cast<double>(W) * H);

    // Nuclei speckle over plain tissue.
    const std::size_t n_dots = tissue_px / 650;
    for (std::size_t d = 0, attempts = 0; d < n_dots && attempts < 12 * n_dots; ++attempts) {
        const int x = static_cast<int>(st.uniform_int(W));
        const int y = static_cast<int>(st.uniform_int(H));
        if (material[static_cast<std::size_t>(y) * W + x] != sd::kTissue) continue;
        const int r = 1 + static_cast<int>(st.uniform_int(2));
        for (int yy = std::max(0, y - r); yy <= std::min(H - 1, y + r); ++yy)
            for (int xx = std::max(0, x - r); xx <= std::min(W - 1, x + r); ++xx)
                if ((xx - x) * (xx - x) + (yy - y) * (yy - y) <= r * r)
                    for (int c = 0; c < 3; ++c)
                        out.image.at(xx, yy, c) = static_cast<std::uint8_t>(pal.nucleus[c]);
        ++d;
    }

    // Label consistency check: annotation mass iff the slide is positive.
    const bool has_annotation = out.annotation.count_nonzero() > 0;
    if (has_annotation != is_positive)
        throw InvariantError("synth: annotation/label mismatch on slide " +
                             std::to_string(slide_index));
    return out;
}

// ---------------------------------------------------------------------------
// Cohort planning
// ---------------------------------------------------------------------------

struct CohortConfig {
    int n_slides = 0;
    double positive_rate = 0.24;
    double borderline_rate = 0.0;
    Role role = Role::Train;
    std::string cohort_id = "synthA";
    std::string id_prefix = "tr"; // slide/patient id prefix
    SlideRenderParams render;
};

struct SlidePlan {
    std::string slide_id;
    std::string patient_id;
    LesionClass slide_class = LesionClass::Solid; // Sieve => label 1
    std::uint64_t slide_index = 0;                // index into the cohort's RNG space
};

// Deterministic class assignment with exact counts:
// round(positive_rate * n) positives, round(borderline_rate * n) borderline
// among the negatives. Roughly every seventh slide shares its patient with
// the previous one so patient grouping is exercised.
inline std::vector<SlidePlan> plan_cohort(const CohortConfig& cfg, std::uint64_t seed) {
    if (cfg.n_slides < 1) throw InvariantError("plan_cohort: n_slides must be >= 1");
    if (cfg.positive_rate < 0 || cfg.positive_rate > 1 || cfg.borderline_rate < 0 ||
        cfg.borderline_rate > 1)
        throw InvariantError("plan_cohort: rates must be in [0,1]");

    const int n = cfg.n_slides;
    const int n_pos = static_cast<int>(std::lround(cfg.positive_rate * n));
    const int n_bord = std::min(n - n_pos, static_cast<int>(std::lround(cfg.borderline_rate * n)));

    std::vector<LesionClass> classes(static_cast<std::size_t>(n), LesionClass::Solid);
    for (int i = 0; i < n_pos; ++i) classes[i] = LesionClass::Sieve;
    for (int i = n_pos; i < n_pos + n_bord; ++i) classes[i] = LesionClass::Borderline;
    auto st = rng::stream(seed, "synth/classes", rng::hash_label(cfg.cohort_id));
    st.shuffle(classes);

    std::vector<SlidePlan> plans;
    plans.reserve(classes.size());
    int patient_counter = -1;
    char buf[64];
    for (int i = 0; i < n; ++i) {
        SlidePlan p;
        std::snprintf(buf, sizeof(buf), "%sS%04d", cfg.id_prefix.c_str(), i);
        p.slide_id = buf;
        if (!(i % 7 == 6 && i > 0)) ++patient_counter;
        std::snprintf(buf, sizeof(buf), "%sP%04d", cfg.id_prefix.c_str(), patient_counter);
        p.patient_id = buf;
        p.slide_class = classes[static_cast<std::size_t>(i)];
        p.slide_index = rng::derive_key(rng::hash_label(cfg.cohort_id), "slide-index",
                                        static_cast<std::uint64_t>(i));
        plans.push_back(std::move(p));
    }
    return plans;
}

inline RenderedSlide render_slide(const SlidePlan& plan, const SlideRenderParams& params,
                                  std::uint64_t seed) {
    return render_slide(plan.slide_class, plan.slide_class == LesionClass::Sieve, params, seed,
                        plan.slide_index);
}

// In-memory cohort generation for small corpora (tests). The pipeline stage
// streams slides to disk instead but follows exactly this construction.
struct GeneratedCohort {
    DatasetManifest manifest;
    std::vector<RenderedSlide> slides;              // parallel to manifest.slides
    std::vector<std::pair<std::string, std::pair<int, int>>> rescan_offsets; // scan_id -> (dx,dy)
    std::vector<std::vector<RescanResult>> rescans; // parallel to slides
};

inline GeneratedCohort generate_cohort(const CohortConfig& cfg,
                                       const std::vector<ScannerProfile>& scanners,
                                       std::uint64_t seed, int rescan_count = 0,
                                       int rescan_max_shift = 32) {
    if (scanners.empty()) throw InvariantError("generate_cohort: need at least one scanner");
    GeneratedCohort out;
    const auto plans = plan_cohort(cfg, seed);
    for (const auto& plan : plans) {
        RenderedSlide rendered = render_slide(plan, cfg.render, seed);

        SlideRecord rec;
        rec.slide_id = plan.slide_id;
        rec.patient_id = plan.patient_id;
        rec.cohort_id = cfg.cohort_id;
        rec.role = cfg.role;
        rec.label = plan.slide_class == LesionClass::Sieve ? 1 : 0;
        rec.borderline = plan.slide_class == LesionClass::Borderline;

        ScanRecord primary;
        primary.scan_id = plan.slide_id + "_sc0";
        primary.scanner_id = scanners[0].scanner_id;
        primary.is_primary = true;
        primary.pixel_spacing = 1.0;
        rec.scans.push_back(primary);

        std::vector<RescanResult> slide_rescans;
        for (int r = 0; r < rescan_count && r + 1 < static_cast<int>(scanners.size()); ++r) {
            const auto& prof = scanners[static_cast<std::size_t>(r) + 1];
            RescanResult rr = simulate_rescan(
                rendered.image, prof, rng::derive_key(seed, "synth/rescan", plan.slide_index),
                rescan_max_shift);
            ScanRecord scan;
            scan.scan_id = plan.slide_id + "_sc" + std::to_string(r + 1);
            scan.scanner_id = prof.scanner_id;
            scan.is_primary = false;
            scan.pixel_spacing = 1.0;
            rec.scans.push_back(scan);
            out.rescan_offsets.emplace_back(scan.scan_id, std::make_pair(rr.dx, rr.dy));
            slide_rescans.push_back(std::move(rr));
        }

        out.manifest.slides.push_back(std::move(rec));
        out.slides.push_back(std::move(rendered));
        out.rescans.push_back(std::move(slide_rescans));
    }
    validate_manifest(out.manifest);
    return out;
}

// Default virtual scanner park: one reference instrument plus three with
// mild gamma/gain/noise differences.
inline std::vector<ScannerProfile> default_scanners() {
    return {
        {"scanner00", 1.00, {1.00, 1.00, 1.00}, 0.000, 0},
        {"scanner01", 0.94, {1.04, 0.98, 1.00}, 0.006, 1},
        {"scanner02", 1.08, {0.97, 1.02, 1.05}, 0.008, 2},
        {"scanner03", 1.00, {1.05, 1.04, 0.96}, 0.010, 3},
    };
}

} // namespace crib
