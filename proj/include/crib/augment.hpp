#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>

#include "crib/image.hpp"
#include "crib/rng.hpp"

namespace crib {

inline Image flip_h(const Image& img) {
    Image out(img.width, img.height);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) out.at(x, y, c) = img.at(img.width - 1 - x, y, c);
    return out;
}

inline Image flip_v(const Image& img) {
    Image out(img.width, img.height);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) out.at(x, y, c) = img.at(x, img.height - 1 - y, c);
    return out;
}

// k counter-clockwise quarter turns; square images only.
inline Image rot90(const Image& img, int k) {
    k = ((k % 4) + 4) % 4;
    if (k == 0) return img;
    Image out(img.width, img.height);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            int sx = x, sy = y;
            switch (k) {
                case 1: sx = img.width - 1 - y; sy = x; break;
                case 2: sx = img.width - 1 - x; sy = img.height - 1 - y; break;
                case 3: sx = y; sy = img.height - 1 - x; break;
            }
            for (int c = 0; c < 3; ++c) out.at(x, y, c) = img.at(sx, sy, c);
        }
    return out;
}

inline Image resize_bilinear(const Image& img, int w, int h) {
    Image out(w, h);
    const double sx = static_cast<double>(img.width) / w;
    const double sy = static_cast<double>(img.height) / h;
    for (int y = 0; y < h; ++y) {
        const double fy = (y + 0.5) * sy - 0.5;
        const int y0 = std::clamp(static_cast<int>(std::floor(fy)), 0, img.height - 1);
        const int y1 = std::min(y0 + 1, img.height - 1);
        const double wy = std::clamp(fy - y0, 0.0, 1.0);
        for (int x = 0; x < w; ++x) {
            const double fx = (x + 0.5) * sx - 0.5;
            const int x0 = std::clamp(static_cast<int>(std::floor(fx)), 0, img.width - 1);
            const int x1 = std::min(x0 + 1, img.width - 1);
            const double wx = std::clamp(fx - x0, 0.0, 1.0);
            for (int c = 0; c < 3; ++c) {
                const double top = (1 - wx) * img.at(x0, y0, c) + wx * img.at(x1, y0, c);
                const double bot = (1 - wx) * img.at(x0, y1, c) + wx * img.at(x1, y1, c);
                out.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(std::lround((1 - wy) * top + wy * bot), 0L, 255L));
            }
        }
    }
    return out;
}

// --- Test-time augmentation --------------------------------------------------

// Non-destructive dihedral transform: flips plus quarter turns.
struct TtaView {
    bool flip_horizontal = false;
    bool flip_vertical = false;
    int quarter_turns = 0;
};

inline Image apply_view(const Image& img, const TtaView& view) {
    Image out = img;
    if (view.flip_horizontal) out = flip_h(out);
    if (view.flip_vertical) out = flip_v(out);
    if (view.quarter_turns) out = rot90(out, view.quarter_turns);
    return out;
}

// View 0 is always the identity, so n_views = 1 degenerates to plain
// inference; the rest are sampled from the stream key.
inline std::vector<TtaView> make_tta_views(int n_views, std::uint64_t key) {
    std::vector<TtaView> views;
    views.reserve(static_cast<std::size_t>(n_views));
    views.push_back({});
    auto st = rng::Stream(key);
    for (int v = 1; v < n_views; ++v) {
        TtaView view;
        view.flip_horizontal = st.bernoulli(0.5);
        view.flip_vertical = st.bernoulli(0.5);
        view.quarter_turns = static_cast<int>(st.uniform_int(4));
        views.push_back(view);
    }
    return views;
}

// --- Train-time augmentation --------------------------------------------------

struct AugmentOptions {
    bool geometric = true;   // crop, flips, quarter turns
    bool photometric = true; // gamma, colour jitter, greyscale, blur/sharpen
    bool noise = true;       // additive Gaussian + multiplicative jitter
    bool jpeg = true;        // quality-75 encode/decode round trip
};

namespace augment_detail {

inline Image box_blur3(const Image& img) {
    Image out(img.width, img.height);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) {
                int acc = 0, n = 0;
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int xx = x + dx, yy = y + dy;
                        if (xx < 0 || xx >= img.width || yy < 0 || yy >= img.height) continue;
                        acc += img.at(xx, yy, c);
                        ++n;
                    }
                out.at(x, y, c) = static_cast<std::uint8_t>(acc / n);
            }
    return out;
}

} // namespace augment_detail

// One randomly augmented view of a training patch. Every draw comes from
// the caller's stream, so the same stream state reproduces the same view.
inline Image augment_patch(const Image& patch, const AugmentOptions& opts, rng::Stream& st) {
    Image img = patch;

    if (opts.geometric) {
        if (st.bernoulli(0.5)) {
            // Random crop back to full size.
            const double scale = st.uniform(0.8, 1.0);
            const int cw = std::max(8, static_cast<int>(img.width * scale));
            const int ch = std::max(8, static_cast<int>(img.height * scale));
            const int x0 = static_cast<int>(st.uniform_int(static_cast<std::uint64_t>(img.width - cw + 1)));
            const int y0 = static_cast<int>(st.uniform_int(static_cast<std::uint64_t>(img.height - ch + 1)));
            img = resize_bilinear(crop(img, x0, y0, cw, ch), patch.width, patch.height);
        }
        if (st.bernoulli(0.5)) img = flip_h(img);
        if (st.bernoulli(0.5)) img = flip_v(img);
        const int k = static_cast<int>(st.uniform_int(4));
        if (k) img = rot90(img, k);
    }

    if (opts.photometric) {
        if (st.bernoulli(0.7)) {
            const double gamma = st.uniform(0.8, 1.25);
            const double gains[3] = {st.uniform(0.92, 1.08), st.uniform(0.92, 1.08),
                                     st.uniform(0.92, 1.08)};
            const double brightness = st.uniform(-10.0, 10.0);
            std::uint8_t lut[3][256];
            for (int c = 0; c < 3; ++c)
                for (int v = 0; v < 256; ++v)
                    lut[c][v] = static_cast<std::uint8_t>(std::clamp(
                        std::lround(255.0 * gains[c] * std::pow(v / 255.0, gamma) + brightness), 0L,
                        255L));
            for (std::size_t i = 0; i < img.px.size(); i += 3)
                for (int c = 0; c < 3; ++c) img.px[i + c] = lut[c][img.px[i + c]];
        }
        if (st.bernoulli(0.08)) {
            for (std::size_t i = 0; i < img.px.size(); i += 3) {
                const auto g = static_cast<std::uint8_t>(luma(img.px[i], img.px[i + 1], img.px[i + 2]));
                img.px[i] = img.px[i + 1] = img.px[i + 2] = g;
            }
        }
        if (st.bernoulli(0.2)) {
            const Image blurred = augment_detail::box_blur3(img);
            if (st.bernoulli(0.5)) {
                img = blurred;
            } else {
                // Unsharp mask: img + (img - blurred).
                for (std::size_t i = 0; i < img.px.size(); ++i) {
                    const int v = 2 * img.px[i] - blurred.px[i];
                    img.px[i] = static_cast<std::uint8_t>(std::clamp(v, 0, 255));
                }
            }
        }
    }

    if (opts.noise) {
        if (st.bernoulli(0.5)) {
            const double sigma = st.uniform(1.0, 6.0);
            for (std::size_t i = 0; i < img.px.size(); i += 3) {
                const double n = st.normal() * sigma;
                for (int c = 0; c < 3; ++c)
                    img.px[i + c] = static_cast<std::uint8_t>(
                        std::clamp(std::lround(img.px[i + c] + n), 0L, 255L));
            }
        }
        if (st.bernoulli(0.3)) {
            for (std::size_t i = 0; i < img.px.size(); i += 3) {
                const double m = 1.0 + 0.04 * (st.uniform() - 0.5);
                for (int c = 0; c < 3; ++c)
                    img.px[i + c] = static_cast<std::uint8_t>(
                        std::clamp(std::lround(img.px[i + c] * m), 0L, 255L));
            }
        }
    }

    if (opts.jpeg && st.bernoulli(0.25)) img = decode_jpeg(encode_jpeg(img, 75));

    return img;
}

} // namespace crib
